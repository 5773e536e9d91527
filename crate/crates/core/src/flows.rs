//! Flow families: the center of mass flow driven by a vector field and
//! the district to district flows.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SamplerError;
use crate::graph::Point;
use crate::model::Model;
use crate::msmh::{
    msmh_step, ExtendedState, FlowFamily, FlowLabel, Momentum, RatioVariant, StepEvent,
};
use crate::neighborhood::{neighborhood, Move};
use crate::plan::{Flip, Plan};

/// Velocity field used to orient center of mass motion.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VectorField {
    /// Rotation about `center`. With `unit_speed` the field is
    /// `(-sin a, cos a)`, otherwise `(-r sin a, r cos a)`. Counter-clockwise
    /// unless `clockwise`. Zero at the center.
    Vortex {
        center: Point,
        #[serde(default = "yes")]
        unit_speed: bool,
        #[serde(default)]
        clockwise: bool,
    },
    Constant {
        direction: Point,
    },
    #[serde(skip)]
    Custom(Arc<dyn Fn(Point) -> Point + Send + Sync>),
}

fn yes() -> bool {
    true
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorField::Vortex {
                center,
                unit_speed,
                clockwise,
            } => f
                .debug_struct("Vortex")
                .field("center", center)
                .field("unit_speed", unit_speed)
                .field("clockwise", clockwise)
                .finish(),
            VectorField::Constant { direction } => {
                f.debug_struct("Constant").field("direction", direction).finish()
            }
            VectorField::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl VectorField {
    /// Unit-speed counter-clockwise vortex about `center`.
    pub fn vortex(center: Point) -> Self {
        VectorField::Vortex {
            center,
            unit_speed: true,
            clockwise: false,
        }
    }

    pub fn custom(f: impl Fn(Point) -> Point + Send + Sync + 'static) -> Self {
        VectorField::Custom(Arc::new(f))
    }

    pub fn eval(&self, p: Point) -> Point {
        match self {
            VectorField::Vortex {
                center,
                unit_speed,
                clockwise,
            } => {
                let v = vortex_field(p, *center, *unit_speed);
                if *clockwise {
                    [-v[0], -v[1]]
                } else {
                    v
                }
            }
            VectorField::Constant { direction } => *direction,
            VectorField::Custom(f) => f(p),
        }
    }
}

/// Counter-clockwise rotation about `center`; zero at the center.
pub fn vortex_field(p: Point, center: Point, unit_speed: bool) -> Point {
    let (x, y) = (p[0] - center[0], p[1] - center[1]);
    let r = x.hypot(y);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    if unit_speed {
        [-y / r, x / r]
    } else {
        [-y, x]
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Orientation of a single move under `field`: the sign of the summed
/// midpoint work `v((c + c') / 2) . (c' - c)` over the two districts
/// whose centroids change. Exact ties are broken by a salted hash of the
/// two plan fingerprints, antisymmetric under reversal.
pub fn orientation(
    model: &Model,
    plan: &Plan,
    mv: &Move,
    field: &VectorField,
    tie_salt: u64,
) -> Momentum {
    let (s, scale) = midpoint_work(model, plan, mv, field);
    if s.abs() > 1e-12 * scale {
        return if s > 0.0 { Momentum::Pos } else { Momentum::Neg };
    }
    let here = plan.fingerprint();
    let there = plan.fingerprint_after(mv.vertex(), mv.to());
    if here == there {
        return if mv.from < mv.to {
            Momentum::Pos
        } else {
            Momentum::Neg
        };
    }
    let (lo, hi) = (here.min(there), here.max(there));
    let bit = mix64(tie_salt ^ lo ^ hi.rotate_left(23)) & 1 == 1;
    if bit == (here < there) {
        Momentum::Pos
    } else {
        Momentum::Neg
    }
}

fn midpoint_work(model: &Model, plan: &Plan, mv: &Move, field: &VectorField) -> (f64, f64) {
    let v = mv.vertex();
    let a = model.graph.area(v);
    let phi = model.graph.centroid(v);
    let mut total = 0.0;
    let mut scale = 0.0;
    for (district, sign) in [(mv.from(), -1.0), (mv.to(), 1.0)] {
        let st = plan.stats(district);
        let old = [st.moment[0] / st.area, st.moment[1] / st.area];
        let area = st.area + sign * a;
        let new = [
            (st.moment[0] + sign * a * phi[0]) / area,
            (st.moment[1] + sign * a * phi[1]) / area,
        ];
        let f = field.eval([(old[0] + new[0]) / 2.0, (old[1] + new[1]) / 2.0]);
        let term = f[0] * (new[0] - old[0]) + f[1] * (new[1] - old[1]);
        total += term;
        scale += term.abs();
    }
    (total, scale)
}

/// Single flow oriented by center of mass motion along a vector field.
#[derive(Clone, Debug)]
pub struct ComFlow {
    pub field: VectorField,
    pub tie_salt: u64,
}

impl ComFlow {
    pub fn new(field: VectorField) -> Self {
        ComFlow {
            field,
            tie_salt: 0x5eed_c0ff_ee15_900d,
        }
    }
}

impl FlowFamily for ComFlow {
    fn num_flows(&self) -> usize {
        1
    }

    fn classify(&self, model: &Model, plan: &Plan, mv: &Move) -> FlowLabel {
        FlowLabel {
            flow: 0,
            dir: orientation(model, plan, mv, &self.field, self.tie_salt),
        }
    }
}

/// One flow per unordered district pair `(i, j)`, `i < j`. Moving a vertex
/// into `i` is the positive direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct D2dFlow {
    pub n_districts: usize,
}

impl D2dFlow {
    pub fn new(n_districts: usize) -> Self {
        D2dFlow { n_districts }
    }

    /// Flow index of the pair `{i, j}`.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = (i.min(j), i.max(j));
        let n = self.n_districts;
        i * n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Inverse of [`pair_index`](Self::pair_index).
    pub fn pair_of(&self, index: usize) -> (usize, usize) {
        let n = self.n_districts;
        let mut rest = index;
        for i in 0..n {
            let row = n - i - 1;
            if rest < row {
                return (i, i + 1 + rest);
            }
            rest -= row;
        }
        panic!("flow index {index} out of range for {n} districts")
    }
}

impl FlowFamily for D2dFlow {
    fn num_flows(&self) -> usize {
        self.n_districts * (self.n_districts.saturating_sub(1)) / 2
    }

    fn classify(&self, _model: &Model, _plan: &Plan, mv: &Move) -> FlowLabel {
        let (from, to) = (mv.from(), mv.to());
        FlowLabel {
            flow: self.pair_index(from, to),
            dir: if to < from {
                Momentum::Pos
            } else {
                Momentum::Neg
            },
        }
    }

    fn resamples_on_activation(&self) -> bool {
        true
    }
}

/// Members of `N_{(i,j)}^dir(plan)` as plans with a realizing flip.
pub fn d2d_oriented_neighborhoods(
    model: &Model,
    plan: &Plan,
    pair: (usize, usize),
    dir: Momentum,
) -> Vec<(Plan, Flip)> {
    let family = D2dFlow::new(model.n_districts);
    let flow = family.pair_index(pair.0, pair.1);
    neighborhood(model, plan)
        .moves
        .iter()
        .filter(|m| family.classify(model, plan, m) == FlowLabel { flow, dir })
        .map(|m| {
            let mut next = plan.clone();
            next.move_vertex(&model.graph, m.vertex(), m.to());
            (next, m.flip())
        })
        .collect()
}

/// One center of mass flow step on `state`.
pub fn com_flow_step<R: Rng + ?Sized>(
    model: &Model,
    state: &mut ExtendedState,
    field: &VectorField,
    beta: f64,
    rng: &mut R,
) -> Result<StepEvent, SamplerError> {
    msmh_step(
        &ComFlow::new(field.clone()),
        model,
        state,
        beta,
        RatioVariant::Full,
        rng,
    )
}

/// One district to district flow step on `state`.
pub fn d2d_flow_step<R: Rng + ?Sized>(
    model: &Model,
    state: &mut ExtendedState,
    beta: f64,
    variant: RatioVariant,
    rng: &mut R,
) -> Result<StepEvent, SamplerError> {
    msmh_step(&D2dFlow::new(model.n_districts), model, state, beta, variant, rng)
}
