//! Mixed skew Metropolis-Hastings on the extended space of a plan and a
//! vector of momenta, one per flow.
//!
//! A flow family splits every neighborhood `N(plan)` into oriented parts
//! `N_i^+` and `N_i^-`. A step picks a flow `i` with probability
//! `w_i(plan)`, proposes inside `N_i^{theta_i}` from the tempered law and
//! accepts with
//!
//! ```text
//! r = w_i(x') exp(-J') Q_i(x' -> x) / (w_i(x) exp(-J) Q_i(x -> x'))
//! ```
//!
//! where `Q_i(x -> x') = exp(-beta J') / Z_i^theta(x)`. A rejection flips
//! `theta_i`. The default weights are `w_i = (Z_i^+ + Z_i^-) / Z`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SamplerError;
use crate::model::Model;
use crate::neighborhood::{Move, Neighborhood, NeighborhoodBuilder};
use crate::plan::Plan;
use crate::snf::sample_tempered_index;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Momentum {
    #[serde(rename = "+1")]
    Pos,
    #[serde(rename = "-1")]
    Neg,
}

impl Momentum {
    #[inline]
    pub fn flipped(self) -> Self {
        match self {
            Momentum::Pos => Momentum::Neg,
            Momentum::Neg => Momentum::Pos,
        }
    }

    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Momentum::Pos => 1,
            Momentum::Neg => -1,
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Momentum::Pos => 0,
            Momentum::Neg => 1,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.gen::<bool>() {
            Momentum::Pos
        } else {
            Momentum::Neg
        }
    }
}

/// Flow index and orientation of a move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowLabel {
    pub flow: usize,
    pub dir: Momentum,
}

/// Partition of single-node-flip neighborhoods into oriented flows.
///
/// `classify` must be antisymmetric: if a move from `x` to `x'` is labelled
/// `(i, theta)`, the reverse move from `x'` must be labelled `(i, -theta)`.
pub trait FlowFamily {
    fn num_flows(&self) -> usize;

    fn classify(&self, model: &Model, plan: &Plan, mv: &Move) -> FlowLabel;

    /// Flow selection weights at `plan`, written into `out` (length
    /// `num_flows`). The default is `(Z_i^+ + Z_i^-) / Z`.
    fn weights(&self, _model: &Model, _plan: &Plan, view: &FlowView, out: &mut Vec<f64>) {
        view.generic_weights_into(out);
    }

    /// Whether flows that become active after an accepted move receive a
    /// fresh uniform momentum.
    fn resamples_on_activation(&self) -> bool {
        false
    }
}

/// A neighborhood together with the flow label of each move and the
/// oriented partition functions.
#[derive(Clone, Debug, Default)]
pub struct FlowView {
    pub nbhd: Neighborhood,
    pub labels: Vec<FlowLabel>,
    beta: f64,
    shift: f64,
    sums: Vec<[f64; 2]>,
    total: f64,
}

impl FlowView {
    /// Classifies `nbhd`, the neighborhood of `plan`.
    pub fn new<F: FlowFamily + ?Sized>(
        family: &F,
        model: &Model,
        plan: &Plan,
        nbhd: Neighborhood,
        beta: f64,
    ) -> Self {
        let mut view = FlowView {
            nbhd,
            ..FlowView::default()
        };
        view.classify(family, model, plan, beta);
        view
    }

    /// Recomputes labels and partition functions from `self.nbhd`.
    pub fn classify<F: FlowFamily + ?Sized>(
        &mut self,
        family: &F,
        model: &Model,
        plan: &Plan,
        beta: f64,
    ) {
        self.beta = beta;
        self.labels.clear();
        self.labels
            .extend(self.nbhd.moves.iter().map(|m| family.classify(model, plan, m)));
        self.shift = (0..self.nbhd.len())
            .map(|i| -beta * self.nbhd.energy_of(i))
            .fold(f64::NEG_INFINITY, f64::max);
        self.sums.clear();
        self.sums.resize(family.num_flows(), [0.0; 2]);
        self.total = 0.0;
        for (i, label) in self.labels.iter().enumerate() {
            let w = (-beta * self.nbhd.energy_of(i) - self.shift).exp();
            self.sums[label.flow][label.dir.index()] += w;
            self.total += w;
        }
    }

    pub fn num_flows(&self) -> usize {
        self.sums.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `log Z_i^dir`; `-inf` when the oriented part is empty.
    pub fn log_z(&self, flow: usize, dir: Momentum) -> f64 {
        self.sums[flow][dir.index()].ln() + self.shift
    }

    /// `log (Z_i^+ + Z_i^-)`.
    pub fn log_z_flow(&self, flow: usize) -> f64 {
        let [p, n] = self.sums[flow];
        (p + n).ln() + self.shift
    }

    /// `log Z` over the whole neighborhood.
    pub fn log_z_total(&self) -> f64 {
        self.total.ln() + self.shift
    }

    pub fn is_active(&self, flow: usize) -> bool {
        let [p, n] = self.sums[flow];
        p + n > 0.0
    }

    pub fn is_oriented_empty(&self, flow: usize, dir: Momentum) -> bool {
        self.sums[flow][dir.index()] == 0.0
    }

    /// Move indices of `N_flow^dir`.
    pub fn oriented(&self, flow: usize, dir: Momentum) -> impl Iterator<Item = usize> + '_ {
        let want = FlowLabel { flow, dir };
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, l)| **l == want)
            .map(|(i, _)| i)
    }

    pub fn generic_weights_into(&self, out: &mut Vec<f64>) {
        out.clear();
        if self.total == 0.0 {
            out.resize(self.sums.len(), 0.0);
            return;
        }
        out.extend(self.sums.iter().map(|[p, n]| (p + n) / self.total));
    }

    pub fn generic_weights(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.generic_weights_into(&mut out);
        out
    }
}

/// Which acceptance ratio a step uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioVariant {
    /// The full ratio including the flow weight factor.
    #[default]
    Full,
    /// Drops `w_i(x') / w_i(x)`. Exact only when the weights are
    /// constant along accepted moves; kept for comparison.
    OmitWeights,
}

/// Log acceptance ratio for the move with index `k` in the view of `x`,
/// given the view of the proposed plan `x'`.
#[allow(clippy::too_many_arguments)]
pub fn msmh_log_ratio(
    variant: RatioVariant,
    flow: usize,
    theta: Momentum,
    view: &FlowView,
    k: usize,
    view_next: &FlowView,
    weight: f64,
    weight_next: f64,
) -> f64 {
    let beta = view.beta;
    let energy = view.nbhd.energy;
    let energy_next = view.nbhd.energy_of(k);
    let log_fwd = -beta * energy_next - view.log_z(flow, theta);
    let log_back = -beta * energy - view_next.log_z(flow, theta.flipped());
    let weights = match variant {
        RatioVariant::Full => weight_next.ln() - weight.ln(),
        RatioVariant::OmitWeights => 0.0,
    };
    weights - energy_next + energy + log_back - log_fwd
}

/// A plan with one momentum per flow.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedState {
    pub plan: Plan,
    pub momenta: Vec<Momentum>,
}

impl ExtendedState {
    pub fn new(plan: Plan, momenta: Vec<Momentum>) -> Self {
        ExtendedState { plan, momenta }
    }

    pub fn with_uniform_momenta<R: Rng + ?Sized>(plan: Plan, n_flows: usize, rng: &mut R) -> Self {
        let momenta = (0..n_flows).map(|_| Momentum::random(rng)).collect();
        ExtendedState { plan, momenta }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepEvent {
    Accepted { flow: usize, vertex: usize },
    Rejected { flow: usize },
    /// `N_flow^theta` was empty; only the momentum flipped.
    ForcedFlip { flow: usize },
    /// Momentum flip of a uniformly chosen flow from the lazy mixture.
    LazyFlip { flow: usize },
    Hold,
}

impl StepEvent {
    pub fn moved_vertex(&self) -> Option<usize> {
        match *self {
            StepEvent::Accepted { vertex, .. } => Some(vertex),
            _ => None,
        }
    }
}

/// Mixture weights of the lazy step: hold with probability `hold`, flip a
/// uniform momentum with probability `epsilon`, otherwise take the inner
/// step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LazyParams {
    pub epsilon: f64,
    pub hold: f64,
}

impl LazyParams {
    pub fn check(&self) -> Result<(), SamplerError> {
        let ok = self.epsilon >= 0.0 && self.hold >= 0.0 && self.epsilon + self.hold <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(SamplerError::InvalidParameter(format!(
                "lazy weights epsilon={} hold={} must be nonnegative with sum at most 1",
                self.epsilon, self.hold
            )))
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.epsilon == 0.0 && self.hold == 0.0
    }
}

/// Lazy mixture around `inner`. With both weights zero no randomness is
/// consumed and the result is exactly `inner`.
pub fn lazy_step<R, S>(
    momenta: &mut [Momentum],
    params: LazyParams,
    rng: &mut R,
    inner: S,
) -> Result<StepEvent, SamplerError>
where
    R: Rng + ?Sized,
    S: FnOnce(&mut R) -> Result<StepEvent, SamplerError>,
{
    if params.is_trivial() {
        return inner(rng);
    }
    let u: f64 = rng.gen();
    if u < params.hold {
        Ok(StepEvent::Hold)
    } else if u < params.hold + params.epsilon && !momenta.is_empty() {
        let flow = rng.gen_range(0..momenta.len());
        momenta[flow] = momenta[flow].flipped();
        Ok(StepEvent::LazyFlip { flow })
    } else {
        inner(rng)
    }
}

/// Chain on the extended space. Caches the classified neighborhood of the
/// current plan; after an accepted move the proposal's becomes current.
#[derive(Clone, Debug)]
pub struct MsmhChain<F> {
    pub family: F,
    pub beta: f64,
    pub variant: RatioVariant,
    pub lazy: LazyParams,
    state: ExtendedState,
    current: FlowView,
    proposal: FlowView,
    proposal_plan: Plan,
    weights: Vec<f64>,
    weights_next: Vec<f64>,
    builder: NeighborhoodBuilder,
}

impl<F: FlowFamily> MsmhChain<F> {
    pub fn new(
        family: F,
        model: &Model,
        state: ExtendedState,
        beta: f64,
    ) -> Result<Self, SamplerError> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(SamplerError::InvalidParameter(format!(
                "beta {beta} outside [0, 1]"
            )));
        }
        if state.momenta.len() != family.num_flows() {
            return Err(SamplerError::InvalidParameter(format!(
                "{} momenta for {} flows",
                state.momenta.len(),
                family.num_flows()
            )));
        }
        if !model.admits(&state.plan) {
            return Err(SamplerError::InvalidParameter(
                "initial plan is outside the plan space".into(),
            ));
        }
        let mut builder = NeighborhoodBuilder::new();
        let nbhd = builder.build(model, &state.plan);
        let current = FlowView::new(&family, model, &state.plan, nbhd, beta);
        let mut weights = Vec::new();
        family.weights(model, &state.plan, &current, &mut weights);
        Ok(MsmhChain {
            family,
            beta,
            variant: RatioVariant::Full,
            lazy: LazyParams::default(),
            proposal_plan: state.plan.clone(),
            state,
            current,
            proposal: FlowView::default(),
            weights,
            weights_next: Vec::new(),
            builder,
        })
    }

    pub fn with_variant(mut self, variant: RatioVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_lazy(mut self, lazy: LazyParams) -> Result<Self, SamplerError> {
        lazy.check()?;
        self.lazy = lazy;
        Ok(self)
    }

    pub fn state(&self) -> &ExtendedState {
        &self.state
    }

    pub fn plan(&self) -> &Plan {
        &self.state.plan
    }

    pub fn momenta(&self) -> &[Momentum] {
        &self.state.momenta
    }

    pub fn view(&self) -> &FlowView {
        &self.current
    }

    pub fn into_state(self) -> ExtendedState {
        self.state
    }

    /// One step, including the lazy mixture if configured.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        model: &Model,
        rng: &mut R,
    ) -> Result<StepEvent, SamplerError> {
        let lazy = self.lazy;
        if lazy.is_trivial() {
            return self.inner_step(model, rng);
        }
        let u: f64 = rng.gen();
        if u < lazy.hold {
            return Ok(StepEvent::Hold);
        }
        let n = self.state.momenta.len();
        if u < lazy.hold + lazy.epsilon && n > 0 {
            let flow = rng.gen_range(0..n);
            self.state.momenta[flow] = self.state.momenta[flow].flipped();
            return Ok(StepEvent::LazyFlip { flow });
        }
        self.inner_step(model, rng)
    }

    /// One step of the non-lazy kernel.
    pub fn inner_step<R: Rng + ?Sized>(
        &mut self,
        model: &Model,
        rng: &mut R,
    ) -> Result<StepEvent, SamplerError> {
        if self.current.nbhd.is_empty() {
            return Ok(StepEvent::Hold);
        }
        let flow = sample_categorical(&self.weights, rng);
        let theta = self.state.momenta[flow];
        if self.current.is_oriented_empty(flow, theta) {
            self.state.momenta[flow] = theta.flipped();
            return Ok(StepEvent::ForcedFlip { flow });
        }
        let candidates = self.current.oriented(flow, theta);
        let energies: Vec<(usize, f64)> = candidates
            .map(|i| (i, self.current.nbhd.energy_of(i)))
            .collect();
        let pick = sample_tempered_index(energies.iter().map(|&(_, j)| j), self.beta, rng)?;
        let k = energies[pick].0;
        let mv = self.current.nbhd.moves[k];

        self.proposal_plan.clone_from(&self.state.plan);
        self.proposal_plan
            .move_vertex(&model.graph, mv.vertex(), mv.to());
        self.builder
            .build_into(model, &self.proposal_plan, &mut self.proposal.nbhd);
        self.proposal
            .classify(&self.family, model, &self.proposal_plan, self.beta);

        let reverse = self.proposal.nbhd.find(mv.vertex(), mv.from());
        let reverse_ok = reverse.is_some_and(|b| {
            self.proposal.labels[b]
                == FlowLabel {
                    flow,
                    dir: theta.flipped(),
                }
        });
        if !reverse_ok {
            return Err(SamplerError::ReverseMissing {
                flow,
                from: self.state.plan.fingerprint(),
                to: self.proposal_plan.fingerprint(),
            });
        }
        self.family.weights(
            model,
            &self.proposal_plan,
            &self.proposal,
            &mut self.weights_next,
        );
        let log_r = msmh_log_ratio(
            self.variant,
            flow,
            theta,
            &self.current,
            k,
            &self.proposal,
            self.weights[flow],
            self.weights_next[flow],
        );
        let u: f64 = rng.gen();
        if u < log_r.exp() {
            if self.family.resamples_on_activation() {
                for f in 0..self.family.num_flows() {
                    if self.proposal.is_active(f) && !self.current.is_active(f) {
                        self.state.momenta[f] = Momentum::random(rng);
                    }
                }
            }
            std::mem::swap(&mut self.state.plan, &mut self.proposal_plan);
            std::mem::swap(&mut self.current, &mut self.proposal);
            std::mem::swap(&mut self.weights, &mut self.weights_next);
            Ok(StepEvent::Accepted {
                flow,
                vertex: mv.vertex(),
            })
        } else {
            self.state.momenta[flow] = theta.flipped();
            Ok(StepEvent::Rejected { flow })
        }
    }
}

/// Index drawn with probability proportional to `weights`.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// One step of the chain on `state` without cross-step caching.
pub fn msmh_step<F: FlowFamily + Clone, R: Rng + ?Sized>(
    family: &F,
    model: &Model,
    state: &mut ExtendedState,
    beta: f64,
    variant: RatioVariant,
    rng: &mut R,
) -> Result<StepEvent, SamplerError> {
    let mut chain = MsmhChain::new(family.clone(), model, state.clone(), beta)?.with_variant(variant);
    let event = chain.inner_step(model, rng)?;
    *state = chain.into_state();
    Ok(event)
}

/// A failed weight condition at plan `plan` (index into the checked set).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "kebab-case")]
pub enum WeightViolation {
    /// Weights do not sum to one.
    Simplex { plan: usize, sum: f64 },
    /// `w_i > 0` disagrees with `N_i` being nonempty.
    Support {
        plan: usize,
        flow: usize,
        weight: f64,
        active: bool,
    },
    /// A move in `N_i^theta` has no reverse in `N_i^-theta`, or the
    /// weight of `i` vanishes at the target.
    Reverse {
        plan: usize,
        flow: usize,
        vertex: usize,
        to: usize,
    },
}

/// Checks the weight conditions over a set of plans. Momentum
/// independence holds by construction since weights are functions of the
/// plan only.
pub fn verify_weight_conditions<F: FlowFamily>(
    family: &F,
    model: &Model,
    plans: &[Plan],
    beta: f64,
) -> Vec<WeightViolation> {
    let mut out = Vec::new();
    let mut builder = NeighborhoodBuilder::new();
    let mut weights = Vec::new();
    let mut weights_next = Vec::new();
    for (p, plan) in plans.iter().enumerate() {
        let nbhd = builder.build(model, plan);
        let view = FlowView::new(family, model, plan, nbhd, beta);
        family.weights(model, plan, &view, &mut weights);
        let sum: f64 = weights.iter().sum();
        if !view.nbhd.is_empty() && (sum - 1.0).abs() > 1e-9 {
            out.push(WeightViolation::Simplex { plan: p, sum });
        }
        for (flow, &weight) in weights.iter().enumerate() {
            let active = view.is_active(flow);
            if (weight > 0.0) != active {
                out.push(WeightViolation::Support {
                    plan: p,
                    flow,
                    weight,
                    active,
                });
            }
        }
        for (k, mv) in view.nbhd.moves.iter().enumerate() {
            let label = view.labels[k];
            if weights[label.flow] <= 0.0 {
                continue;
            }
            let mut next = plan.clone();
            next.move_vertex(&model.graph, mv.vertex(), mv.to());
            let nbhd_next = builder.build(model, &next);
            let view_next = FlowView::new(family, model, &next, nbhd_next, beta);
            family.weights(model, &next, &view_next, &mut weights_next);
            let ok = view_next.nbhd.find(mv.vertex(), mv.from()).is_some_and(|b| {
                view_next.labels[b]
                    == FlowLabel {
                        flow: label.flow,
                        dir: label.dir.flipped(),
                    }
            }) && weights_next[label.flow] > 0.0;
            if !ok {
                out.push(WeightViolation::Reverse {
                    plan: p,
                    flow: label.flow,
                    vertex: mv.vertex(),
                    to: mv.to(),
                });
            }
        }
    }
    out
}
