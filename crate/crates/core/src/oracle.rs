//! Exhaustive enumeration of small plan spaces and exact transition
//! kernels of every sampler, with balance, irreducibility and circuit
//! checks.
//!
//! Neighborhoods here are found by brute force: a single-vertex relabel
//! to an adjacent district is a member iff the resulting labeling is in
//! the enumerated space. Kernels are stored as sorted sparse rows.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{OracleError, SamplerError};
use crate::flows::{ComFlow, D2dFlow, VectorField};
use crate::model::Model;
use crate::msmh::{msmh_log_ratio, FlowFamily, FlowLabel, FlowView, LazyParams, Momentum, RatioVariant};
use crate::neighborhood::{Move, Neighborhood};
use crate::plan::Plan;
use crate::snf::{log_partition, snf_log_ratio};

pub const DEFAULT_LABELING_CAP: u128 = 1 << 24;
pub const DEFAULT_STATE_CAP: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationOptions {
    pub labeling_cap: u128,
    /// Keep only labelings whose districts first appear in label order.
    pub quotient_labels: bool,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions {
            labeling_cap: DEFAULT_LABELING_CAP,
            quotient_labels: false,
        }
    }
}

/// Every plan of a model, in lexicographic label order, with brute-force
/// neighborhoods.
#[derive(Clone, Debug)]
pub struct EnumeratedSpace {
    pub model: Model,
    pub plans: Vec<Plan>,
    pub energies: Vec<f64>,
    pub neighborhoods: Vec<Neighborhood>,
    /// `targets[p][k]` is the plan index reached by move `k` of plan `p`.
    pub targets: Vec<Vec<usize>>,
    index: HashMap<u64, usize>,
}

impl EnumeratedSpace {
    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn index_of(&self, plan: &Plan) -> Option<usize> {
        self.index
            .get(&plan.fingerprint())
            .copied()
            .filter(|&i| self.plans[i].labels() == plan.labels())
    }

    pub fn index_of_labels(&self, labels: &[u16]) -> Option<usize> {
        let plan = Plan::from_labels(&self.model.graph, labels.to_vec(), self.model.n_districts).ok()?;
        self.index_of(&plan)
    }

    /// `exp(-J)` normalized over the space.
    pub fn pi(&self) -> Vec<f64> {
        let log_z = log_partition(self.energies.iter().copied(), 1.0);
        self.energies.iter().map(|j| (-j - log_z).exp()).collect()
    }
}

fn for_each_labeling(n: usize, k: usize, mut f: impl FnMut(&[u16])) {
    let mut labels = vec![0u16; n];
    loop {
        f(&labels);
        let mut pos = n;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if (labels[pos] as usize) + 1 < k {
                labels[pos] += 1;
                for l in &mut labels[pos + 1..] {
                    *l = 0;
                }
                break;
            }
        }
    }
}

fn canonical_labels(labels: &[u16]) -> bool {
    let mut next = 0u16;
    for &l in labels {
        if l > next {
            return false;
        }
        if l == next {
            next += 1;
        }
    }
    true
}

/// Enumerates all plans of `model` by testing every labeling.
pub fn enumerate_plans(model: &Model, options: EnumerationOptions) -> Result<EnumeratedSpace, OracleError> {
    let n = model.graph.num_vertices();
    let k = model.n_districts;
    let size = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if size > options.labeling_cap {
        return Err(OracleError::CapExceeded {
            what: "labeling enumeration",
            size,
            cap: options.labeling_cap,
        });
    }
    let mut plans = Vec::new();
    for_each_labeling(n, k, |labels| {
        if options.quotient_labels && !canonical_labels(labels) {
            return;
        }
        if let Ok(plan) = Plan::from_labels(&model.graph, labels.to_vec(), k) {
            if model.admits(&plan) {
                plans.push(plan);
            }
        }
    });
    let mut index = HashMap::with_capacity(plans.len());
    for (i, p) in plans.iter().enumerate() {
        if let Some(j) = index.insert(p.fingerprint(), i) {
            return Err(OracleError::FingerprintCollision(j, i));
        }
    }
    let energies: Vec<f64> = plans.iter().map(|p| model.energy(p)).collect();
    let mut space = EnumeratedSpace {
        model: model.clone(),
        plans,
        energies,
        neighborhoods: Vec::new(),
        targets: Vec::new(),
        index,
    };
    let (neighborhoods, targets) = (0..space.len())
        .map(|p| brute_force_neighborhood(&space, p))
        .unzip();
    space.neighborhoods = neighborhoods;
    space.targets = targets;
    Ok(space)
}

fn brute_force_neighborhood(space: &EnumeratedSpace, p: usize) -> (Neighborhood, Vec<usize>) {
    let graph = &space.model.graph;
    let plan = &space.plans[p];
    let energy = space.energies[p];
    let mut moves = Vec::new();
    let mut targets = Vec::new();
    let mut labels = plan.labels().to_vec();
    for v in 0..graph.num_vertices() {
        let from = plan.district_of(v);
        for to in 0..space.model.n_districts {
            if to == from {
                continue;
            }
            let Some(source) = graph.neighbors(v).filter(|&w| plan.district_of(w) == to).min() else {
                continue;
            };
            labels[v] = to as u16;
            if let Some(q) = space.index_of_labels(&labels) {
                moves.push(Move {
                    vertex: v as u32,
                    from: from as u16,
                    to: to as u16,
                    source: source as u32,
                    delta: space.energies[q] - energy,
                });
                targets.push(q);
            }
            labels[v] = from as u16;
        }
    }
    (Neighborhood { energy, moves }, targets)
}

/// Plan counts with and without the simple connectivity requirement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ConnectivityCardinalities {
    pub connected: usize,
    pub simply_connected: usize,
}

pub fn connectivity_cardinalities(model: &Model) -> Result<ConnectivityCardinalities, OracleError> {
    let mut m = model.clone();
    m.validity.require_simply_connected = false;
    let connected = enumerate_plans(&m, EnumerationOptions::default())?.len();
    m.validity.require_simply_connected = true;
    let simply_connected = enumerate_plans(&m, EnumerationOptions::default())?.len();
    Ok(ConnectivityCardinalities {
        connected,
        simply_connected,
    })
}

pub type SparseRows = Vec<Vec<(usize, f64)>>;

fn normalize_row(row: &mut Vec<(usize, f64)>) {
    row.sort_by_key(|&(j, _)| j);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for &(j, p) in row.iter() {
        match out.last_mut() {
            Some((k, q)) if *k == j => *q += p,
            _ => out.push((j, p)),
        }
    }
    out.retain(|&(_, p)| p > 0.0);
    *row = out;
}

fn entry(rows: &SparseRows, i: usize, j: usize) -> f64 {
    rows[i]
        .binary_search_by_key(&j, |&(k, _)| k)
        .map_or(0.0, |pos| rows[i][pos].1)
}

/// Row-stochastic kernel over the extended states `plan * 2^n_flows +
/// momentum bits` (bit `i` set means flow `i` has negative momentum).
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub n_plans: usize,
    pub n_flows: usize,
    pub rows: SparseRows,
    /// Per-flow parts `w_i P_i`, each over the same state set.
    pub components: Vec<SparseRows>,
    /// Flow weights per plan.
    pub weights: Vec<Vec<f64>>,
}

impl KernelMatrix {
    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn state(&self, plan: usize, bits: usize) -> usize {
        (plan << self.n_flows) | bits
    }

    #[inline]
    pub fn plan_of(&self, state: usize) -> usize {
        state >> self.n_flows
    }

    #[inline]
    pub fn bits_of(&self, state: usize) -> usize {
        state & ((1 << self.n_flows) - 1)
    }

    /// Involution negating every momentum.
    #[inline]
    pub fn flip_all(&self, state: usize) -> usize {
        state ^ ((1 << self.n_flows) - 1)
    }

    #[inline]
    pub fn flip_flow(&self, state: usize, flow: usize) -> usize {
        state ^ (1 << flow)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        entry(&self.rows, i, j)
    }

    /// Target over extended states: `pi(plan) / 2^n_flows`.
    pub fn extended_target(&self, pi: &[f64]) -> Vec<f64> {
        let scale = 1.0 / (1u64 << self.n_flows) as f64;
        (0..self.n_states())
            .map(|s| pi[self.plan_of(s)] * scale)
            .collect()
    }

    /// Largest deviation of a row sum from one.
    pub fn row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Support digraph of the kernel.
    pub fn support(&self) -> Vec<Vec<usize>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, _)| j).collect())
            .collect()
    }

    /// Copy with one entry changed, for detector sanity checks.
    pub fn perturbed(&self, i: usize, j: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.rows[i].push((j, delta));
        normalize_row(&mut out.rows[i]);
        out
    }
}

/// Sampler whose kernel is built.
#[derive(Clone, Debug)]
pub enum SamplerSpec {
    Snf { beta: f64 },
    ComFlow { beta: f64, field: VectorField },
    D2dFlow { beta: f64, variant: RatioVariant },
    Lazy { inner: Box<SamplerSpec>, params: LazyParams },
}

impl SamplerSpec {
    pub fn name(&self) -> String {
        match self {
            SamplerSpec::Snf { beta } => format!("snf(beta={beta})"),
            SamplerSpec::ComFlow { beta, .. } => format!("com-flow(beta={beta})"),
            SamplerSpec::D2dFlow { beta, variant } => {
                format!("d2d-flow(beta={beta}, {variant:?})")
            }
            SamplerSpec::Lazy { inner, params } => format!(
                "lazy(eps={}, hold={}) {}",
                params.epsilon,
                params.hold,
                inner.name()
            ),
        }
    }
}

pub fn build_kernel_matrix(
    space: &EnumeratedSpace,
    sampler: &SamplerSpec,
    state_cap: usize,
) -> Result<KernelMatrix, OracleError> {
    match sampler {
        SamplerSpec::Snf { beta } => snf_kernel(space, *beta, state_cap),
        SamplerSpec::ComFlow { beta, field } => msmh_kernel(
            space,
            &ComFlow::new(field.clone()),
            *beta,
            RatioVariant::Full,
            state_cap,
        ),
        SamplerSpec::D2dFlow { beta, variant } => msmh_kernel(
            space,
            &D2dFlow::new(space.model.n_districts),
            *beta,
            *variant,
            state_cap,
        ),
        SamplerSpec::Lazy { inner, params } => {
            let k = build_kernel_matrix(space, inner, state_cap)?;
            lazy_kernel(&k, *params)
        }
    }
}

fn check_states(n: usize, cap: usize) -> Result<(), OracleError> {
    if n > cap {
        return Err(OracleError::CapExceeded {
            what: "extended state space",
            size: n as u128,
            cap: cap as u128,
        });
    }
    Ok(())
}

/// Kernel of the tempered single-node-flip chain over plans.
pub fn snf_kernel(space: &EnumeratedSpace, beta: f64, state_cap: usize) -> Result<KernelMatrix, OracleError> {
    check_states(space.len(), state_cap)?;
    let log_z: Vec<f64> = space
        .neighborhoods
        .iter()
        .map(|nb| log_partition((0..nb.len()).map(|i| nb.energy_of(i)), beta))
        .collect();
    let rows = (0..space.len())
        .map(|p| {
            let nb = &space.neighborhoods[p];
            let mut row = Vec::with_capacity(nb.len() + 1);
            let mut stay = 1.0;
            for k in 0..nb.len() {
                let q = space.targets[p][k];
                let prop = (-beta * nb.energy_of(k) - log_z[p]).exp();
                let log_r = snf_log_ratio(beta, nb.energy, nb.energy_of(k), log_z[p], log_z[q]);
                let moved = prop * log_r.exp().min(1.0);
                row.push((q, moved));
                stay -= moved;
            }
            row.push((p, stay.max(0.0)));
            normalize_row(&mut row);
            row
        })
        .collect();
    Ok(KernelMatrix {
        n_plans: space.len(),
        n_flows: 0,
        rows,
        components: Vec::new(),
        weights: Vec::new(),
    })
}

/// Kernel of the mixed skew chain with flows from `family`.
pub fn msmh_kernel<F: FlowFamily>(
    space: &EnumeratedSpace,
    family: &F,
    beta: f64,
    variant: RatioVariant,
    state_cap: usize,
) -> Result<KernelMatrix, OracleError> {
    let n_flows = family.num_flows();
    let n_states = space.len().checked_shl(n_flows as u32).unwrap_or(usize::MAX);
    if n_flows >= usize::BITS as usize - 1 {
        check_states(usize::MAX, state_cap)?;
    }
    check_states(n_states, state_cap)?;
    let model = &space.model;
    let views: Vec<FlowView> = (0..space.len())
        .map(|p| {
            FlowView::new(
                family,
                model,
                &space.plans[p],
                space.neighborhoods[p].clone(),
                beta,
            )
        })
        .collect();
    let weights: Vec<Vec<f64>> = (0..space.len())
        .map(|p| {
            let mut w = Vec::new();
            family.weights(model, &space.plans[p], &views[p], &mut w);
            w
        })
        .collect();
    let mut kernel = KernelMatrix {
        n_plans: space.len(),
        n_flows,
        rows: vec![Vec::new(); n_states],
        components: vec![vec![Vec::new(); n_states]; n_flows],
        weights: Vec::new(),
    };
    for p in 0..space.len() {
        let view = &views[p];
        for bits in 0..(1usize << n_flows) {
            let x = kernel.state(p, bits);
            if view.nbhd.is_empty() {
                kernel.rows[x].push((x, 1.0));
                continue;
            }
            for (flow, &w) in weights[p].iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                let theta = if bits >> flow & 1 == 1 {
                    Momentum::Neg
                } else {
                    Momentum::Pos
                };
                let flipped = kernel.flip_flow(x, flow);
                let comp = &mut kernel.components[flow][x];
                if view.is_oriented_empty(flow, theta) {
                    comp.push((flipped, w));
                    continue;
                }
                let log_z = view.log_z(flow, theta);
                for k in view.oriented(flow, theta) {
                    let q = space.targets[p][k];
                    let mv = view.nbhd.moves[k];
                    let back = &views[q];
                    let reverse = back.nbhd.find(mv.vertex(), mv.from());
                    let expected = FlowLabel {
                        flow,
                        dir: theta.flipped(),
                    };
                    if reverse.map(|b| back.labels[b]) != Some(expected) {
                        return Err(SamplerError::ReverseMissing {
                            flow,
                            from: space.plans[p].fingerprint(),
                            to: space.plans[q].fingerprint(),
                        }
                        .into());
                    }
                    let prop = (-beta * view.nbhd.energy_of(k) - log_z).exp();
                    let log_r =
                        msmh_log_ratio(variant, flow, theta, view, k, back, w, weights[q][flow]);
                    let acc = log_r.exp().min(1.0);
                    comp.push((flipped, w * prop * (1.0 - acc)));
                    let fresh: Vec<usize> = if family.resamples_on_activation() {
                        (0..n_flows)
                            .filter(|&f| back.is_active(f) && !view.is_active(f))
                            .collect()
                    } else {
                        Vec::new()
                    };
                    let share = w * prop * acc / (1u64 << fresh.len()) as f64;
                    for combo in 0..(1usize << fresh.len()) {
                        let mut b = bits;
                        for (t, &f) in fresh.iter().enumerate() {
                            b = (b & !(1 << f)) | ((combo >> t & 1) << f);
                        }
                        comp.push(((q << n_flows) | b, share));
                    }
                }
            }
        }
    }
    for flow in 0..n_flows {
        for x in 0..n_states {
            let part = std::mem::take(&mut kernel.components[flow][x]);
            kernel.rows[x].extend_from_slice(&part);
            kernel.components[flow][x] = part;
            normalize_row(&mut kernel.components[flow][x]);
        }
    }
    for row in &mut kernel.rows {
        normalize_row(row);
    }
    kernel.weights = weights;
    Ok(kernel)
}

/// `hold I + epsilon (1/n) sum_i Flip_i + (1 - hold - epsilon) P`.
pub fn lazy_kernel(inner: &KernelMatrix, params: LazyParams) -> Result<KernelMatrix, OracleError> {
    params.check()?;
    let rest = 1.0 - params.hold - params.epsilon;
    let n = inner.n_flows;
    let rows = (0..inner.n_states())
        .map(|x| {
            let mut row: Vec<(usize, f64)> =
                inner.rows[x].iter().map(|&(j, p)| (j, rest * p)).collect();
            row.push((x, params.hold));
            if n == 0 {
                row.push((x, params.epsilon));
            } else {
                for f in 0..n {
                    row.push((inner.flip_flow(x, f), params.epsilon / n as f64));
                }
            }
            normalize_row(&mut row);
            row
        })
        .collect();
    Ok(KernelMatrix {
        n_plans: inner.n_plans,
        n_flows: n,
        rows,
        components: Vec::new(),
        weights: inner.weights.clone(),
    })
}

/// `max_j |(pi P)_j - pi_j|`.
pub fn check_invariance(kernel: &KernelMatrix, target: &[f64]) -> f64 {
    let mut out = vec![0.0; kernel.n_states()];
    for (i, row) in kernel.rows.iter().enumerate() {
        for &(j, p) in row {
            out[j] += target[i] * p;
        }
    }
    out.iter()
        .zip(target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `max |pi_x P(x,y) - pi_y P(y,x)|`.
pub fn detailed_balance_residual(kernel: &KernelMatrix, target: &[f64]) -> f64 {
    skew_residual_of(&kernel.rows, target, |s| s)
}

/// `max |pi_x P(x,y) - pi_{S y} P(S y, S x)|` for the involution `s`.
pub fn skew_residual_of(rows: &SparseRows, target: &[f64], s: impl Fn(usize) -> usize) -> f64 {
    let mut worst: f64 = 0.0;
    for (x, row) in rows.iter().enumerate() {
        for &(y, p) in row {
            // both orientations of each pair are visited through the entries
            let (sy, sx) = (s(y), s(x));
            let lhs = target[x] * p;
            let rhs = target[sy] * entry(rows, sy, sx);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

/// Skew balance of the whole kernel under negation of all momenta.
pub fn skew_balance_residual(kernel: &KernelMatrix, target: &[f64]) -> f64 {
    skew_residual_of(&kernel.rows, target, |s| kernel.flip_all(s))
}

/// Largest skew residual of a per-flow component under negation of that
/// flow's momentum.
pub fn mixed_skew_residual(kernel: &KernelMatrix, target: &[f64]) -> f64 {
    kernel
        .components
        .iter()
        .enumerate()
        .map(|(f, comp)| skew_residual_of(comp, target, |s| kernel.flip_flow(s, f)))
        .fold(0.0, f64::max)
}

/// Component id of every vertex, ids in order of completion (sink
/// components of the condensation get the smallest ids).
pub fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![UNSEEN; n];
    let mut stack = Vec::new();
    let mut call: Vec<(usize, usize)> = Vec::new();
    let mut counter = 0;
    let mut n_comp = 0;
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut next)) = call.last_mut() {
            if let Some(&w) = adj[v].get(*next) {
                *next += 1;
                if index[w] == UNSEEN {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    comp[w] = n_comp;
                    if w == v {
                        break;
                    }
                }
                n_comp += 1;
            }
        }
    }
    comp
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IrreducibilityCertificate {
    StronglyConnected { components: usize },
    /// `to` cannot be reached from `from`.
    Unreachable { from: usize, to: usize, components: usize },
}

/// Strong connectivity of the support digraph.
pub fn check_irreducible(adj: &[Vec<usize>]) -> (bool, IrreducibilityCertificate) {
    let comp = strongly_connected_components(adj);
    let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    if n_comp <= 1 {
        return (
            true,
            IrreducibilityCertificate::StronglyConnected { components: n_comp },
        );
    }
    // component 0 is a sink; anything outside it is unreachable from it
    let from = comp.iter().position(|&c| c == 0).expect("component 0");
    let to = comp.iter().position(|&c| c != 0).expect("second component");
    (
        false,
        IrreducibilityCertificate::Unreachable {
            from,
            to,
            components: n_comp,
        },
    )
}

/// Vertex sets of the sink strongly connected components that contain at
/// least one edge, each sorted, in order of their smallest vertex.
pub fn find_non_escapable_circuits(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let comp = strongly_connected_components(adj);
    let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut sink = vec![true; n_comp];
    let mut has_edge = vec![false; n_comp];
    for (v, out) in adj.iter().enumerate() {
        for &w in out {
            if comp[w] == comp[v] {
                has_edge[comp[v]] = true;
            } else {
                sink[comp[v]] = false;
            }
        }
    }
    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
    for (v, &c) in comp.iter().enumerate() {
        if sink[c] && has_edge[c] {
            sets[c].push(v);
        }
    }
    let mut out: Vec<Vec<usize>> = sets.into_iter().filter(|s| !s.is_empty()).collect();
    out.sort();
    out
}

/// Digraph over plans whose edges are the moves of `N_flow^dir`.
pub fn flow_digraph<F: FlowFamily>(
    space: &EnumeratedSpace,
    family: &F,
    flow: usize,
    dir: Momentum,
) -> Vec<Vec<usize>> {
    let want = FlowLabel { flow, dir };
    (0..space.len())
        .map(|p| {
            let nb = &space.neighborhoods[p];
            nb.moves
                .iter()
                .enumerate()
                .filter(|(_, m)| family.classify(&space.model, &space.plans[p], m) == want)
                .map(|(k, _)| space.targets[p][k])
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CircuitCheck {
    pub flow: usize,
    pub dir: Momentum,
    pub plans: Vec<usize>,
    /// Largest probability, over the circuit's plans, that a step of flow
    /// `flow` from momentum `dir` flips the momentum.
    pub max_flip_probability: f64,
}

impl CircuitCheck {
    pub fn escapable(&self) -> bool {
        self.max_flip_probability > 0.0
    }
}

/// Finds the non-escapable circuits of every oriented flow digraph and
/// the best momentum-flip probability inside each.
pub fn check_circuits<F: FlowFamily>(
    space: &EnumeratedSpace,
    family: &F,
    beta: f64,
    variant: RatioVariant,
) -> Result<Vec<CircuitCheck>, OracleError> {
    let kernel = msmh_kernel(space, family, beta, variant, usize::MAX)?;
    let mut out = Vec::new();
    for flow in 0..family.num_flows() {
        for dir in [Momentum::Pos, Momentum::Neg] {
            let graph = flow_digraph(space, family, flow, dir);
            for plans in find_non_escapable_circuits(&graph) {
                let mut best: f64 = 0.0;
                for &p in &plans {
                    let w = kernel.weights[p][flow];
                    if w <= 0.0 {
                        continue;
                    }
                    // other flows' momenta do not affect flow `flow`
                    let bits = if dir == Momentum::Neg { 1 << flow } else { 0 };
                    let x = kernel.state(p, bits);
                    let flip = entry(&kernel.components[flow], x, kernel.flip_flow(x, flow));
                    best = best.max(flip / w);
                }
                out.push(CircuitCheck {
                    flow,
                    dir,
                    plans,
                    max_flip_probability: best,
                });
            }
        }
    }
    Ok(out)
}

/// Summary of the exact checks for one sampler on one space.
#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub sampler: String,
    pub plans: usize,
    pub states: usize,
    pub row_sum_error: f64,
    pub invariance_residual: f64,
    pub detailed_balance_residual: Option<f64>,
    pub skew_balance_residual: Option<f64>,
    pub mixed_skew_residual: Option<f64>,
    pub irreducible: bool,
    pub certificate: IrreducibilityCertificate,
    pub non_escapable_circuits: usize,
}

pub fn analyze(space: &EnumeratedSpace, sampler: &SamplerSpec) -> Result<OracleReport, OracleError> {
    let kernel = build_kernel_matrix(space, sampler, DEFAULT_STATE_CAP)?;
    let target = kernel.extended_target(&space.pi());
    let (irreducible, certificate) = check_irreducible(&kernel.support());
    let has_momenta = kernel.n_flows > 0;
    Ok(OracleReport {
        sampler: sampler.name(),
        plans: space.len(),
        states: kernel.n_states(),
        row_sum_error: kernel.row_sum_error(),
        invariance_residual: check_invariance(&kernel, &target),
        detailed_balance_residual: (!has_momenta).then(|| detailed_balance_residual(&kernel, &target)),
        skew_balance_residual: has_momenta.then(|| skew_balance_residual(&kernel, &target)),
        mixed_skew_residual: (!kernel.components.is_empty())
            .then(|| mixed_skew_residual(&kernel, &target)),
        irreducible,
        certificate,
        non_escapable_circuits: find_non_escapable_circuits(&kernel.support()).len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid, build_lattice};
    use crate::neighborhood::neighborhood;
    use crate::plan::ValiditySpec;
    use crate::score::ScoreSpec;

    fn model(w: usize, h: usize, lo: f64, hi: f64) -> Model {
        Model::new(
            build_grid(w, h).unwrap(),
            2,
            ValiditySpec::new(lo, hi),
            ScoreSpec::cut_edges_with_bounds(lo, hi),
        )
        .unwrap()
    }

    #[test]
    fn path_and_square_counts() {
        let path = enumerate_plans(&model(4, 1, 1.0, 3.0), EnumerationOptions::default()).unwrap();
        assert_eq!(path.len(), 6);
        let square = enumerate_plans(&model(2, 2, 2.0, 2.0), EnumerationOptions::default()).unwrap();
        assert_eq!(square.len(), 4);
        let quotient = enumerate_plans(
            &model(2, 2, 2.0, 2.0),
            EnumerationOptions {
                quotient_labels: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(quotient.len(), 2);
        // the 2x2 square with two vertices per district has no single flips
        assert!(square.neighborhoods.iter().all(|n| n.is_empty()));
    }

    #[test]
    fn cap_enforced() {
        let m = Model::new(
            build_lattice(5, 5).unwrap(),
            2,
            ValiditySpec::new(10.0, 15.0),
            ScoreSpec::cut_edges_with_bounds(10.0, 15.0),
        )
        .unwrap();
        let err = enumerate_plans(
            &m,
            EnumerationOptions {
                labeling_cap: 1 << 20,
                quotient_labels: false,
            },
        )
        .unwrap_err();
        assert!(matches!(err, OracleError::CapExceeded { .. }));
    }

    #[test]
    fn brute_force_matches_builder() {
        let m = model(4, 4, 6.0, 10.0);
        let space = enumerate_plans(&m, EnumerationOptions::default()).unwrap();
        for (p, plan) in space.plans.iter().enumerate() {
            let fast = neighborhood(&m, plan);
            let slow = &space.neighborhoods[p];
            assert_eq!(fast.moves.len(), slow.moves.len());
            for (a, b) in fast.moves.iter().zip(&slow.moves) {
                assert_eq!((a.vertex, a.from, a.to, a.source), (b.vertex, b.from, b.to, b.source));
                assert!((a.delta - b.delta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn snf_kernel_balanced() {
        let space = enumerate_plans(&model(3, 3, 3.0, 6.0), EnumerationOptions::default()).unwrap();
        for beta in [0.0, 0.5, 1.0] {
            let k = snf_kernel(&space, beta, DEFAULT_STATE_CAP).unwrap();
            let pi = k.extended_target(&space.pi());
            assert!(k.row_sum_error() < 1e-12);
            assert!(check_invariance(&k, &pi) < 1e-12);
            assert!(detailed_balance_residual(&k, &pi) < 1e-12);
            assert!(check_irreducible(&k.support()).0);
            let bad = k.perturbed(0, 1, 1e-3);
            assert!(check_invariance(&bad, &pi) >= 1e-4 * pi[0]);
        }
    }

    #[test]
    fn uniform_symmetric_kernel() {
        let k = KernelMatrix {
            n_plans: 2,
            n_flows: 0,
            rows: vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.5), (1, 0.5)]],
            components: Vec::new(),
            weights: Vec::new(),
        };
        assert_eq!(check_invariance(&k, &[0.5, 0.5]), 0.0);
    }

    #[test]
    fn block_diagonal_reducible() {
        let adj = vec![vec![1], vec![0], vec![3], vec![2]];
        let (ok, cert) = check_irreducible(&adj);
        assert!(!ok);
        let IrreducibilityCertificate::Unreachable { from, to, .. } = cert else {
            panic!("expected witness");
        };
        assert_ne!(from / 2, to / 2);
    }

    #[test]
    fn circuits_examples() {
        assert!(find_non_escapable_circuits(&[vec![1], vec![2], vec![0, 3], vec![]]).is_empty());
        assert_eq!(
            find_non_escapable_circuits(&[vec![1], vec![2], vec![0]]),
            vec![vec![0, 1, 2]]
        );
        let two = vec![vec![1], vec![0, 2], vec![3], vec![2]];
        assert_eq!(find_non_escapable_circuits(&two), vec![vec![2, 3]]);
    }

    #[test]
    fn reports_serialize() {
        let space = enumerate_plans(&model(3, 3, 3.0, 6.0), EnumerationOptions::default()).unwrap();
        let report = analyze(
            &space,
            &SamplerSpec::ComFlow {
                beta: 0.5,
                field: VectorField::vortex([1.0, 1.0]),
            },
        )
        .unwrap();
        assert!(report.invariance_residual < 1e-12);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("invariance_residual"));
    }
}
