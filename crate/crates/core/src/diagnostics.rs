//! Measurements on two-district square lattice chains: meta-stable state
//! classification and transition counts, the per-vertex occupancy field,
//! Hamming distance and the decorrelation curve `G(t)`.
//!
//! Every accumulator has a `merge` so per-chain results can be combined
//! in a fixed order.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::DiagnosticsError;
use crate::graph::{LatticeShape, PrecinctGraph};
use crate::plan::Plan;

/// Straight-cut configuration named by where district 0 sits. North is
/// the high row numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metastate {
    North,
    East,
    South,
    West,
}

impl Metastate {
    pub const ALL: [Metastate; 4] = [
        Metastate::North,
        Metastate::East,
        Metastate::South,
        Metastate::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> &'static str {
        match self {
            Metastate::North => "N",
            Metastate::East => "E",
            Metastate::South => "S",
            Metastate::West => "W",
        }
    }
}

pub const DEFAULT_BAND: usize = 3;

fn square_lattice(graph: &PrecinctGraph, plan: &Plan) -> Result<LatticeShape, DiagnosticsError> {
    let shape = graph
        .lattice_shape()
        .ok_or_else(|| DiagnosticsError::Unsupported("graph is not a lattice".into()))?;
    if shape.width != shape.height || shape.width % 2 != 0 {
        return Err(DiagnosticsError::Unsupported(format!(
            "need an even square lattice, got {}x{}",
            shape.width, shape.height
        )));
    }
    if plan.n_districts() != 2 {
        return Err(DiagnosticsError::Unsupported(format!(
            "need two districts, got {}",
            plan.n_districts()
        )));
    }
    if plan.labels().len() != graph.num_vertices() {
        return Err(DiagnosticsError::InstanceMismatch);
    }
    Ok(shape)
}

/// Distance of row (or column) `r` from the middle cut of a side of
/// length `side`.
fn cut_distance(r: usize, side: usize) -> usize {
    let half = side / 2;
    if r >= half {
        r + 1 - half
    } else {
        half - r
    }
}

/// For each reference, the label it assigns to `v` if `v` lies outside
/// the band, else `None`.
fn reference_label(shape: LatticeShape, v: usize, band: usize, m: Metastate) -> Option<u16> {
    let (row, col) = (v / shape.width, v % shape.width);
    let half = shape.width / 2;
    let (coord, high_is_zero) = match m {
        Metastate::North => (row, true),
        Metastate::South => (row, false),
        Metastate::East => (col, true),
        Metastate::West => (col, false),
    };
    if cut_distance(coord, shape.width) <= band {
        return None;
    }
    let high = coord >= half;
    Some(if high == high_is_zero { 0 } else { 1 })
}

/// The meta-stable state whose straight-cut reference agrees with `plan`
/// on every vertex more than `band` rows/columns from the cut.
pub fn classify_metastable(
    graph: &PrecinctGraph,
    plan: &Plan,
    band: usize,
) -> Result<Option<Metastate>, DiagnosticsError> {
    Ok(MetastateTracker::new(graph, plan, band)?.current())
}

/// Incremental version of [`classify_metastable`]: keeps the number of
/// disagreements with each reference.
#[derive(Clone, Debug)]
pub struct MetastateTracker {
    shape: LatticeShape,
    band: usize,
    mismatches: [usize; 4],
}

impl MetastateTracker {
    pub fn new(graph: &PrecinctGraph, plan: &Plan, band: usize) -> Result<Self, DiagnosticsError> {
        let shape = square_lattice(graph, plan)?;
        let mut mismatches = [0; 4];
        for (v, &l) in plan.labels().iter().enumerate() {
            for m in Metastate::ALL {
                if reference_label(shape, v, band, m).is_some_and(|r| r != l) {
                    mismatches[m.index()] += 1;
                }
            }
        }
        Ok(MetastateTracker {
            shape,
            band,
            mismatches,
        })
    }

    /// Records that `v` moved from district `from` to `to`.
    pub fn update(&mut self, v: usize, from: usize, to: usize) {
        for m in Metastate::ALL {
            if let Some(r) = reference_label(self.shape, v, self.band, m) {
                let r = r as usize;
                if r == from {
                    self.mismatches[m.index()] += 1;
                } else if r == to {
                    self.mismatches[m.index()] -= 1;
                }
            }
        }
    }

    pub fn current(&self) -> Option<Metastate> {
        let mut found = None;
        for m in Metastate::ALL {
            if self.mismatches[m.index()] == 0 {
                if found.is_some() {
                    return None;
                }
                found = Some(m);
            }
        }
        found
    }
}

/// Transitions between meta-stable states: counted when the chain, last
/// seen in `a`, next enters `b != a`. Also counts steps spent in each.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounter {
    pub counts: [[u64; 4]; 4],
    pub occupancy: [u64; 4],
    pub unlabeled: u64,
    last: Option<Metastate>,
}

impl TransitionCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the state the chain starts in without counting a step.
    pub fn start(&mut self, label: Option<Metastate>) {
        self.last = label;
    }

    pub fn observe(&mut self, label: Option<Metastate>) {
        match label {
            None => self.unlabeled += 1,
            Some(b) => {
                self.occupancy[b.index()] += 1;
                if let Some(a) = self.last {
                    if a != b {
                        self.counts[a.index()][b.index()] += 1;
                    }
                }
                self.last = Some(b);
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn steps(&self) -> u64 {
        self.occupancy.iter().sum::<u64>() + self.unlabeled
    }

    /// Fraction of observed steps spent in each meta-stable state.
    pub fn frequencies(&self) -> [f64; 4] {
        let n = self.steps().max(1) as f64;
        self.occupancy.map(|c| c as f64 / n)
    }

    /// Adds another chain's counts. Transitions never span chains.
    pub fn merge(&mut self, other: &TransitionCounter) {
        for a in 0..4 {
            self.occupancy[a] += other.occupancy[a];
            for b in 0..4 {
                self.counts[a][b] += other.counts[a][b];
            }
        }
        self.unlabeled += other.unlabeled;
    }
}

pub fn count_transitions<I>(trace: I) -> TransitionCounter
where
    I: IntoIterator<Item = Option<Metastate>>,
{
    let mut c = TransitionCounter::new();
    for label in trace {
        c.observe(label);
    }
    c
}

pub fn hamming(a: &Plan, b: &Plan) -> Result<usize, DiagnosticsError> {
    if a.labels().len() != b.labels().len() || a.n_districts() != b.n_districts() {
        return Err(DiagnosticsError::InstanceMismatch);
    }
    Ok(hamming_labels(a.labels(), b.labels()))
}

#[inline]
fn hamming_labels<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// `log(1 + |f - 1/2|) * sign(f - 1/2)`.
pub fn occupancy_display(f: f64) -> f64 {
    let d = f - 0.5;
    if d == 0.0 {
        return 0.0;
    }
    (1.0 + d.abs()).ln() * d.signum()
}

/// Number of steps each vertex spent in `district`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyField {
    pub district: u16,
    pub counts: Vec<u64>,
    pub steps: u64,
}

impl OccupancyField {
    pub fn fractions(&self) -> Vec<f64> {
        let n = self.steps.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn max_deviation(&self) -> f64 {
        self.fractions()
            .iter()
            .map(|f| (f - 0.5).abs())
            .fold(0.0, f64::max)
    }

    pub fn merge(&mut self, other: &OccupancyField) -> Result<(), DiagnosticsError> {
        if self.counts.len() != other.counts.len() || self.district != other.district {
            return Err(DiagnosticsError::InstanceMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.steps += other.steps;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DiagnosticsError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["vertex_id", "f", "display_value"])?;
        for (v, f) in self.fractions().into_iter().enumerate() {
            out.write_record([
                v.to_string(),
                f.to_string(),
                occupancy_display(f).to_string(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Occupancy counted lazily: a vertex's count is only touched when it
/// enters or leaves the tracked district.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OccupancyAccumulator {
    district: u16,
    counts: Vec<u64>,
    since: Vec<u64>,
    inside: Vec<bool>,
    clock: u64,
}

impl OccupancyAccumulator {
    pub fn new(plan: &Plan, district: u16) -> Self {
        let n = plan.labels().len();
        OccupancyAccumulator {
            district,
            counts: vec![0; n],
            since: vec![0; n],
            inside: plan.labels().iter().map(|&l| l == district).collect(),
            clock: 0,
        }
    }

    /// Vertex `v` changed district before the current step is recorded.
    pub fn on_move(&mut self, v: usize, to: usize) {
        let now_inside = to == self.district as usize;
        if now_inside == self.inside[v] {
            return;
        }
        if self.inside[v] {
            self.counts[v] += self.clock - self.since[v];
        } else {
            self.since[v] = self.clock;
        }
        self.inside[v] = now_inside;
    }

    /// Records the current plan as one step.
    pub fn tick(&mut self) {
        self.clock += 1;
    }

    pub fn field(&self) -> OccupancyField {
        let counts = self
            .counts
            .iter()
            .zip(&self.since)
            .zip(&self.inside)
            .map(|((&c, &s), &i)| if i { c + self.clock - s } else { c })
            .collect();
        OccupancyField {
            district: self.district,
            counts,
            steps: self.clock,
        }
    }
}

/// Plans recorded every `interval` steps, starting with step 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotTrace {
    pub interval: usize,
    pub n_districts: usize,
    pub snapshots: Vec<Vec<u8>>,
}

impl SnapshotTrace {
    pub fn new(interval: usize, n_districts: usize) -> Self {
        SnapshotTrace {
            interval,
            n_districts,
            snapshots: Vec::new(),
        }
    }

    pub fn push(&mut self, plan: &Plan) {
        self.snapshots
            .push(plan.labels().iter().map(|&l| l as u8).collect());
    }

    pub fn len_steps(&self) -> usize {
        self.snapshots.len().saturating_sub(1) * self.interval
    }
}

/// `tr((phi(a) - E)(phi(b) - E)^T)` with `E_ij = 1/d`, evaluated from the
/// `n x d` assignment matrices.
pub fn centered_overlap_trace(a: &[u8], b: &[u8], d: usize) -> f64 {
    let e = 1.0 / d as f64;
    let mut tr = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        for k in 0..d {
            let pa = if x as usize == k { 1.0 } else { 0.0 };
            let pb = if y as usize == k { 1.0 } else { 0.0 };
            tr += (pa - e) * (pb - e);
        }
    }
    tr
}

/// `G` for one pair of plans from their Hamming distance:
/// `d (n - H) / (n (d - 1)) - 1 / (d - 1)`.
#[inline]
pub fn overlap_from_hamming(h: usize, n: usize, d: usize) -> f64 {
    let (h, n, d) = (h as f64, n as f64, d as f64);
    d * (n - h) / (n * (d - 1.0)) - 1.0 / (d - 1.0)
}

/// Running sums of bootstrap samples of `G(t)` on a grid of lags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GAccumulator {
    pub lags: Vec<usize>,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub samples: u64,
}

impl GAccumulator {
    pub fn new(lags: Vec<usize>) -> Self {
        let n = lags.len();
        GAccumulator {
            lags,
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
            samples: 0,
        }
    }

    pub fn merge(&mut self, other: &GAccumulator) -> Result<(), DiagnosticsError> {
        if self.lags != other.lags {
            return Err(DiagnosticsError::InstanceMismatch);
        }
        for i in 0..self.lags.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
        self.samples += other.samples;
        Ok(())
    }

    /// Mean and 95% normal interval `mean +- 1.96 sd / sqrt(B)` per lag.
    pub fn curve(&self) -> Vec<GPoint> {
        let b = self.samples.max(1) as f64;
        self.lags
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mean = self.sum[i] / b;
                let var = (self.sum_sq[i] / b - mean * mean).max(0.0);
                let half = if self.samples > 1 {
                    1.96 * (var * b / (b - 1.0)).sqrt() / b.sqrt()
                } else {
                    0.0
                };
                GPoint {
                    t,
                    g: mean,
                    ci_low: mean - half,
                    ci_high: mean + half,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GPoint {
    pub t: usize,
    pub g: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Lags `0, stride, 2 stride, ..., horizon`.
pub fn lag_grid(horizon: usize, stride: usize) -> Vec<usize> {
    (0..=horizon / stride.max(1)).map(|k| k * stride).collect()
}

/// Adds `n_boot` bootstrap samples of `G(t)` from one trace. Start points
/// are drawn uniformly from the snapshots in the first `len - horizon`
/// steps.
pub fn accumulate_g<R: Rng + ?Sized>(
    acc: &mut GAccumulator,
    trace: &SnapshotTrace,
    n_boot: usize,
    rng: &mut R,
) -> Result<(), DiagnosticsError> {
    let interval = trace.interval.max(1);
    let horizon = acc.lags.last().copied().unwrap_or(0);
    if let Some(&bad) = acc.lags.iter().find(|&&t| t % interval != 0) {
        return Err(DiagnosticsError::InsufficientTrace(format!(
            "lag {bad} is not a multiple of the snapshot interval {interval}"
        )));
    }
    if trace.len_steps() <= horizon || trace.n_districts < 2 {
        return Err(DiagnosticsError::InsufficientTrace(format!(
            "{} recorded steps do not exceed the horizon {horizon}",
            trace.len_steps()
        )));
    }
    let starts = (trace.len_steps() - horizon) / interval;
    let n = trace.snapshots[0].len();
    let d = trace.n_districts;
    for _ in 0..n_boot {
        let s = rng.gen_range(0..starts);
        let base = &trace.snapshots[s];
        for (i, &t) in acc.lags.iter().enumerate() {
            let other = &trace.snapshots[s + t / interval];
            let g = overlap_from_hamming(hamming_labels(base, other), n, d);
            acc.sum[i] += g;
            acc.sum_sq[i] += g * g;
        }
    }
    acc.samples += n_boot as u64;
    Ok(())
}

/// Bootstrap estimate of `G(t)` pooled over traces.
#[allow(non_snake_case)]
pub fn estimate_G<R: Rng + ?Sized>(
    traces: &[SnapshotTrace],
    horizon: usize,
    stride: usize,
    n_boot: usize,
    rng: &mut R,
) -> Result<Vec<GPoint>, DiagnosticsError> {
    let mut acc = GAccumulator::new(lag_grid(horizon, stride));
    for trace in traces {
        accumulate_g(&mut acc, trace, n_boot, rng)?;
    }
    Ok(acc.curve())
}

pub fn write_transitions_csv<W: Write>(
    counter: &TransitionCounter,
    writer: W,
) -> Result<(), DiagnosticsError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["from", "to", "count"])?;
    for a in Metastate::ALL {
        for b in Metastate::ALL {
            if a != b {
                out.write_record([
                    a.letter(),
                    b.letter(),
                    &counter.counts[a.index()][b.index()].to_string(),
                ])?;
            }
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_g_curve_csv<W: Write>(curve: &[GPoint], writer: W) -> Result<(), DiagnosticsError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["t", "G", "ci_low", "ci_high"])?;
    for p in curve {
        out.write_record([
            p.t.to_string(),
            p.g.to_string(),
            p.ci_low.to_string(),
            p.ci_high.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
