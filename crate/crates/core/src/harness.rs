//! Experiment configuration and multi-chain execution with checkpoints.
//!
//! Chain `i` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `i`,
//! so results do not depend on how chains are scheduled over threads.
//! Bootstrap resampling for `G(t)` uses stream `u64::MAX - i`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    accumulate_g, lag_grid, write_g_curve_csv, write_transitions_csv, GAccumulator, GPoint,
    MetastateTracker, OccupancyAccumulator, OccupancyField, SnapshotTrace, TransitionCounter,
};
use crate::error::{HarnessError, SamplerError};
use crate::flows::{ComFlow, D2dFlow, VectorField};
use crate::graph::{build_lattice, load_graph, PrecinctGraph};
use crate::model::Model;
use crate::msmh::{ExtendedState, FlowFamily, LazyParams, Momentum, MsmhChain, StepEvent};
use crate::plan::{lattice_stripes, Plan, ValiditySpec};
use crate::score::ScoreSpec;
use crate::snf::SnfChain;

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Snf,
    SnfTempered,
    ComFlow,
    D2dFlow,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Snf,
        Method::SnfTempered,
        Method::ComFlow,
        Method::D2dFlow,
    ];

    pub fn default_beta(self) -> f64 {
        match self {
            Method::Snf => 0.0,
            _ => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Snf => "snf",
            Method::SnfTempered => "snf-tempered",
            Method::ComFlow => "com-flow",
            Method::D2dFlow => "d2d-flow",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}; expected snf, snf-tempered, com-flow or d2d-flow"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    Lattice { width: usize, height: usize },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GSettings {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn default_horizon() -> usize {
    50_000
}
fn default_stride() -> usize {
    100
}
fn default_bootstrap() -> usize {
    100_000
}
fn default_interval() -> usize {
    10
}
fn default_band() -> usize {
    3
}

impl Default for GSettings {
    fn default() -> Self {
        GSettings {
            horizon: default_horizon(),
            stride: default_stride(),
            bootstrap: default_bootstrap(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    pub n_districts: usize,
    pub validity: ValiditySpec,
    pub score: ScoreSpec,
    pub method: Method,
    /// Defaults to 0 for `snf` and 0.5 otherwise.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub field: Option<VectorField>,
    pub chains: usize,
    pub steps: u64,
    pub seed: u64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub lazy_hold: f64,
    #[serde(default = "default_interval")]
    pub snapshot_interval: usize,
    #[serde(default)]
    pub g: GSettings,
    #[serde(default = "default_band")]
    pub band: usize,
    /// Plan CSV; the default is the horizontal cut with district 1 north.
    #[serde(default)]
    pub initial_plan: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

fn json_err(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Json { context, source }
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, HarnessError> {
        serde_json::from_slice(bytes).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let bytes = fs::read(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&bytes)
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.method.default_beta())
    }

    pub fn lazy(&self) -> LazyParams {
        LazyParams {
            epsilon: self.epsilon,
            hold: self.lazy_hold,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.chains < 1 {
            return Err(config_err("chains must be at least 1"));
        }
        if self.steps < 1 {
            return Err(config_err("steps must be at least 1"));
        }
        if self.n_districts < 1 {
            return Err(config_err("n_districts must be at least 1"));
        }
        let beta = self.beta();
        if !(0.0..=1.0).contains(&beta) {
            return Err(config_err(format!("beta {beta} outside [0, 1]")));
        }
        if self.method == Method::ComFlow && self.field.is_none() {
            return Err(config_err("com-flow requires a field"));
        }
        self.lazy().check().map_err(|e| config_err(e.to_string()))?;
        if matches!(self.method, Method::Snf | Method::SnfTempered) && self.epsilon > 0.0 {
            return Err(config_err("epsilon needs a method with momenta"));
        }
        if self.snapshot_interval < 1 {
            return Err(config_err("snapshot_interval must be at least 1"));
        }
        if self.g.stride < 1 || !self.g.stride.is_multiple_of(self.snapshot_interval) {
            return Err(config_err(format!(
                "g.stride {} must be a positive multiple of snapshot_interval {}",
                self.g.stride, self.snapshot_interval
            )));
        }
        if self.g.bootstrap < 1 {
            return Err(config_err("g.bootstrap must be at least 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(config_err("checkpoint_every must be positive"));
        }
        if self.threads == Some(0) {
            return Err(config_err("threads must be positive"));
        }
        self.validity.check().map_err(config_err)?;
        self.score.check().map_err(config_err)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every key that affects results.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            for key in ["output_dir", "threads", "checkpoint_every"] {
                map.remove(key);
            }
        }
        let text = serde_json::to_string(&value).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }

    /// Lag grid actually used: the configured horizon, shortened to fit
    /// inside the run.
    pub fn effective_g_horizon(&self) -> usize {
        let stride = self.g.stride;
        let max = (self.steps.saturating_sub(1) as usize / stride) * stride;
        self.g.horizon.min(max) / stride * stride
    }

    pub fn build_model(&self) -> Result<Model, HarnessError> {
        let graph = match &self.graph {
            GraphSource::Lattice { width, height } => build_lattice(*width, *height)?,
            GraphSource::File(path) => {
                let bytes = fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
                load_graph(&bytes)?
            }
        };
        Model::new(graph, self.n_districts, self.validity.clone(), self.score.clone())
            .map_err(config_err)
    }

    pub fn initial_plan(&self, graph: &PrecinctGraph) -> Result<Plan, HarnessError> {
        match &self.initial_plan {
            Some(path) => {
                let file =
                    fs::File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
                Ok(Plan::read_csv(graph, BufReader::new(file), self.n_districts)?)
            }
            None => lattice_stripes(graph, self.n_districts).map_err(|_| {
                config_err("the default initial plan needs a lattice graph; set initial_plan")
            }),
        }
    }
}

enum Sampler {
    Snf(SnfChain),
    Com(MsmhChain<ComFlow>),
    D2d(MsmhChain<D2dFlow>),
}

impl Sampler {
    fn new(
        config: &ExperimentConfig,
        model: &Model,
        plan: Plan,
        momenta: Option<Vec<Momentum>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, SamplerError> {
        let beta = config.beta();
        fn flow<F: FlowFamily>(
            family: F,
            model: &Model,
            plan: Plan,
            momenta: Option<Vec<Momentum>>,
            beta: f64,
            lazy: LazyParams,
            rng: &mut ChaCha8Rng,
        ) -> Result<MsmhChain<F>, SamplerError> {
            let n = family.num_flows();
            let state = match momenta {
                Some(m) => ExtendedState::new(plan, m),
                None => ExtendedState::with_uniform_momenta(plan, n, rng),
            };
            MsmhChain::new(family, model, state, beta)?.with_lazy(lazy)
        }
        Ok(match config.method {
            Method::Snf | Method::SnfTempered => Sampler::Snf(SnfChain::new(model, plan, beta)?),
            Method::ComFlow => {
                let field = config.field.clone().expect("validated");
                Sampler::Com(flow(
                    ComFlow::new(field),
                    model,
                    plan,
                    momenta,
                    beta,
                    config.lazy(),
                    rng,
                )?)
            }
            Method::D2dFlow => Sampler::D2d(flow(
                D2dFlow::new(model.n_districts),
                model,
                plan,
                momenta,
                beta,
                config.lazy(),
                rng,
            )?),
        })
    }

    fn step(&mut self, model: &Model, rng: &mut ChaCha8Rng, hold: f64) -> Result<StepEvent, SamplerError> {
        match self {
            Sampler::Snf(c) => {
                if hold > 0.0 && rand::Rng::gen::<f64>(rng) < hold {
                    return Ok(StepEvent::Hold);
                }
                Ok(match c.step(model, rng) {
                    Some(vertex) => StepEvent::Accepted { flow: 0, vertex },
                    None if c.neighborhood().is_empty() => StepEvent::Hold,
                    None => StepEvent::Rejected { flow: 0 },
                })
            }
            Sampler::Com(c) => c.step(model, rng),
            Sampler::D2d(c) => c.step(model, rng),
        }
    }

    fn plan(&self) -> &Plan {
        match self {
            Sampler::Snf(c) => c.plan(),
            Sampler::Com(c) => c.plan(),
            Sampler::D2d(c) => c.plan(),
        }
    }

    fn momenta(&self) -> Vec<Momentum> {
        match self {
            Sampler::Snf(_) => Vec::new(),
            Sampler::Com(c) => c.momenta().to_vec(),
            Sampler::D2d(c) => c.momenta().to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounters {
    pub accepted: u64,
    pub rejected: u64,
    pub forced_flips: u64,
    pub lazy_flips: u64,
    pub holds: u64,
}

impl StepCounters {
    fn record(&mut self, event: &StepEvent) {
        match event {
            StepEvent::Accepted { .. } => self.accepted += 1,
            StepEvent::Rejected { .. } => self.rejected += 1,
            StepEvent::ForcedFlip { .. } => self.forced_flips += 1,
            StepEvent::LazyFlip { .. } => self.lazy_flips += 1,
            StepEvent::Hold => self.holds += 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ChainCheckpoint {
    config_hash: String,
    build: String,
    chain: usize,
    steps_done: u64,
    complete: bool,
    rng: ChaCha8Rng,
    labels: Vec<u16>,
    momenta: Vec<Momentum>,
    counters: StepCounters,
    transitions: Option<TransitionCounter>,
    occupancy: OccupancyAccumulator,
    snapshots: usize,
}

/// One row of `chains.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub steps: u64,
    pub acceptance_rate: f64,
    pub accepted: u64,
    pub rejected: u64,
    pub forced_flips: u64,
    pub lazy_flips: u64,
    pub holds: u64,
    pub transitions: u64,
    pub freq_n: f64,
    pub freq_e: f64,
    pub freq_s: f64,
    pub freq_w: f64,
    pub max_f_deviation: f64,
}

#[derive(Clone, Debug)]
pub struct ChainResult {
    pub summary: ChainSummary,
    pub occupancy: OccupancyField,
    pub transitions: Option<TransitionCounter>,
    pub g: GAccumulator,
}

/// Aggregated results of a completed run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub chains: Vec<ChainResult>,
    pub occupancy: OccupancyField,
    pub transitions: Option<TransitionCounter>,
    pub g_curve: Vec<GPoint>,
    pub output_dir: PathBuf,
}

type ChainOutcome = Result<Option<ChainResult>, HarnessError>;

#[derive(Clone, Debug)]
pub enum RunOutcome {
    Completed(Box<RunSummary>),
    /// Stopped by [`RunControl::stop_after`]; resume from the directory.
    Interrupted { checkpoint_dir: PathBuf },
}

/// Execution controls that do not change results.
#[derive(Clone, Debug, Default)]
pub struct RunControl {
    /// Resume from the checkpoints in this directory.
    pub resume: Option<PathBuf>,
    /// Stop every chain after this many steps and checkpoint.
    pub stop_after: Option<u64>,
}

pub fn checkpoint_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("checkpoint")
}

fn chain_paths(dir: &Path, chain: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("chain-{chain}.json")),
        dir.join(format!("chain-{chain}.snap")),
    )
}

const SNAP_MAGIC: &[u8; 8] = b"DFSNAP01";

fn write_snapshots(path: &Path, trace: &SnapshotTrace) -> Result<(), HarnessError> {
    let tmp = path.with_extension("snap.tmp");
    let file = fs::File::create(&tmp).map_err(io_err(format!("creating {}", tmp.display())))?;
    let mut out = BufWriter::new(file);
    let n = trace.snapshots.first().map_or(0, |s| s.len());
    let mut write = || -> std::io::Result<()> {
        out.write_all(SNAP_MAGIC)?;
        out.write_all(&(n as u64).to_le_bytes())?;
        out.write_all(&(trace.interval as u64).to_le_bytes())?;
        out.write_all(&(trace.n_districts as u64).to_le_bytes())?;
        out.write_all(&(trace.snapshots.len() as u64).to_le_bytes())?;
        for s in &trace.snapshots {
            out.write_all(s)?;
        }
        out.flush()
    };
    write().map_err(io_err(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_err(format!("renaming {}", tmp.display())))
}

fn read_snapshots(path: &Path, count: usize) -> Result<SnapshotTrace, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    let mut input = BufReader::new(file);
    let bad = |what: &str| HarnessError::Io {
        context: format!("reading {}", path.display()),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, what.to_string()),
    };
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io_err(format!("reading {}", path.display())))?;
    if &magic != SNAP_MAGIC {
        return Err(bad("not a snapshot file"));
    }
    let mut word = || -> Result<usize, HarnessError> {
        let mut b = [0u8; 8];
        input.read_exact(&mut b).map_err(io_err(format!("reading {}", path.display())))?;
        Ok(u64::from_le_bytes(b) as usize)
    };
    let (n, interval, n_districts, stored) = (word()?, word()?, word()?, word()?);
    if stored < count {
        return Err(bad("snapshot file shorter than its checkpoint"));
    }
    let mut trace = SnapshotTrace::new(interval, n_districts);
    for _ in 0..count {
        let mut s = vec![0u8; n];
        input.read_exact(&mut s).map_err(io_err(format!("reading {}", path.display())))?;
        trace.snapshots.push(s);
    }
    Ok(trace)
}

struct ChainRun<'a> {
    config: &'a ExperimentConfig,
    model: &'a Model,
    hash: &'a str,
    dir: PathBuf,
}

impl ChainRun<'_> {
    #[allow(clippy::too_many_arguments)]
    fn save(
        &self,
        chain: usize,
        steps_done: u64,
        complete: bool,
        rng: &ChaCha8Rng,
        sampler: &Sampler,
        counters: &StepCounters,
        transitions: &Option<TransitionCounter>,
        occupancy: &OccupancyAccumulator,
        trace: &SnapshotTrace,
    ) -> Result<PathBuf, HarnessError> {
        fs::create_dir_all(&self.dir).map_err(io_err(format!("creating {}", self.dir.display())))?;
        let (json_path, snap_path) = chain_paths(&self.dir, chain);
        write_snapshots(&snap_path, trace)?;
        let cp = ChainCheckpoint {
            config_hash: self.hash.to_string(),
            build: BUILD_ID.to_string(),
            chain,
            steps_done,
            complete,
            rng: rng.clone(),
            labels: sampler.plan().labels().to_vec(),
            momenta: sampler.momenta(),
            counters: counters.clone(),
            transitions: transitions.clone(),
            occupancy: occupancy.clone(),
            snapshots: trace.snapshots.len(),
        };
        let tmp = json_path.with_extension("json.tmp");
        let text = serde_json::to_vec(&cp).map_err(json_err("encoding checkpoint"))?;
        fs::write(&tmp, text).map_err(io_err(format!("writing {}", tmp.display())))?;
        fs::rename(&tmp, &json_path).map_err(io_err(format!("renaming {}", tmp.display())))?;
        Ok(json_path)
    }

    fn load(&self, dir: &Path, chain: usize) -> Result<Option<(ChainCheckpoint, SnapshotTrace)>, HarnessError> {
        let (json_path, snap_path) = chain_paths(dir, chain);
        if !json_path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&json_path).map_err(io_err(format!("reading {}", json_path.display())))?;
        let cp: ChainCheckpoint =
            serde_json::from_slice(&bytes).map_err(json_err(format!("parsing {}", json_path.display())))?;
        if cp.config_hash != self.hash {
            return Err(HarnessError::ConfigMismatch {
                path: json_path,
                expected: self.hash.to_string(),
                found: cp.config_hash,
            });
        }
        let trace = read_snapshots(&snap_path, cp.snapshots)?;
        Ok(Some((cp, trace)))
    }

    fn run(&self, chain: usize, control: &RunControl) -> Result<Option<ChainResult>, HarnessError> {
        let config = self.config;
        let model = self.model;
        let resumed = match &control.resume {
            Some(dir) => self.load(dir, chain)?,
            None => None,
        };
        let (mut rng, mut sampler, mut counters, mut transitions, mut occupancy, mut trace, mut t) =
            match resumed {
                Some((cp, trace)) => {
                    let plan = Plan::from_labels(&model.graph, cp.labels, model.n_districts)?;
                    let mut rng = cp.rng;
                    let momenta = Some(cp.momenta).filter(|m| !m.is_empty());
                    let sampler = Sampler::new(config, model, plan, momenta, &mut rng).map_err(|e| {
                        config_err(format!("checkpoint for chain {chain}: {e}"))
                    })?;
                    (rng, sampler, cp.counters, cp.transitions, cp.occupancy, trace, cp.steps_done)
                }
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(chain as u64);
                    let plan = config.initial_plan(&model.graph)?;
                    if !model.admits(&plan) {
                        return Err(config_err("initial plan is outside the plan space"));
                    }
                    let occupancy = OccupancyAccumulator::new(&plan, 0);
                    let transitions = MetastateTracker::new(&model.graph, &plan, config.band)
                        .ok()
                        .map(|tr| {
                            let mut c = TransitionCounter::new();
                            c.start(tr.current());
                            c
                        });
                    let mut trace = SnapshotTrace::new(config.snapshot_interval, model.n_districts);
                    trace.push(&plan);
                    let sampler = Sampler::new(config, model, plan, None, &mut rng)
                        .map_err(|e| config_err(e.to_string()))?;
                    (rng, sampler, StepCounters::default(), transitions, occupancy, trace, 0)
                }
            };
        let mut tracker = match transitions {
            Some(_) => Some(MetastateTracker::new(&model.graph, sampler.plan(), config.band)?),
            None => None,
        };
        let mut labels = sampler.plan().labels().to_vec();
        let interval = config.snapshot_interval as u64;
        let stop = control.stop_after.unwrap_or(u64::MAX).min(config.steps);
        while t < stop {
            let event = match sampler.step(model, &mut rng, config.lazy_hold) {
                Ok(e) => e,
                Err(source) => {
                    let checkpoint = self.save(
                        chain, t, false, &rng, &sampler, &counters, &transitions, &occupancy, &trace,
                    )?;
                    return Err(HarnessError::Runtime {
                        chain,
                        step: t,
                        source,
                        checkpoint,
                    });
                }
            };
            t += 1;
            counters.record(&event);
            if let Some(v) = event.moved_vertex() {
                let from = labels[v] as usize;
                let to = sampler.plan().district_of(v);
                labels[v] = to as u16;
                occupancy.on_move(v, to);
                if let Some(tr) = tracker.as_mut() {
                    tr.update(v, from, to);
                }
            }
            occupancy.tick();
            if let (Some(c), Some(tr)) = (transitions.as_mut(), tracker.as_ref()) {
                c.observe(tr.current());
            }
            if t % interval == 0 {
                trace.push(sampler.plan());
            }
            if config.checkpoint_every.is_some_and(|k| t % k == 0) && t < config.steps {
                self.save(
                    chain, t, false, &rng, &sampler, &counters, &transitions, &occupancy, &trace,
                )?;
            }
        }
        let complete = t >= config.steps;
        self.save(
            chain, t, complete, &rng, &sampler, &counters, &transitions, &occupancy, &trace,
        )?;
        if !complete {
            return Ok(None);
        }

        let mut g = GAccumulator::new(lag_grid(config.effective_g_horizon(), config.g.stride));
        let mut boot = ChaCha8Rng::seed_from_u64(config.seed);
        boot.set_stream(u64::MAX - chain as u64);
        accumulate_g(&mut g, &trace, config.g.bootstrap, &mut boot)?;
        let field = occupancy.field();
        let moves = counters.accepted + counters.rejected;
        let freq = transitions.as_ref().map_or([0.0; 4], |c| c.frequencies());
        let summary = ChainSummary {
            chain,
            steps: t,
            acceptance_rate: if moves > 0 {
                counters.accepted as f64 / moves as f64
            } else {
                0.0
            },
            accepted: counters.accepted,
            rejected: counters.rejected,
            forced_flips: counters.forced_flips,
            lazy_flips: counters.lazy_flips,
            holds: counters.holds,
            transitions: transitions.as_ref().map_or(0, |c| c.total()),
            freq_n: freq[0],
            freq_e: freq[1],
            freq_s: freq[2],
            freq_w: freq[3],
            max_f_deviation: field.max_deviation(),
        };
        Ok(Some(ChainResult {
            summary,
            occupancy: field,
            transitions,
            g,
        }))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    build: &'a str,
    seed: u64,
    chain_streams: Vec<u64>,
    g_horizon: usize,
    threads: usize,
    started_unix: u64,
    wall_clock_seconds: f64,
}

/// Runs all chains of `config` and writes the output bundle.
pub fn run_experiment(config: &ExperimentConfig, control: &RunControl) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let model = config.build_model()?;
    if let Some(dir) = &control.resume {
        if !dir.is_dir() {
            return Err(HarnessError::Io {
                context: "resume".into(),
                source: std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("no checkpoint directory at {}", dir.display()),
                ),
            });
        }
    }
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(io_err(format!("creating {}", out.display())))?;
    let hash = config.hash();
    let runner = ChainRun {
        config,
        model: &model,
        hash: &hash,
        dir: checkpoint_dir(config),
    };
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(config.chains)
        .max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<ChainOutcome>>> =
        Mutex::new((0..config.chains).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let chain = next.fetch_add(1, Ordering::SeqCst);
                if chain >= config.chains {
                    break;
                }
                let r = runner.run(chain, control);
                results.lock().expect("results lock")[chain] = Some(r);
            });
        }
    });
    let mut chains = Vec::with_capacity(config.chains);
    let mut interrupted = false;
    for r in results.into_inner().expect("results lock") {
        match r.expect("every chain ran")? {
            Some(c) => chains.push(c),
            None => interrupted = true,
        }
    }
    if interrupted {
        return Ok(RunOutcome::Interrupted {
            checkpoint_dir: runner.dir,
        });
    }

    let mut occupancy = chains[0].occupancy.clone();
    let mut transitions = chains[0].transitions.clone();
    let mut g = chains[0].g.clone();
    for c in &chains[1..] {
        occupancy.merge(&c.occupancy)?;
        if let (Some(a), Some(b)) = (transitions.as_mut(), c.transitions.as_ref()) {
            a.merge(b);
        }
        g.merge(&c.g)?;
    }
    let g_curve = g.curve();

    let create = |name: &str| -> Result<BufWriter<fs::File>, HarnessError> {
        let path = out.join(name);
        fs::File::create(&path)
            .map(BufWriter::new)
            .map_err(io_err(format!("creating {}", path.display())))
    };
    occupancy.write_csv(create("occupancy.csv")?)?;
    if let Some(t) = &transitions {
        write_transitions_csv(t, create("transitions.csv")?)?;
    }
    write_g_curve_csv(&g_curve, create("g_curve.csv")?)?;
    let mut summary_csv = csv::Writer::from_writer(create("chains.csv")?);
    for c in &chains {
        summary_csv
            .serialize(&c.summary)
            .map_err(|e| HarnessError::Diagnostics(e.into()))?;
    }
    summary_csv
        .flush()
        .map_err(io_err("writing chains.csv"))?;
    let manifest = Manifest {
        config,
        config_hash: &hash,
        build: BUILD_ID,
        seed: config.seed,
        chain_streams: (0..config.chains as u64).collect(),
        g_horizon: config.effective_g_horizon(),
        threads,
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_vec_pretty(&manifest).map_err(json_err("encoding manifest"))?;
    fs::write(out.join("manifest.json"), text).map_err(io_err("writing manifest.json"))?;

    Ok(RunOutcome::Completed(Box::new(RunSummary {
        chains,
        occupancy,
        transitions,
        g_curve,
        output_dir: out.clone(),
    })))
}
