use thiserror::Error;

/// Errors raised while loading or validating a precinct graph.
#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed graph file: {0}")]
    Malformed(String),
    #[error("duplicate id {0}")]
    DuplicateId(usize),
    #[error("vertex ids must be dense 0..{n}, found id {id}")]
    SparseIds { id: usize, n: usize },
    #[error("edge ({u},{v}) references unknown vertex {missing}")]
    UnknownVertex { u: usize, v: usize, missing: usize },
    #[error("self loop on vertex {0}")]
    SelfLoop(usize),
    #[error("edge ({0},{1}) listed more than once")]
    DuplicateEdge(usize, usize),
    #[error("asymmetric adjacency between {0} and {1}")]
    Asymmetric(usize, usize),
    #[error("graph is disconnected: vertex {0} unreachable from vertex 0")]
    Disconnected(usize),
    #[error("vertex {id}: {reason}")]
    BadAttribute { id: usize, reason: String },
}

/// Errors for plan construction, flips and plan file I/O.
#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plan has {labels} labels but graph has {vertices} vertices")]
    SizeMismatch { labels: usize, vertices: usize },
    #[error("vertex {vertex} has district {district}, expected 1..={n_districts}")]
    LabelOutOfRange {
        vertex: usize,
        district: usize,
        n_districts: usize,
    },
    #[error("flip ({u},{v}) violates its precondition: {reason}")]
    BadFlip { u: usize, v: usize, reason: String },
    #[error("district {0} is empty")]
    EmptyDistrict(usize),
    #[error("plans belong to different instances")]
    InstanceMismatch,
    #[error("plan file: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from the sampling kernels.
#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("cannot sample from an empty candidate set")]
    EmptyCandidates,
    #[error(
        "skewed reversibility violated for flow {flow}: proposal {from:#018x} -> {to:#018x} has no reverse move in the opposite orientation"
    )]
    ReverseMissing { flow: usize, from: u64, to: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("flip {0:?} is not a conflicted edge of the current plan")]
    NotConflicted((usize, usize)),
}

/// Errors from the exact enumeration oracle.
#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{what} has {size} entries, above the cap of {cap}; use a smaller instance")]
    CapExceeded { what: &'static str, size: u128, cap: u128 },
    #[error("fingerprint collision between plans {0} and {1}")]
    FingerprintCollision(usize, usize),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Errors for diagnostics that need a specific instance shape.
#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("unsupported instance: {0}")]
    Unsupported(String),
    #[error("trace too short: {0}")]
    InsufficientTrace(String),
    #[error("plans belong to different instances")]
    InstanceMismatch,
    #[error("csv output: {0}")]
    Csv(String),
}

impl From<csv::Error> for DiagnosticsError {
    fn from(e: csv::Error) -> Self {
        DiagnosticsError::Csv(e.to_string())
    }
}

/// Errors from configuring or running an experiment.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path} was written for config {found}, current config is {expected}")]
    ConfigMismatch {
        path: std::path::PathBuf,
        expected: String,
        found: String,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("chain {chain} failed at step {step}: {source}; checkpoint written to {checkpoint}")]
    Runtime {
        chain: usize,
        step: u64,
        source: SamplerError,
        checkpoint: std::path::PathBuf,
    },
}
