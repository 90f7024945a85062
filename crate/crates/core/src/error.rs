use alloc::string::String;

/// Errors produced by the simulation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("parameter layouts are not compatible")]
    LayoutMismatch,
    #[error("parameter values contain NaN or infinity")]
    NonFinite,
    #[error("empty training data")]
    EmptyData,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("too few examples: need at least {needed}, have {available}")]
    TooFewExamples { needed: usize, available: usize },
    #[error("class {class} has {count} examples, need at least {needed}")]
    ClassTooSmall { class: usize, count: usize, needed: usize },
    #[error("size ratio {ratio} is infeasible: {reason}")]
    InfeasibleRatio { ratio: f64, reason: String },
    #[error("{owners} distinct repository owners cannot fill {clients} clients")]
    TooFewOwners { owners: usize, clients: usize },
    #[error("selection would be empty")]
    EmptySelection,
    #[error("no client updates to aggregate")]
    EmptyUpdates,
    #[error("trim fraction {0} outside [0, 0.5)")]
    TrimOutOfRange(f64),
    #[error("trimming {trimmed} per tail leaves nothing of {clients} clients")]
    OverTrimming { trimmed: usize, clients: usize },
    #[error("client update has zero examples")]
    ZeroExamples,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("rank must be at least 1")]
    NonPositiveRank,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("metric sets differ between runs: {0}")]
    MetricSetMismatch(String),
    #[error("contribution is based on version {base}, but head is {head}")]
    StaleBase { base: u64, head: u64 },
    #[error("unknown contribution {0}")]
    UnknownContribution(u64),
    #[error("unknown version {0}")]
    UnknownVersion(u64),
    #[error("contribution {0} is not pending")]
    NotPending(u64),
    #[error("contribution {0} has not been through the gate")]
    NoGateReport(u64),
    #[error("contribution {0} did not pass the gate")]
    GateFailed(u64),
    #[error("contribution {0} has not been accepted")]
    NotAccepted(u64),
    #[error("token amount must be at least 1")]
    NonPositiveAmount,
    #[error("benchmark data missing: {0}")]
    MissingBenchmark(String),
    #[error("corrupted version chain: {0}")]
    CorruptChain(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
