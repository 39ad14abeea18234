use thiserror::Error;

/// Errors raised anywhere in the search stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("adjacency bit length mismatch: expected {expected}, got {got}")]
    BitLengthMismatch { expected: usize, got: usize },

    #[error("op index {op} out of range for {d} op types (node {node})")]
    OpOutOfRange { node: usize, op: usize, d: usize },

    #[error("node index {index} out of range for {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },

    #[error("invalid roles: {0}")]
    InvalidRoles(String),

    #[error("roles missing: {0}")]
    RolesMissing(&'static str),

    #[error("parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be scalar, got shape {0}x{1}")]
    NonScalarLoss(usize, usize),

    #[error("probability mass 1: log(1 - P) diverges")]
    ProbabilityMassOne,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rejection sampling exhausted after {tries} tries: {histogram}")]
    RejectionExhausted { tries: usize, histogram: String },

    #[error("space too large to enumerate: {0} graphs exceeds guard {1}")]
    EnumerationGuard(String, u64),

    #[error("graph not found in tabular evaluator")]
    TabularMiss,

    #[error("duplicate tabular entry at line {line}")]
    DuplicateTabularEntry { line: usize },

    #[error("evaluation budget exhausted: consumed {consumed}, limit {limit}")]
    BudgetExhausted { consumed: f64, limit: f64 },

    #[error("empty replay buffer")]
    EmptyBuffer,

    #[error("checkpoint format version mismatch: expected {expected}, got {got}")]
    CheckpointVersion { expected: u32, got: u32 },

    #[error("checkpoint corrupted: {0}")]
    CheckpointCorrupt(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
