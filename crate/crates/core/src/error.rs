use alloc::string::String;

/// Errors produced by the simulation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid configuration sample: {0}")]
    InvalidSample(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged: non-finite loss")]
    Diverged,
    #[error("partition failed: no valid split after {0} attempts")]
    RetriesExhausted(usize),
    #[error("budget infeasible: {0}")]
    BudgetInfeasible(String),
    #[error("checkpoint for round {0} not found")]
    MissingCheckpoint(usize),
    #[error("policy produced a non-finite output")]
    NonFinitePolicy,
}

pub type Result<T> = core::result::Result<T, Error>;
