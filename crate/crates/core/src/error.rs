use thiserror::Error;

/// Errors produced by environment construction, simulation, training and
/// verification.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("action index {action} out of range (n_actions = {n_actions})")]
    InvalidAction { action: usize, n_actions: usize },

    #[error("state index {state} out of range (n_states = {n_states})")]
    InvalidState { state: usize, n_states: usize },

    #[error("operation unsupported for this environment kind: {0}")]
    Unsupported(String),

    #[error("perturbation rejected: {0}")]
    InvalidPerturbation(String),

    #[error("enumeration cap exceeded: {count} policies > cap {cap}")]
    EnumerationCap { count: u128, cap: u128 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular value system: {0}")]
    SingularSystem(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
