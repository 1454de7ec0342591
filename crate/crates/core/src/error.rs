use thiserror::Error;

/// Errors raised by the learning machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DacError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("critic of agent {agent} produced non-finite parameters at transition {t}")]
    PoisonedCritic { agent: usize, t: u64 },

    #[error("actor consensus produced non-finite parameters at actor update {update}")]
    PoisonedActor { update: u64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("graph is not connected")]
    Disconnected,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation produced a non-finite return: {0}")]
    NonFiniteReturn(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl DacError {
    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, DacError::PoisonedCritic { .. } | DacError::PoisonedActor { .. } | DacError::NonFiniteReturn(_))
    }
}

pub type Result<T> = std::result::Result<T, DacError>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(DacError::Dimension { what, expected, got })
    }
}
