use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("state-space sector has {states} configurations, the oracle accepts at most {limit}")]
    SectorTooLarge { states: usize, limit: usize },

    #[error("covariation needs at least 2 realizations per profile, got {0}")]
    TooFewRealizations(usize),

    #[error("trajectory is missing the snapshot at t = {0}")]
    MissingSnapshot(f64),

    #[error("non-finite loss while training {model} at epoch {epoch}: {loss}")]
    NonFiniteLoss {
        model: &'static str,
        epoch: usize,
        loss: f64,
    },

    #[error("model {0} has not been trained")]
    Untrained(&'static str),

    #[error("{excluded} of {total} ensemble realizations produced non-finite fields")]
    TooManyExclusions { excluded: usize, total: usize },

    #[error("integration produced a non-finite density at t = {0}")]
    NonFiniteState(f64),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
