use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("decoding order violated: user {owner} is decoded after user {decoder} on beam {beam}")]
    OrderViolation {
        owner: usize,
        decoder: usize,
        beam: usize,
    },

    #[error("user {user} has zero gain on its own beam {beam}")]
    ZeroOwnGain { user: usize, beam: usize },

    #[error("spectral radius {0} is not below one")]
    RadiusNotBelowOne(f64),

    #[error("schedule is infeasible for the QoS and decoding-order constraints")]
    InfeasibleSchedule,

    #[error("search space of {0} candidates exceeds the exhaustive-search guard")]
    SearchSpaceTooLarge(u128),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
