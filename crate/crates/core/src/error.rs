use thiserror::Error;

/// Errors raised by the loading, delay, and equilibrium machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown arc id `{0}`")]
    UnknownArc(String),
    #[error("unknown path id `{0}`")]
    UnknownPath(String),
    #[error("unknown od pair ({0}, {1})")]
    UnknownOd(String, String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid arc `{id}`: {reason}")]
    InvalidArc { id: String, reason: String },
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("invalid flow: {0}")]
    InvalidFlow(String),
    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),
    #[error("path flow vectors have mismatched path sets: {0}")]
    MismatchedPaths(String),
    #[error("evaluation grid is empty")]
    EmptyGrid,
    #[error("horizon exhausted: needed time {needed}, computed up to {available}")]
    HorizonExhausted { needed: f64, available: f64 },
    #[error("infeasible path flow vector: {0}")]
    Infeasible(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("demand volume must be nonnegative, got {0}")]
    NegativeDemand(f64),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
