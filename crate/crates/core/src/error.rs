use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A code book cannot hold the requested number of distinct sequences.
    #[error("capacity error: requested {requested} sequences but only {available} distinct shifts exist")]
    Capacity { requested: usize, available: usize },

    /// The system or experiment configuration violates an invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A linear-algebra step failed (e.g. a covariance that is not positive definite).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The requested closed form does not cover the scenario's fading model.
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    /// A Monte Carlo run would exceed the configured cost budget.
    #[error("Monte Carlo budget exceeded: {0}")]
    Budget(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
