use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A state component became NaN or infinite during integration.
    #[error("integration diverged at t = {time} min")]
    IntegrationDiverged { time: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("population is extinct")]
    PopulationExtinct,

    #[error("record too short: {0}")]
    RecordTooShort(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
