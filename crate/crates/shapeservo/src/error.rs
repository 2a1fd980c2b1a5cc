use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("equilibrium solver diverged: residual {residual:.3e} N after {iterations} iterations")]
    SolverDivergence { residual: f64, iterations: usize },

    #[error("barrier violation on channel {channel}: xi = {xi:.6}")]
    BarrierViolation { channel: usize, xi: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("scenario field `{field}`: {message}")]
    Scenario { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn scenario(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            field: field.into(),
            message: message.into(),
        }
    }
}
