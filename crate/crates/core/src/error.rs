use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: expected {expected}, got {actual}")]
    InvalidShape { expected: String, actual: String },

    #[error("layout mismatch: expected {expected} layout, got {actual}")]
    LayoutMismatch { expected: &'static str, actual: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("window length {f} does not tile latent length {l}")]
    Tiling { l: usize, f: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },

    #[error("numeric overflow at timestep {timestep}{}", window.map(|w| format!(", window {w}")).unwrap_or_default())]
    NumericOverflow { timestep: usize, window: Option<usize> },

    #[error("degenerate bone ending at joint {joint}: zero driving length, nonzero reference length")]
    DegenerateBone { joint: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::InvalidShape { expected: expected.to_string(), actual: actual.to_string() }
    }
}
