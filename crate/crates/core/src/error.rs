use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid unfolding mode {0}; expected 1, 2 or 3")]
    InvalidMode(usize),

    #[error("division by zero at entry ({row}, {col})")]
    Singular { row: usize, col: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("identifiability violated: {0}")]
    Identifiability(String),

    #[error("stage-{stage} ALS produced a non-finite iterate at iteration {iteration}")]
    Divergence { stage: u8, iteration: usize },

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("sequence of length {len} is too short for ESPRIT (need at least {min})")]
    InsufficientLength { len: usize, min: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("all {trials} trials failed in cell (sweep value {sweep_value}, {snr_db} dB)")]
    EmptyCell {
        sweep_value: f64,
        snr_db: f64,
        trials: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's inputs rather than by the
    /// computation itself (bad dimensions, configuration, identifiability).
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::InvalidMode(_)
                | Error::Identifiability(_)
                | Error::Domain(_)
                | Error::InsufficientLength { .. }
                | Error::Config(_)
        )
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
