use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("invalid token {token} for vocabulary of size {vocab_size}")]
    InvalidToken { token: u32, vocab_size: usize },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("entropy is undefined on a truncated distribution (position {position})")]
    Truncation { position: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("decode aborted at step {step}: {source}")]
    Decode {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid window: w={window} exceeds sequence length {len}")]
    InvalidWindow { window: usize, len: usize },

    #[error("calibration infeasible: target fpr {target} is below the achievable floor {floor}")]
    CalibrationInfeasible { target: f64, floor: f64 },

    #[error("degenerate attack: {0}")]
    DegenerateAttack(String),

    #[error("bridge error: {0}")]
    Bridge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
