//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    /// Dense decompositions are refused above the desk-scale ceiling.
    #[error("dense path refused: {0}; use iterative estimates or raise ELLQ_DENSE_CEILING")]
    DenseRefusal(String),

    #[error("factorization breakdown: {0}")]
    Factorization(String),

    #[error("divergence at step {step} (t = {t}): non-finite state; the step-size policy was violated")]
    Divergence { step: usize, t: f64 },

    #[error("undefined probability: joint state has zero norm")]
    UndefinedProbability,

    #[error("invalid threshold: beta0 = {beta0:.6} >= 1 for C_tail = {tail_gain:.6}; lower p0")]
    InvalidThreshold { beta0: f64, tail_gain: f64 },

    #[error(
        "no entry: schedule exhausted after {tested} checkpoints, last p_hat = {last_p_hat}, \
         p0 = {p0}; raise p0, N_shot, or the checkpoint budget"
    )]
    NoEntry {
        tested: usize,
        last_p_hat: f64,
        p0: f64,
    },

    #[error("unknown right-hand-side label: {0}")]
    UnknownLabel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit-code class: 2 for configuration problems, 1 for numerical failures.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::DimensionMismatch(_) | Error::UnknownLabel(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
