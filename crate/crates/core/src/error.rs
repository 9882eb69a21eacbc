use thiserror::Error;

/// Errors raised by the tensor, solver, model, and metric routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("negative entry in {0}")]
    NegativeInput(&'static str),

    #[error("rank {rank} exceeds min(M, N) = {limit}")]
    RankTooLarge { rank: usize, limit: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("target signal is constant; a flat constraint column is degenerate")]
    ConstantSignal,

    #[error("target signal is required for the tsfm attention variant")]
    MissingTarget,

    #[error("signal too short: {duration_s:.2} s, need at least {required_s:.2} s")]
    SignalTooShort { duration_s: f64, required_s: f64 },

    #[error("band upper edge {hi_hz} Hz exceeds Nyquist {nyquist_hz} Hz")]
    BandAboveNyquist { hi_hz: f64, nyquist_hz: f64 },

    #[error("reference rate {rate:.2}/min lies outside the band [{lo:.2}, {hi:.2}]/min")]
    RateOutsideBand { rate: f64, lo: f64, hi: f64 },

    #[error("mixed sampling rates: {0} Hz and {1} Hz")]
    MixedSamplingRates(f64, f64),

    #[error("{metric}: {reason}")]
    MetricPrecondition { metric: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
