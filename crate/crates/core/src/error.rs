use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("time {t} s lies outside the trial window [0, {duration}] s")]
    OutsideTrial { t: f64, duration: f64 },

    #[error("empty window: {0}")]
    EmptyWindow(&'static str),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("lag of {lag} frames exceeds the available {frames} frames")]
    LagOutOfBounds { lag: i32, frames: usize },

    #[error("rank-deficient normal equations in the {0} fit")]
    RankDeficient(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("degenerate sample: zero variance")]
    DegenerateSample,

    #[error("not enough samples: need at least {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },

    #[error("empty test set")]
    EmptyTestSet,
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
