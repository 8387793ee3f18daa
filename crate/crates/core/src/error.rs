use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame has {found} channels, expected {expected}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("window too short: {0} samples (need at least 2)")]
    WindowTooShort(usize),

    #[error("movement id {0} out of range (0..=12)")]
    InvalidMovement(usize),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("tick {tick} out of range for an episode of {len} ticks")]
    TickOutOfRange { tick: usize, len: usize },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("return {0} outside the attainable range [-2740, 1200]")]
    ReturnOutOfRange(f64),

    #[error("chart layout infeasible: {0}")]
    InfeasibleChart(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("rest MAV is zero on channel {0}")]
    ZeroRestMav(usize),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("wilcoxon test needs nonzero differences (got {0})")]
    TooFewDifferences(usize),

    #[error("illegal phase transition from {from} to {to}")]
    IllegalTransition { from: String, to: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported schema tag {found:?}, expected {expected:?}")]
    Schema { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
