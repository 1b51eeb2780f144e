use thiserror::Error;

/// Errors raised anywhere in the urn toolkit.
///
/// Colors and indices in messages are 1-based labels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("urn needs at least two colors, got {0}")]
    TooFewColors(usize),
    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("d0 = {d0} is outside [1, {d}]")]
    BadD0 { d0: usize, d: usize },
    #[error("invalid color permutation: {0}")]
    BadPermutation(String),
    #[error("initial composition a_{color} = {value} must be positive and finite")]
    NonPositiveInitial { color: usize, value: f64 },
    #[error("color {color}: {reason}")]
    BadSupport { color: usize, reason: String },
    #[error("color {color} has mean {found} at n = {n}, but color 1 has mean {expected}")]
    MeanMismatch {
        color: usize,
        n: u64,
        expected: f64,
        found: f64,
    },
    #[error("domination violated: m = {m} must exceed lambda0 = {lambda0}")]
    DominationViolation { m: f64, lambda0: f64 },
    #[error("checkpoint list is empty")]
    EmptyCheckpoints,
    #[error("bad checkpoints: {0}")]
    BadCheckpoints(String),
    #[error("proxy horizon {proxy_horizon} is too small (needs at least {required})")]
    HorizonTooSmall { proxy_horizon: u64, required: u64 },
    #[error("limit proxy does not fit this snapshot: {0}")]
    ProxyMismatch(String),
    #[error("lambda = {lambda} outside ({lower}, 1]")]
    LambdaOutOfRange { lambda: f64, lower: f64 },
    #[error("pooled mean reinforcement m_n is zero")]
    ZeroPooledMean,
    #[error("estimator undefined: color {0} has never been drawn")]
    UndefinedEstimator(usize),
    #[error("mean estimate over the candidate set is zero")]
    ZeroMean,
    #[error("alpha = {0} must lie in [0, 1]")]
    BadAlpha(f64),
    #[error("probability {0} must lie in (0, 1)")]
    BadProbability(f64),
    #[error("candidate set J* needs at least two colors, got {0}")]
    SmallJstar(usize),
    #[error("color {color} is not a valid index (d = {d})")]
    BadColor { color: usize, d: usize },
    #[error("bad panel: {0}")]
    BadPanel(String),
    #[error("need at least {required} samples, got {found}")]
    TooFewSamples { required: usize, found: usize },
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
