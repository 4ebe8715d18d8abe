use thiserror::Error;

/// Errors surfaced by game construction, evaluation and solving.
#[derive(Debug, Error)]
pub enum GameError {
    #[error("player index {0} out of range (N = {1})")]
    PlayerOutOfRange(usize, usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("strategy space for player {player} is empty: {reason}")]
    EmptySpace { player: usize, reason: String },

    #[error("utility domain violation for player {player}, dimension {dim}: {reason}")]
    DomainViolation {
        player: usize,
        dim: usize,
        reason: String,
    },

    #[error("queue instability at node {node}, class {class}: margin {margin}")]
    Instability {
        node: usize,
        class: usize,
        margin: f64,
    },

    #[error("infeasible strategy profile: {0}")]
    InfeasibleProfile(String),

    #[error("utility family {family} does not support {what}")]
    UnsupportedFamily { family: String, what: String },

    #[error("fixed-point iteration did not converge (residual {residual})")]
    FixedPointDiverged { residual: f64 },

    #[error("bisection bracket failure: {0}")]
    BracketFailure(String),

    #[error("matrix dimension {0} exceeds principal-minor enumeration limit {1}")]
    MinorLimitExceeded(usize, usize),

    #[error("inner solver did not reach tolerance (residual {residual})")]
    InnerSolveFailed { residual: f64 },

    #[error("grid too large: {points} joint points exceeds cap {cap}")]
    GridTooLarge { points: u64, cap: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GameError>;
