use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("running cost is not convex: q^2 = {q2} >= epsilon = {epsilon}")]
    ConvexityViolated { q2: f64, epsilon: f64 },

    #[error("standing condition violated: q^2(1-1/(2N))^2 = {lhs} > epsilon(1-1/N) = {rhs}")]
    Condition31Violated { lhs: f64, rhs: f64 },

    #[error("degenerate game: need at least 2 players, got {0}")]
    DegenerateGame(usize),

    #[error("bad delay: {0}")]
    BadDelay(String),

    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("default level D must be <= 0, got {0}")]
    BadLevel(f64),

    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("Riccati solution blew up (|phi| = {0} at backward step)")]
    Blowup(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("delay is zero; use the no-delay path")]
    TauZero,

    #[error("history covers {got} lag steps, need {need}")]
    HistoryLength { got: usize, need: usize },

    #[error("simulation unstable: |X| = {value} at step {step}")]
    Unstable { step: usize, value: f64 },

    #[error("Picard iteration did not converge (last residual {last:.3e})")]
    NoConvergence { last: f64, history: Vec<f64> },

    #[error("regression feature matrix is rank deficient at step {step}")]
    RegressionSingular { step: usize },

    #[error("solution not converged")]
    NotConverged,

    #[error("bad deviation: {0}")]
    BadDeviation(String),

    #[error("E2 slice at step {0} not stored (solve with full storage)")]
    SliceNotStored(usize),

    #[error("config parse error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl GameError {
    /// Whether the error comes from numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GameError::Blowup(_)
                | GameError::Unstable { .. }
                | GameError::NoConvergence { .. }
                | GameError::RegressionSingular { .. }
                | GameError::NotConverged
        )
    }
}

impl From<std::io::Error> for GameError {
    fn from(e: std::io::Error) -> Self {
        GameError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GameError>;
