use thiserror::Error;

/// Errors raised by the learners, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("argument {value} outside the domain ({lo}, {hi}) of the {kind} potential")]
    Domain {
        kind: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("gradient value {0} is outside the range of the potential's gradient")]
    GradientRange(f64),

    #[error("stability is unbounded: shifted gradient {0} leaves the gradient range")]
    UnboundedStability(f64),

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("dual bracket could not be expanded after {0} doublings")]
    DualBracket(usize),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("x lies outside the convex hull of the action set (residual {0:e})")]
    Decomposition(f64),

    #[error("game parse error: {0}")]
    GameParse(String),

    #[error("game rejected: {0}")]
    GameRejected(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("algorithm refused the game: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from user input (configs, game files) rather
    /// than an internal fault.
    pub fn is_refusal(&self) -> bool {
        matches!(
            self,
            Error::GameParse(_)
                | Error::GameRejected(_)
                | Error::Config(_)
                | Error::Incompatible(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
