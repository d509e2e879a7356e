use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite {what} at t={t}, path {path}, state {state:?}")]
    ModelEvaluation {
        what: &'static str,
        t: f64,
        path: usize,
        state: Vec<f64>,
    },

    #[error("non-finite driver value at node {node}, path {path}: {detail}")]
    NonFiniteDriver {
        node: usize,
        path: usize,
        detail: String,
    },

    #[error("ill-conditioned normal equations ({detail}); use a positive ridge penalty")]
    IllConditioned { detail: String },

    #[error("fixed point did not converge on window [{window_start}, {window_end}] after {} iterations; trace {trace:?}", trace.len())]
    NonConvergence {
        window_start: f64,
        window_end: f64,
        trace: Vec<f64>,
    },

    #[error("window length {h} fell below the smallest grid step {min_step}; refine the grid or reduce the driver constants")]
    WindowTooSmall { h: f64, min_step: f64 },

    #[error("overflow while evaluating {0}")]
    Overflow(String),

    #[error("structure condition violated: {0}")]
    StructureViolation(String),

    #[error("unsupported check: {0}")]
    Unsupported(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
