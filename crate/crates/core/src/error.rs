use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite adjoint at tape node {node} ({kind})")]
    NonFiniteAdjoint { node: usize, kind: &'static str },

    #[error("numerical divergence at time step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("training diverged at iteration {iteration} (run {run}): {source}")]
    TrainingDiverged {
        run: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
        last_good: Option<Box<crate::deep::TrainReport>>,
    },

    #[error("ill-conditioned regression: Gram condition number {cond:.3e} exceeds {limit:.1e}")]
    IllConditioned { cond: f64, limit: f64 },

    #[error("insufficient samples: {samples} samples for a basis of dimension {dim} (need at least {needed})")]
    InsufficientSamples { samples: usize, dim: usize, needed: usize },

    #[error("problem `{0}` has no exact solution")]
    MissingExactSolution(String),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("self-check failed: {0}")]
    Verification(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownProblem(_) => 2,
            Error::Divergence { .. } | Error::TrainingDiverged { .. } | Error::NonFinite(_) => 3,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::NonFiniteAdjoint { .. } => "non_finite_adjoint",
            Error::Divergence { .. } => "divergence",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::MissingExactSolution(_) => "missing_exact_solution",
            Error::UnknownProblem(_) => "unknown_problem",
            Error::Config(_) => "config",
            Error::Verification(_) => "verification",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}
