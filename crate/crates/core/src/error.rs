use thiserror::Error;

/// Errors raised by the homogenization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model file parse error: {0}")]
    Parse(String),

    #[error("quadrature unavailable: {0}")]
    QuadratureUnavailable(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("resolution too coarse: {reason} (suggested resolution {suggested})")]
    ResolutionTooCoarse { reason: String, suggested: usize },

    #[error("positivity unachievable: {0}")]
    PositivityUnachievable(String),

    #[error("reducible generator: {0}")]
    ReducibleGenerator(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("horizon too short: TV distance {tv} still above 0.5 at t = {horizon}")]
    HorizonTooShort { horizon: f64, tv: f64 },

    #[error("problem too large for dense solver: {size} unknowns (limit {limit})")]
    TooLarge { size: usize, limit: usize },

    #[error("incompatible right-hand side: π-mean {mean:e} exceeds tolerance {tol:e}")]
    IncompatibleRhs { mean: f64, tol: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("negative invariant weight {0:e} beyond round-off")]
    NegativeWeight(f64),

    #[error("invalid resolvent parameter λ = {0}")]
    InvalidLambda(f64),

    #[error("corrector residual {residual:e} exceeds {limit:e}")]
    CorrectorResidualTooLarge { residual: f64, limit: f64 },

    #[error("effective covariance check failed: {0}")]
    InvalidCovariance(String),

    #[error("cholesky failure at x = {point:?}: pivot {pivot:e}")]
    CholeskyFailure { point: Vec<f64>, pivot: f64 },

    #[error("step too large: per-step jump probability {probability:.4} > 0.1 ({what})")]
    StepTooLarge { probability: f64, what: String },

    #[error("missing corrector: model has a non-vanishing Poisson right-hand side")]
    MissingCorrector,

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("need at least two decreasing ε values, got {0}")]
    InsufficientEps(usize),

    #[error("insufficient paths: standard error {se:e} exceeds tol·|Σ| = {limit:e}")]
    InsufficientPaths { se: f64, limit: f64 },

    #[error("{0}")]
    Precondition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage tags peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
