use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
    #[error("degenerate risk for participant {0}: square-root argument not positive")]
    DegenerateRisk(String),
    #[error("covariance matrix of the assets is singular")]
    SingularGamma,
    #[error("wrong risk kind: {0}")]
    WrongRiskKind(String),
    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("strategy mismatch: {0}")]
    StrategyMismatch(String),
    #[error("unknown participant or exchange: {0}")]
    UnknownId(String),
    #[error("scenario failed validation: {0}")]
    Validation(String),
    #[error("loss-allocation weight undefined for {0}")]
    WeightUndefined(String),
    #[error("KVA tail too thin: {tail:.1} expected tail samples (< 100)")]
    InsufficientTail { tail: f64 },
    #[error("no surviving member can take the defaulted package")]
    NoSurvivors,
}

impl Error {
    /// True for failures raised by the equilibrium solvers.
    pub fn is_solver(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::DegenerateRisk(_) | Error::SingularGamma
        )
    }

    /// True for failures raised by the Monte-Carlo XVA layer.
    pub fn is_xva(&self) -> bool {
        matches!(
            self,
            Error::WeightUndefined(_) | Error::InsufficientTail { .. } | Error::NoSurvivors
        )
    }
}
