use thiserror::Error;

/// Errors raised across the filtering engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("covariance `{0}` is not symmetric positive semi-definite")]
    NonPsdCovariance(String),
    #[error("schedule times are not strictly increasing and positive: {0}")]
    NonIncreasingTimes(String),
    #[error("horizon {horizon} is shorter than the last scheduled time {last}")]
    HorizonTooShort { horizon: f64, last: f64 },
    #[error("unknown or ill-formed function descriptor: {0}")]
    UnknownFunctionDescriptor(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no atom of the discrete jump law is compatible with eta = {0:?}")]
    ZeroConditionalMass(Vec<f64>),
    #[error("non-finite state encountered at t = {0}")]
    NumericalBlowup(f64),
    #[error("negative time step {0}")]
    NegativeDt(f64),
    #[error("predictive covariance S is singular at event {0}")]
    SingularS(usize),
    #[error("covariance lost positive semi-definiteness (min eigenvalue {0})")]
    IndefiniteCovariance(f64),
    #[error("all particle likelihoods vanished at event {0}")]
    WeightCollapse(usize),
    #[error("reference density of the observed increment is zero at event {0}")]
    ZeroReferenceDensity(usize),
    #[error("unnormalized mass is zero")]
    ZeroMass,
    #[error("grid density leaked {mass:e} into the boundary region at t = {t}")]
    BoundaryLeak { t: f64, mass: f64 },
    #[error("likelihood mass on the grid vanished at event {0}")]
    ZeroLikelihoodMass(usize),
    #[error("unsupported scenario: {0}")]
    UnsupportedScenario(String),
    #[error("method `{method}` is incompatible with this scenario: {reason}")]
    IncompatibleMethod { method: String, reason: String },
    #[error("observation noise variance must be positive, got {0}")]
    NonpositiveR(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn incompatible(method: &str, reason: impl Into<String>) -> Self {
        Error::IncompatibleMethod {
            method: method.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
