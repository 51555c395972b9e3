use thiserror::Error;

/// Broad classes used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numerical,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument must be positive, got {0}")]
    NonPositiveArgument(f64),
    #[error("term with exponent {0} is not integrable at zero")]
    NonIntegrable(f64),
    #[error("log-multiplied power terms are not supported")]
    LogTermUnsupported,
    #[error("non-finite coefficient or exponent")]
    NonFiniteTerm,
    #[error("exponents do not lie on an even grid with at most {0} steps")]
    NotEvenlySpaced(usize),
    #[error("tractability report does not match the power sum")]
    InconsistentReport,
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("radical solver supports degree 1 to 4, got {0}")]
    DegreeUnsupported(usize),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("no interior optimum and boundary profit is not positive")]
    NoInteriorOptimum,
    #[error("second derivative of surplus vanishes")]
    ZeroSecondDerivative,
    #[error("coordination exponent must lie in [0,1), got {0}")]
    InvalidGamma(f64),
    #[error("no industry passes the selection rules")]
    NoQualifyingIndustries,
    #[error("no positive total quantity")]
    NoPositiveRoot,
    #[error("state contains a non-positive or non-finite unknown")]
    NonFiniteState,
    #[error("regression design is rank deficient")]
    RankDeficient,
    #[error("density integral does not converge")]
    DivergentDensity,
    #[error("grid too coarse: remainder bound {bound} exceeds tolerance {tol}")]
    GridTooCoarse { bound: f64, tol: f64 },
    #[error("unknown demand form `{0}`")]
    CatalogMiss(String),
    #[error("series diverges for these parameters")]
    Divergent,
    #[error("parameters outside the supported domain: {0}")]
    ParameterDomain(String),
    #[error("integrand is singular at the endpoint")]
    SingularIntegrand,
    #[error("aggregation precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("term multiplier is singular at exponent {0}")]
    SingularTerm(f64),
    #[error("denominator is not positive")]
    NegativeDenominator,
    #[error("insourcing region is empty")]
    EmptyInsourcingRegion,
    #[error("invalid input data: {0}")]
    InvalidData(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidData(_) | Error::Io(_) | Error::CatalogMiss(_) | Error::NoQualifyingIndustries => {
                ErrorClass::Data
            }
            _ => ErrorClass::Numerical,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::InvalidData(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidData(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
