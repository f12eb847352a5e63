use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Everything that can go wrong inside the estimation core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on a dimension.
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A pivot fell below the relative singularity threshold.
    SingularMatrix { pivot: f64, scale: f64 },
    /// Newton's curvature matrix could not be factored.
    SingularHessian,
    /// The covariance repair ladder was exhausted.
    NotPsd { min_eigenvalue: f64 },
    /// Expected subsample size outside `1..=rows`.
    InvalidRate { expected_n: usize, rows: usize },
    /// Subsample or full-data sizes that do not satisfy `1 <= n <= N`.
    InvalidSizes { n: usize, big_n: usize },
    SubsampleTooSmall { realized: usize, required: usize },
    /// Parameter or observation outside the model's domain. `row` is set
    /// when a specific observation is at fault.
    Domain { row: Option<usize>, reason: String },
    NoConvergence { iterations: usize, grad_norm: f64 },
    EmptyInput(&'static str),
    InvalidArgument(String),
    /// Failure reported by a data source (I/O, parsing).
    Data { row: Option<usize>, message: String },
}

impl Error {
    pub(crate) fn domain(reason: impl Into<String>) -> Self {
        Error::Domain {
            row: None,
            reason: reason.into(),
        }
    }

    /// Attach an observation index to a domain error.
    pub(crate) fn at_row(self, row: usize) -> Self {
        match self {
            Error::Domain { row: None, reason } => Error::Domain {
                row: Some(row),
                reason,
            },
            other => other,
        }
    }

    pub(crate) fn dimension(what: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            found,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension {
                what,
                expected,
                found,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, found {found}"),
            Error::SingularMatrix { pivot, scale } => {
                write!(f, "singular matrix: pivot {pivot:e} against scale {scale:e}")
            }
            Error::SingularHessian => write!(f, "Hessian is singular"),
            Error::NotPsd { min_eigenvalue } => write!(
                f,
                "covariance is not positive semidefinite after repair (min eigenvalue {min_eigenvalue:e})"
            ),
            Error::InvalidRate { expected_n, rows } => write!(
                f,
                "expected subsample size {expected_n} must lie in 1..={rows}"
            ),
            Error::InvalidSizes { n, big_n } => {
                write!(f, "invalid sizes: need 1 <= n ({n}) <= N ({big_n})")
            }
            Error::SubsampleTooSmall { realized, required } => write!(
                f,
                "subsample has {realized} rows, at least {required} are required"
            ),
            Error::Domain {
                row: Some(row),
                reason,
            } => write!(f, "domain error at row {row}: {reason}"),
            Error::Domain { row: None, reason } => write!(f, "domain error: {reason}"),
            Error::NoConvergence {
                iterations,
                grad_norm,
            } => write!(
                f,
                "Newton-Raphson did not converge after {iterations} iterations (gradient norm {grad_norm:e})"
            ),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Data {
                row: Some(row),
                message,
            } => write!(f, "data error at row {row}: {message}"),
            Error::Data { row: None, message } => write!(f, "data error: {message}"),
        }
    }
}

impl core::error::Error for Error {}
