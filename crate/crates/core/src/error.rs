use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A probability vector failed normalization or sign checks.
    InvalidDistribution(String),
    /// Two vectors that must agree in length do not.
    DimensionMismatch { expected: usize, found: usize },
    /// A value that must be finite was NaN or infinite.
    NonFinite(&'static str),
    /// An argument fell outside its documented domain.
    InvalidArgument(String),
    UnknownEnvironment(String),
    /// Environment parameters describe a degenerate or unsolvable MDP.
    InvalidEnvironment(String),
    IndexOutOfRange { what: &'static str, index: usize, bound: usize },
    /// Value iteration stopped at the iteration cap.
    NotConverged { iterations: usize, residual: f64 },
    /// Training produced a non-finite loss.
    Diverged { epoch: usize, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDistribution(msg) => write!(f, "invalid distribution: {msg}"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::UnknownEnvironment(name) => write!(f, "unknown environment `{name}`"),
            Error::InvalidEnvironment(msg) => write!(f, "invalid environment: {msg}"),
            Error::IndexOutOfRange { what, index, bound } => {
                write!(f, "{what} index {index} out of range (< {bound})")
            }
            Error::NotConverged { iterations, residual } => write!(
                f,
                "value iteration did not converge after {iterations} sweeps (residual {residual:e})"
            ),
            Error::Diverged { epoch, detail } => {
                write!(f, "training diverged at epoch {epoch}: {detail}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
