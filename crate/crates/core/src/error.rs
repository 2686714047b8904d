use alloc::string::String;
use core::fmt;

use crate::grad::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not agree for `op`.
    Shape { op: &'static str, left: Shape, right: Shape },
    /// A loss node must be 1x1 before it can seed a backward pass.
    NonScalarLoss(Shape),
    /// Leaves were rebound (or nothing evaluated) since the last forward pass.
    BackwardBeforeForward,
    /// Finite-difference probe produced a non-finite loss.
    NonFiniteLoss { param: usize },
    /// An Euler-Maruyama state left the finite, bounded region.
    Divergence { element: usize, path: usize, step: usize },
    /// Every Monte Carlo path assigned zero density to the observation.
    DegenerateLikelihood,
    NonFiniteGradient { block: String },
    /// Too many SGLD iterations were skipped because of path divergence.
    DivergenceAbort { skipped: usize, iteration: usize, limit: usize },
    InsufficientSnapshots { surviving: usize, total: usize },
    NonIncreasingTimes { index: usize },
    AsymmetricCovariance { row: usize, col: usize },
    ZeroVariance { index: usize },
    Dimension { what: &'static str, expected: usize, found: usize },
    InvalidConfig(String),
    Empty(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "shape mismatch in {op}: {left} vs {right}")
            }
            Error::NonScalarLoss(s) => write!(f, "loss node is {s}, expected a scalar"),
            Error::BackwardBeforeForward => write!(f, "backward called before forward"),
            Error::NonFiniteLoss { param } => {
                write!(f, "non-finite loss while perturbing parameter {param}")
            }
            Error::Divergence { element, path, step } => write!(
                f,
                "path divergence at element {element}, path {path}, step {step}"
            ),
            Error::DegenerateLikelihood => {
                write!(f, "degenerate likelihood: every path has zero density")
            }
            Error::NonFiniteGradient { block } => {
                write!(f, "non-finite gradient in block `{block}`")
            }
            Error::DivergenceAbort { skipped, iteration, limit } => write!(
                f,
                "aborted at iteration {iteration}: {skipped} diverged iterations exceed limit {limit}"
            ),
            Error::InsufficientSnapshots { surviving, total } => write!(
                f,
                "only {surviving} of {total} posterior snapshots survived simulation"
            ),
            Error::NonIncreasingTimes { index } => {
                write!(f, "observation times must be strictly increasing (index {index})")
            }
            Error::AsymmetricCovariance { row, col } => {
                write!(f, "covariance is not symmetric at ({row}, {col})")
            }
            Error::ZeroVariance { index } => {
                write!(f, "zero predictive variance at point {index}")
            }
            Error::Dimension { what, expected, found } => {
                write!(f, "{what}: expected dimension {expected}, found {found}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Empty(what) => write!(f, "empty {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
