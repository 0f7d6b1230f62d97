use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by the lattice solvers and the checks built on them.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A configuration value is outside its admissible range.
    Config(String),
    /// The lattice would need more index bits than the configured cap.
    CapExceeded { bits: usize, cap: usize },
    /// Two objects disagree on a dimension.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// Objects built on different lattices were combined.
    LatticeMismatch,
    /// A time step index is outside `0..=N` (or `0..N` for transitions).
    StepOutOfRange { step: usize, steps: usize },
    /// A coefficient or intermediate value is NaN or infinite.
    NonFinite { what: &'static str, step: usize },
    /// An iteration did not reach its tolerance.
    NonConvergence {
        what: &'static str,
        iterations: usize,
        history: Vec<f64>,
    },
    /// Fields handed to a check do not satisfy the dynamics the check assumes.
    DynamicsMismatch { step: usize, residual: f64 },
    /// A value at some level varies with a bit it must not depend on.
    NotAdapted { level: usize, bit: usize },
    /// A linear solve hit a (numerically) singular matrix.
    Singular(&'static str),
    /// The requested operation is only defined for scalar drivers.
    UnsupportedDriverDim(usize),
    /// A set descriptor or sample set is malformed or empty.
    InvalidInput(String),
    /// A normalization was attempted on a zero quantity.
    ZeroNorm(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::CapExceeded { bits, cap } => {
                write!(f, "lattice needs {bits} index bits, cap is {cap}")
            }
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected dimension {expected}, found {found}"),
            Error::LatticeMismatch => f.write_str("fields live on different lattices"),
            Error::StepOutOfRange { step, steps } => {
                write!(f, "step {step} out of range for {steps} steps")
            }
            Error::NonFinite { what, step } => write!(f, "non-finite {what} at step {step}"),
            Error::NonConvergence {
                what,
                iterations,
                history,
            } => write!(
                f,
                "{what} did not converge after {iterations} iterations (last residual {:e})",
                history.last().copied().unwrap_or(f64::NAN)
            ),
            Error::DynamicsMismatch { step, residual } => write!(
                f,
                "fields violate the one-step dynamics at step {step} (residual {residual:e})"
            ),
            Error::NotAdapted { level, bit } => {
                write!(f, "field at level {level} depends on non-measurable bit {bit}")
            }
            Error::Singular(what) => write!(f, "singular matrix in {what}"),
            Error::UnsupportedDriverDim(d) => {
                write!(f, "operation requires scalar drivers, got dimension {d}")
            }
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::ZeroNorm(what) => write!(f, "cannot normalize: {what} is zero"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
