use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input matrix is not symmetric within tolerance.
    NotSymmetric { max_asymmetry: f64 },
    /// NaN or infinity where a finite value is required.
    NonFinite(&'static str),
    /// Eigenvalue below the clamping tolerance; the input is not PSD.
    NegativeEigenvalue(f64),
    /// A scalar argument is outside its domain.
    Domain(String),
    /// Vector or matrix dimensions disagree.
    Shape { expected: usize, found: usize },
    /// Index (stage, action, feature) out of range.
    Index { index: usize, len: usize },
    /// An operation that needs at least one row or entry got none.
    Empty(&'static str),
    /// Input is degenerate (e.g. a zero vector that must be normalized).
    Degenerate(&'static str),
    /// Dataset or environment violates its invariants.
    Invalid(String),
    /// Failure inside backward induction, tagged with the stage.
    Stage { stage: usize, source: alloc::boxed::Box<Error> },
    /// Failure at one grid point of the adaptive scan.
    GridPoint { k: usize, source: alloc::boxed::Box<Error> },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn at_stage(self, stage: usize) -> Self {
        Error::Stage { stage, source: alloc::boxed::Box::new(self) }
    }

    /// Innermost error, with stage/grid wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::GridPoint { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures of the numerics rather than of the inputs' shape or domain.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self.root(),
            Error::NonFinite(_) | Error::NegativeEigenvalue(_) | Error::NotSymmetric { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotSymmetric { max_asymmetry } => {
                write!(f, "matrix is not symmetric (max |a_ij - a_ji| = {max_asymmetry:e})")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::NegativeEigenvalue(v) => {
                write!(f, "eigenvalue {v:e} is negative beyond round-off; input is not PSD")
            }
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Shape { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::Index { index, len } => write!(f, "index {index} out of range (len {len})"),
            Error::Empty(what) => write!(f, "empty input: {what}"),
            Error::Degenerate(what) => write!(f, "degenerate input: {what}"),
            Error::Invalid(msg) => write!(f, "invalid data: {msg}"),
            Error::Stage { stage, source } => write!(f, "stage {stage}: {source}"),
            Error::GridPoint { k, source } => write!(f, "grid point k={k}: {source}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
