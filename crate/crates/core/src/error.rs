use core::fmt;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A pixel or interpolation coordinate landed outside the image.
    OutOfBounds {
        what: &'static str,
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    /// Two shapes that must agree do not.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A parameter violated its documented precondition.
    InvalidArgument(&'static str),
    /// An integer computation would overflow.
    Overflow(&'static str),
    /// A value that must be finite is NaN or infinite.
    NonFinite(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::OutOfBounds {
                what,
                u,
                v,
                width,
                height,
            } => write!(
                f,
                "{what}: coordinate ({u}, {v}) outside {width}x{height} bounds"
            ),
            Error::DimensionMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected dimension {expected}, got {got}"),
            Error::InvalidArgument(what) => write!(f, "invalid argument: {what}"),
            Error::Overflow(what) => write!(f, "integer overflow in {what}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
        }
    }
}

impl core::error::Error for Error {}
