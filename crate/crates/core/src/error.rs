use alloc::string::String;
use core::fmt;

/// Failure classes raised by the core library.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Operand shapes do not line up.
    Dimension(String),
    /// A window, stride or image extent does not produce a valid output geometry.
    Geometry(String),
    /// A configuration value is out of range.
    Config(String),
    /// A caller broke an operation contract (non-scalar loss, bad label, unsorted curve).
    Contract(String),
    /// Dataset-level problem (empty split, empty class).
    Dataset(String),
    /// ROC/AUC input with only one class present.
    DegenerateInput(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Geometry(m) => write!(f, "geometry error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Dataset(m) => write!(f, "dataset error: {m}"),
            Error::DegenerateInput(m) => write!(f, "degenerate input: {m}"),
        }
    }
}

impl core::error::Error for Error {}
