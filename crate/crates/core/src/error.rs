use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A capture or calibration violates its invariants.
    InvalidCapture(String),
    /// White level does not exceed every black level.
    DegenerateCalibration,
    InvalidSpec(String),
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    /// A value fell outside the domain of a transfer or quantizer.
    DomainError(f64),
    InvalidParams(String),
    SingularMatrix,
    EmptyBracket,
    ShapeMismatch,
    EmptyInput,
    InvalidArgument(String),
    /// The requested split fraction cannot be met without cutting a group.
    DegenerateSplit { group: String, size: usize, limit: usize },
    AnnotatorUnavailable(String),
    JudgeUnavailable(String),
    MalformedVerdict(String),
    ManifestMismatch(String),
    NonFiniteGradient,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidCapture(msg) => write!(f, "invalid capture: {msg}"),
            Error::DegenerateCalibration => {
                f.write_str("degenerate calibration: white level must exceed every black level")
            }
            Error::InvalidSpec(msg) => write!(f, "invalid synthetic scene spec: {msg}"),
            Error::DimensionMismatch { expected, found } => write!(
                f,
                "dimension mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::DomainError(v) => write!(f, "value {v} outside [0, 1]"),
            Error::InvalidParams(msg) => write!(f, "invalid render parameters: {msg}"),
            Error::SingularMatrix => f.write_str("matrix is singular"),
            Error::EmptyBracket => f.write_str("exposure bracket is empty"),
            Error::ShapeMismatch => f.write_str("image shapes do not match"),
            Error::EmptyInput => f.write_str("input is empty"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DegenerateSplit { group, size, limit } => write!(
                f,
                "degenerate split: group {group} holds {size} captures, more than the {limit} allowed on the training side"
            ),
            Error::AnnotatorUnavailable(msg) => write!(f, "annotator unavailable: {msg}"),
            Error::JudgeUnavailable(msg) => write!(f, "judge unavailable: {msg}"),
            Error::MalformedVerdict(msg) => write!(f, "malformed judge verdict: {msg}"),
            Error::ManifestMismatch(msg) => write!(f, "manifest mismatch: {msg}"),
            Error::NonFiniteGradient => f.write_str("non-finite gradient"),
        }
    }
}

impl core::error::Error for Error {}
