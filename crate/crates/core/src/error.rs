use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no slices found in {0}")]
    NoSlices(PathBuf),

    #[error("degenerate histogram")]
    DegenerateHistogram,

    #[error("slice {slice}: {source}")]
    AtSlice {
        slice: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("unknown record {patient_id}/{slice_index}")]
    UnknownRecord { patient_id: String, slice_index: u32 },

    #[error("{patient_id}: missing confidence for slice {slice_index}")]
    MissingSlice { patient_id: String, slice_index: u32 },

    #[error("probability out of range: {0}")]
    ProbabilityOutOfRange(f64),

    #[error("model: {0}")]
    Model(String),

    #[error("fewer than {k} distinct values")]
    TooFewDistinct { k: usize },

    #[error("no bone found")]
    NoBone,

    #[error("empty tumor region")]
    EmptyTumorRegion,

    #[error("empty mask")]
    EmptyMask,

    #[error("no positives")]
    NoPositives,

    #[error("no negatives")]
    NoNegatives,

    #[error("labels contain a single class")]
    SingleClass,

    #[error("at least {0} values required")]
    TooFewValues(usize),

    #[error("empty input")]
    Empty,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    pub(crate) fn at_slice(slice: usize, source: Error) -> Self {
        Error::AtSlice { slice, source: Box::new(source) }
    }
}
