use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class; decides the CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Internal => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate band name `{0}`")]
    DuplicateBandName(String),

    #[error("invalid band stack: {0}")]
    InvalidStack(String),

    #[error("missing band `{0}`")]
    MissingBand(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("filter left no images: {0}")]
    EmptyResult(String),

    #[error("cannot reduce an empty collection")]
    EmptyCollection,

    #[error("all {0} samples were dropped (outside raster or on nodata)")]
    AllSamplesDropped(usize),

    #[error("class {class_id} has only {available} eligible pixels, {requested} requested")]
    InsufficientPixels {
        class_id: u8,
        requested: usize,
        available: usize,
    },

    #[error("impurity of an empty count vector is undefined")]
    EmptyCounts,

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("band order mismatch: model expects {expected:?}, stack has {found:?}")]
    BandOrderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("palette has no colour for class {0}")]
    MissingPaletteEntry(u8),

    #[error("validation set is empty")]
    EmptyValidationSet,

    #[error("confusion matrix has no samples")]
    EmptyMatrix,

    #[error("legend mismatch: {0}")]
    LegendMismatch(String),

    #[error("missing artifact {0}; run the producing stage first")]
    MissingArtifact(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Machine-readable category name, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "ConfigError",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::DuplicateBandName(_) => "DuplicateBandName",
            Error::InvalidStack(_) => "InvalidStack",
            Error::MissingBand(_) => "MissingBand",
            Error::Format { .. } => "FormatError",
            Error::Parse(_) => "ParseError",
            Error::EmptyResult(_) => "EmptyResult",
            Error::EmptyCollection => "EmptyCollection",
            Error::AllSamplesDropped(_) => "AllSamplesDropped",
            Error::InsufficientPixels { .. } => "InsufficientPixels",
            Error::EmptyCounts => "EmptyCounts",
            Error::EmptyTrainingSet => "EmptyTrainingSet",
            Error::BandOrderMismatch { .. } => "BandOrderMismatch",
            Error::MissingPaletteEntry(_) => "MissingPaletteEntry",
            Error::EmptyValidationSet => "EmptyValidationSet",
            Error::EmptyMatrix => "EmptyMatrix",
            Error::LegendMismatch(_) => "LegendMismatch",
            Error::MissingArtifact(_) => "MissingArtifact",
            Error::Io { .. } => "IoError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Io { .. } => ErrorClass::Internal,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
