use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid format `{0}`: expected MaEb with a >= 1 and 1 + a + b <= 8")]
    InvalidFormat(String),

    #[error("code {bits:#x} does not fit format {format}")]
    InvalidCode { bits: u16, format: String },

    #[error("format mismatch: {0} vs {1}")]
    FormatMismatch(String, String),

    #[error("packed MAC needs mantissa_bits <= 4, got {0}")]
    PackingUnsupported(String),

    #[error("accumulator overflow ({width}-bit) in {context}")]
    AccumulatorOverflow { width: u32, context: String },

    #[error("format {format} needs a {bits}-bit aligned product, wider than the 128-bit accumulator")]
    AccumulatorTooWide { format: String, bits: u32 },

    #[error("degenerate tensor: {0}")]
    DegenerateTensor(String),

    #[error("bias overflow: value {value} does not fit 16 bits at {frac_bits} fractional bits")]
    BiasOverflow { value: f64, frac_bits: i32 },

    #[error("missing calibration data for layer `{0}`")]
    MissingCalibration(String),

    #[error("scheme has no entry for `{0}`")]
    MissingScale(String),

    #[error("shape mismatch in `{layer}`: {detail}")]
    ShapeMismatch { layer: String, detail: String },

    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },

    #[error("weights: {0}")]
    Weights(String),

    #[error("unsupported layer `{layer}`: {detail}")]
    Unsupported { layer: String, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status for the command-line front end. Each category has
    /// its own code; 0 is success and 2 is reserved for argument errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Manifest { .. } | Error::Weights(_) | Error::Parse(_) => 4,
            Error::InvalidFormat(_) | Error::InvalidCode { .. } | Error::FormatMismatch(..) => 5,
            Error::PackingUnsupported(_) => 6,
            Error::AccumulatorOverflow { .. } | Error::AccumulatorTooWide { .. } => 7,
            Error::DegenerateTensor(_)
            | Error::BiasOverflow { .. }
            | Error::MissingCalibration(_)
            | Error::MissingScale(_) => 8,
            Error::ShapeMismatch { .. } | Error::Unsupported { .. } => 9,
            Error::EmptyDataset => 10,
            Error::Constraint(_) => 11,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
