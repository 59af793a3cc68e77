use std::path::PathBuf;

/// Errors produced anywhere in the integrity-checking pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },

    #[error("inconsistent trace lengths: expected {expected}, found {found}")]
    InconsistentLength { expected: usize, found: usize },

    #[error("inconsistent sample rates: expected {expected} Hz, found {found} Hz")]
    InconsistentSampleRate { expected: f64, found: f64 },

    #[error("empty trace set")]
    EmptySet,

    #[error("trace format error: {0}")]
    Format(String),

    #[error("sample {value} at index {index} outside ADC range [0, {full_scale}]")]
    OutOfRange {
        index: usize,
        value: f64,
        full_scale: f64,
    },

    #[error("invalid ADC bit width {0} (expected 1..=24)")]
    InvalidBitWidth(u32),

    #[error("no marker labelled {0:?}")]
    UnknownLabel(String),

    #[error("no spectral peak: {0}")]
    NoPeak(String),

    #[error("invalid passband: {0}")]
    InvalidPassband(String),

    #[error("unstable filter realization (pole radius {radius})")]
    UnstableFilter { radius: f64 },

    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: f64, found: f64 },

    #[error("trace of {len} samples too short for edge handling (need at least {min})")]
    TraceTooShort { len: usize, min: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("constant input: correlation is undefined")]
    ConstantInput,

    #[error("empty group in rank test")]
    EmptyGroup,

    #[error("exact U distribution unavailable: {0}")]
    ExactUnavailable(String),

    #[error("degenerate input: every observation in both groups is identical")]
    DegenerateInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("carrier above Nyquist: clock {clock_hz} Hz, Nyquist {nyquist_hz} Hz")]
    CarrierAboveNyquist { clock_hz: f64, nyquist_hz: f64 },

    #[error("unknown layer {0:?}")]
    UnknownLayer(String),

    #[error("duplicate bit position (weight {weight}, bit {bit})")]
    DuplicateBitPosition { weight: usize, bit: u8 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
