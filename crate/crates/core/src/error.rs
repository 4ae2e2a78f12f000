//! Error type shared across the simulator and advisor.

use thiserror::Error;

/// All failure modes reported by the library.
///
/// Each variant carries a stable machine-readable code (see [`Error::code`])
/// used by the CLI when emitting one-line JSON errors on stderr.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model or hardware spec: {0}")]
    InvalidSpec(String),

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("unknown preset '{name}'; valid presets: {valid}")]
    PresetNotFound { name: String, valid: String },

    #[error("arithmetic intensity undefined: kernel moves zero bytes")]
    UndefinedIntensity,

    #[error("empty batch: cost model needs at least one sequence")]
    EmptyBatch,

    #[error("insufficient memory: {0}")]
    InsufficientMemory(String),

    #[error("duplicate request id {0}")]
    DuplicateRequest(u64),

    #[error("request id {0} not found")]
    RequestNotFound(u64),

    #[error("stall detected: {0}")]
    StallDetected(String),

    #[error("curve incomplete: {0}")]
    CurveIncomplete(String),

    #[error("malformed curve: {0}")]
    MalformedCurve(String),

    #[error("curve parse error at line {line}: {message}")]
    CurveParse { line: usize, message: String },

    #[error("invalid epsilon {0}: must satisfy 0 <= epsilon < 1")]
    InvalidEpsilon(f64),

    #[error("invalid SLO: {0}")]
    InvalidSlo(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl Error {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid-spec",
            Error::InvalidWorkload(_) => "invalid-workload",
            Error::PresetNotFound { .. } => "not-found",
            Error::UndefinedIntensity => "undefined-intensity",
            Error::EmptyBatch => "empty-batch",
            Error::InsufficientMemory(_) => "insufficient-memory",
            Error::DuplicateRequest(_) => "duplicate-request",
            Error::RequestNotFound(_) => "not-found",
            Error::StallDetected(_) => "stall-detected",
            Error::CurveIncomplete(_) => "curve-incomplete",
            Error::MalformedCurve(_) => "malformed-curve",
            Error::CurveParse { .. } => "parse-error",
            Error::InvalidEpsilon(_) => "invalid-epsilon",
            Error::InvalidSlo(_) => "invalid-slo",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Io(_) => "io-error",
            Error::ConfigParse(_) => "config-parse-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
