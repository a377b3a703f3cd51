use thiserror::Error;

/// Errors raised across the filter-design pipeline.
#[derive(Debug, Error)]
pub enum BsannError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("frequency band [{lo_hz} Hz, {hi_hz} Hz] contains no bins")]
    EmptyBand { lo_hz: f64, hi_hz: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("series did not converge at order {order} (tail estimate {tail:.3e})")]
    Convergence { order: usize, tail: f64 },

    #[error("non-finite value in {context} at ear {ear}, point {point}, loudspeaker {speaker}")]
    NonFinite {
        context: &'static str,
        ear: usize,
        point: usize,
        speaker: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate plant: {0}")]
    DegeneratePlant(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },

    #[error("checksum mismatch: header says {expected}, payload hashes to {actual}")]
    Checksum { expected: String, actual: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, BsannError>;
