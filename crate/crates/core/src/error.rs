use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("insufficient examples: requested {requested}, available {available}")]
    InsufficientExamples { requested: usize, available: usize },

    #[error("bound precondition violated ({method}): {reason}")]
    Precondition { method: &'static str, reason: String },

    /// `m ≤ P` for the pseudo-dimension bound; `p` is the required floor.
    #[error("pseudo-dimension bound requires m > P = {p:e}, got m = {m:e}")]
    SampleBelowPdim { p: f64, m: f64 },

    #[error("bound astronomically vacuous: log10(ln N) = {log10_ln_n:.3}")]
    AstronomicallyVacuous { log10_ln_n: f64 },

    #[error("ramp loss {0} leaves no room for a non-vacuous bound")]
    VacuousAlready(f64),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
