use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: &'static str, step: usize },
    #[error("time {t} is not a point of the grid")]
    OffGrid { t: f64 },
    #[error("field kind does not match the schedule family")]
    FamilyMismatch,
    #[error("inversion did not converge at step {step} (residual {residual:e})")]
    InversionStalled { step: usize, residual: f64 },
    #[error("residual norm {norm} exceeds the sanity bound {bound} at step {step}")]
    ResidualBound { step: usize, norm: f64, bound: f64 },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
