use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("grid size mismatch: expected {expected}x{expected}, found {rows}x{cols}")]
    GridMismatch {
        expected: usize,
        rows: usize,
        cols: usize,
    },

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: alloc::vec::Vec<usize>,
        found: alloc::vec::Vec<usize>,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("invalid layer shape at {layer}: {reason}")]
    LayerShape { layer: String, reason: String },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("non-finite objective value at {0:?}")]
    NonFiniteObjective(alloc::vec::Vec<f64>),

    #[error("singular affine matrix (|det| = {0:e})")]
    SingularMatrix(f64),

    #[error("star pattern with {periods} periods aliases on this grid: {reason}")]
    StarAliasing { periods: u32, reason: String },

    #[error("no valid frequencies in band [{lo}, {hi}] cycles/m")]
    EmptyValidBand { lo: f64, hi: f64 },

    #[error("insufficient fringe contrast in measurement")]
    NoFringeContrast,

    #[error("cannot score {model} on {test_set}, sample {sample}: {reason}")]
    Evaluation {
        model: String,
        test_set: String,
        sample: String,
        reason: String,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}
