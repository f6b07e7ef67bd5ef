use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid phase state: {0}")]
    InvalidState(String),

    /// A gradient provider produced a non-finite value. `step` is 1-based
    /// within an integration (0 for a lone step), `substep` is the stage
    /// `j` in 1..=4 (0 when not inside a staged integrator).
    #[error("numeric failure at step {step}, substep {substep}")]
    NumericFailure { step: usize, substep: usize },

    #[error("singular potential: bodies {0} and {1} coincide")]
    SingularPotential(usize, usize),

    #[error("taylor term order {0} outside 1..={max}", max = crate::taylor::MAX_TERMS)]
    TermOrder(usize),

    #[error("taylor term f_{order}({x}) overflows")]
    TermOverflow { order: usize, x: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("sample {index}: {source}")]
    Sample { index: usize, source: Box<Error> },

    #[error("epoch {epoch}: {source}")]
    Epoch { epoch: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_sample(self, index: usize) -> Self {
        Error::Sample { index, source: Box::new(self) }
    }

    pub(crate) fn at_epoch(self, epoch: usize) -> Self {
        Error::Epoch { epoch, source: Box::new(self) }
    }

    /// Short machine-readable tag, used by the CLI and the C API.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidState(_) => "invalid_state",
            Error::NumericFailure { .. } => "numeric_failure",
            Error::SingularPotential(..) => "singular_potential",
            Error::TermOrder(_) | Error::TermOverflow { .. } => "taylor_term",
            Error::Config(_) => "config",
            Error::EmptyBatch => "empty_batch",
            Error::Sample { source, .. } | Error::Epoch { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
