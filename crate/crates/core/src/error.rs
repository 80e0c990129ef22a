use thiserror::Error;

use crate::translate::GlwTranslator;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient for parameter `{param}` at optimizer step {step}")]
    NonFiniteGradient { param: String, step: u64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty batch passed to {op}")]
    EmptyBatch { op: &'static str },

    #[error("covariance undefined for batch of {rows} rows (need at least 2)")]
    CovarianceUndefined { rows: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cluster separation infeasible after {attempts} rejection attempts")]
    SeparationInfeasible { attempts: usize },

    #[error("training failed: {reason}")]
    TrainingFailure { reason: String, curve: Vec<f64> },

    #[error("translator training aborted at epoch {epoch}: {reason}")]
    TranslatorDiverged {
        epoch: usize,
        reason: String,
        last_good: Box<GlwTranslator>,
    },

    #[error("degenerate labels: need at least 2 classes, found {found}")]
    DegenerateLabels { found: usize },

    #[error("unknown module id {0}")]
    UnknownModule(usize),

    #[error("readout withheld: module {0} is not connected to the workspace")]
    Withheld(usize),

    #[error("checkpoint error at `{field}`: {reason}")]
    Checkpoint { field: String, reason: String },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Checkpoint {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
