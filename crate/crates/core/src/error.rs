// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors produced by model loading, forward passes, interventions,
/// metrics and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Model configuration violates a structural invariant.
    #[error("invalid config: {0}")]
    Config(String),

    /// Caller-supplied input is malformed (token ids, candidate sets, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An intervention references coordinates outside the model or conflicts
    /// with another intervention.
    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),

    /// Two tensors that must agree in width do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A weight file could not be turned into [`crate::model::Weights`].
    #[error("failed to load weights: {0}")]
    Load(String),

    /// Dataset, embeddings or tokenizer content failed validation.
    #[error("{location}: {message}")]
    Validation { location: String, message: String },

    /// A statistic is undefined for the given data.
    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from I/O rather than from the content of the
    /// inputs. The CLI maps this onto its exit codes.
    pub fn is_io(&self) -> bool {
        matches!(self, Self::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
