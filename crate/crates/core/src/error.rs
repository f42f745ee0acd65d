// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity appeared inside a network pass.
    #[error("non-finite value in {stage} at layer {layer}")]
    NonFiniteLayer { stage: &'static str, layer: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at iteration {iter}: {terms}")]
    NonFiniteLoss { iter: u64, terms: String },

    #[error("degenerate interval: t - u = {0:e}")]
    DegenerateInterval(f64),

    #[error("singular jacobian: |det| = {0:e}")]
    SingularJacobian(f64),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
