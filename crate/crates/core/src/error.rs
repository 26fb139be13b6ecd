//! Crate-wide error type and result alias.

use thiserror::Error;

/// Errors produced by the simulator, grouped by the contract they break.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameter/gradient vectors disagree on layout (length or segment order).
    #[error("layout mismatch: {0}")]
    Layout(String),

    /// Tensor or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric evaluation produced a non-finite value outside training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Invalid model specification.
    #[error("invalid model spec: {0}")]
    Spec(String),

    /// Backward pass received a cache that does not match the forward call.
    #[error("stale forward cache: {0}")]
    Cache(String),

    /// Invalid run configuration.
    #[error("invalid config: {0}")]
    Config(String),

    /// A client was asked to train with no data.
    #[error("client {client_id} has no training data")]
    EmptyClient { client_id: usize },

    /// Local training produced a non-finite loss or parameters.
    #[error("divergence at round {round}, client {client_id}: {detail}")]
    Divergence {
        round: usize,
        client_id: usize,
        detail: String,
    },

    /// The Dirichlet partitioner could not produce a valid plan.
    #[error("partition failed: {0}")]
    Partition(String),

    /// Synthetic dataset generation failed.
    #[error("dataset generation failed: {0}")]
    Generation(String),

    /// A dataset file is malformed; `offset` is the byte where parsing failed.
    #[error("bad dataset file at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// Every seed of a multi-seed run failed.
    #[error("all seeds failed: {0}")]
    AllSeedsFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tags a divergence raised inside local training with the round it
    /// happened in; other errors pass through unchanged.
    pub fn with_round(self, round: usize) -> Self {
        match self {
            Error::Divergence {
                client_id, detail, ..
            } => Error::Divergence {
                round,
                client_id,
                detail,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
