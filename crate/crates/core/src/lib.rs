//! Veracity reasoning over mixed sentence and table-cell evidence.
//!
//! Claims are parsed from JSONL ([`corpus`]), their evidence is turned into
//! word-level heterogeneous graphs ([`graph`]), node features come from a
//! pluggable [`embed::Provider`], and the [`model`] runs relational graph
//! convolution, claim-guided attention and fused classification on top of a
//! small reverse-mode autodiff engine ([`tensor`]). [`train`] holds the
//! optimizer, metrics, checkpoints and diagnostics.

pub mod config;
pub mod corpus;
pub mod embed;
pub mod exec;
pub mod graph;
pub mod linearizer;
pub mod model;
pub mod tensor;
pub mod train;

pub use exec::Execution;

/// Any failure surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Embed(#[from] embed::EmbedError),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Checkpoint(#[from] train::CheckpointError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("non-finite value in {what} at epoch {epoch}, step {step}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<linearizer::LinearizeError> for Error {
    fn from(e: linearizer::LinearizeError) -> Self {
        Error::Graph(e.into())
    }
}

impl Error {
    /// Process exit status: 1 for bad input, 2 for configuration or
    /// checkpoint problems, 3 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Corpus(_) | Error::Graph(_) | Error::Embed(_) | Error::Io(_) => 1,
            Error::Checkpoint(_) | Error::Config(_) => 2,
            Error::Tensor(_) | Error::NonFinite { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
