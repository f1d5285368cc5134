//! Small decoder-only transformer trained from scratch, with a semantic
//! conditioning slot at position 0, plus training, perplexity and
//! checkpoint I/O.

pub mod checkpoint;
pub mod data;
pub mod float;
pub mod model;
pub mod ppl;
pub mod train;

pub use data::Example;
pub use float::Float;
pub use model::{KvCache, LmConfig, Model, SeqInput, SeqTargets, StepInput};
pub use ppl::{perplexity_eval, trimmed_mean};
pub use syllaform_core::embed::{Embedder, FileEmbedder, HashedBowEmbedder, SemanticEmbedding};
pub use train::{train, EpochStats, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds the context window of {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("embedding has dimension {got}, expected {want}")]
    EmbeddingDim { got: usize, want: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("loss became non-finite at step {step}")]
    DivergenceDetected { step: usize },
    #[error("no text tokens to evaluate")]
    EmptyEval,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
