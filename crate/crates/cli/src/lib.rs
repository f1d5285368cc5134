//! Batch pipeline: synthetic corpora, preprocessing, vocabulary and model
//! training, constrained decoding, evaluation and consistency analysis.
//!
//! Every command reads a [`RunConfig`], writes its artifacts under
//! `out_dir` and returns a JSON summary.

pub mod config;
pub mod pipeline;

use serde_json::json;
use thiserror::Error;

pub use config::RunConfig;
pub use pipeline::{
    cmd_consistency, cmd_evaluate, cmd_generate, cmd_infill, cmd_preprocess, cmd_synth_corpus, cmd_train, cmd_train_vocab, split_examples,
    Record,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Corpus(#[from] syllaform_core::corpus::CorpusError),
    #[error(transparent)]
    Plan(#[from] syllaform_core::planner::PlanError),
    #[error(transparent)]
    Tokenizer(#[from] syllaform_core::tokenizer::TokenizerError),
    #[error(transparent)]
    Metrics(#[from] syllaform_core::metrics::MetricsError),
    #[error(transparent)]
    Model(#[from] syllaform_lm::LmError),
    #[error(transparent)]
    Decode(#[from] syllaform_decode::DecodeError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Corpus(_) => "corpus",
            CliError::Plan(_) => "plan",
            CliError::Tokenizer(_) => "tokenizer",
            CliError::Metrics(_) => "metrics",
            CliError::Model(_) => "model",
            CliError::Decode(_) => "decode",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
