use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use syllaform_core::embed::{Embedder, HashedBowEmbedder};
use syllaform_core::tokenizer::Vocab;
use syllaform_decode::{OracleModel, TokenModel, TransformerSession};
use syllaform_lm::{checkpoint, LmConfig, Model};

use crate::error::ApiError;

pub enum Backend {
    /// Emits text of exactly the requested syllable count.
    Oracle,
    Transformer {
        model: Box<Model<f32>>,
        embedder: HashedBowEmbedder,
    },
}

pub struct LoadedModel {
    pub name: String,
    pub backend: Backend,
    pub vocab: Vocab,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub name: String,
    pub kind: &'static str,
    pub default: bool,
    pub vocab_size: usize,
    pub checkpoint: Option<PathBuf>,
    pub config: Option<LmConfig>,
}

impl LoadedModel {
    pub fn oracle(name: impl Into<String>, vocab: Vocab) -> Self {
        Self { name: name.into(), backend: Backend::Oracle, vocab, checkpoint: None }
    }

    pub fn transformer(name: impl Into<String>, model: Model<f32>, vocab: Vocab) -> Self {
        let embedder = HashedBowEmbedder::new(model.config.embed_dim);
        Self { name: name.into(), backend: Backend::Transformer { model: Box::new(model), embedder }, vocab, checkpoint: None }
    }

    /// Reads a checkpoint and the vocabulary it was trained with.
    pub fn load(name: impl Into<String>, checkpoint_path: &Path, vocab_path: &Path) -> Result<Self, ApiError> {
        let vocab = Vocab::load(vocab_path).map_err(|e| ApiError::bad_request(format!("{}: {e}", vocab_path.display())))?;
        let (model, header) =
            checkpoint::load(checkpoint_path).map_err(|e| ApiError::bad_request(format!("{}: {e}", checkpoint_path.display())))?;
        if header.vocab_hash != vocab.content_hash() {
            return Err(ApiError::bad_request(format!("{} was trained with a different vocabulary", checkpoint_path.display())));
        }
        let mut m = Self::transformer(name, model, vocab);
        m.checkpoint = Some(checkpoint_path.to_path_buf());
        Ok(m)
    }

    /// A fresh decoding session; every request gets its own.
    pub fn session(&self) -> Box<dyn TokenModel + '_> {
        match &self.backend {
            Backend::Oracle => Box::new(OracleModel::new(&self.vocab)),
            Backend::Transformer { model, .. } => Box::new(TransformerSession::new(model)),
        }
    }

    pub fn embedding(&self, input_text: &str) -> Option<Vec<f32>> {
        match &self.backend {
            Backend::Oracle => None,
            Backend::Transformer { embedder, .. } => Some(embedder.embed(input_text).vector),
        }
    }

    fn info(&self, default: bool) -> ModelInfo {
        let (kind, config) = match &self.backend {
            Backend::Oracle => ("oracle", None),
            Backend::Transformer { model, .. } => ("transformer", Some(model.config.clone())),
        };
        ModelInfo { name: self.name.clone(), kind, default, vocab_size: self.vocab.len(), checkpoint: self.checkpoint.clone(), config }
    }
}

/// Loaded models by name. The first one inserted is the default.
#[derive(Default)]
pub struct Registry {
    models: BTreeMap<String, Arc<LoadedModel>>,
    default: Option<String>,
}

impl Registry {
    pub fn insert(&mut self, model: LoadedModel, make_default: bool) {
        if make_default || self.default.is_none() {
            self.default = Some(model.name.clone());
        }
        self.models.insert(model.name.clone(), Arc::new(model));
    }

    pub fn get(&self, name: Option<&str>) -> Result<Arc<LoadedModel>, ApiError> {
        let name = match name.or(self.default.as_deref()) {
            Some(n) => n,
            None => return Err(ApiError::no_model("no model is loaded")),
        };
        self.models.get(name).cloned().ok_or_else(|| ApiError::no_model(format!("model {name:?} is not loaded")))
    }

    pub fn list(&self) -> Vec<ModelInfo> {
        self.models.values().map(|m| m.info(self.default.as_deref() == Some(m.name.as_str()))).collect()
    }
}
