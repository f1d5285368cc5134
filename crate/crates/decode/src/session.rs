use syllaform_lm::{KvCache, Model, StepInput};

use crate::DecodeError;

/// Incremental next-token model. `begin` opens a fresh sequence with the
/// semantic slot; `feed` appends one id. Both return the logits for the
/// following position.
pub trait TokenModel {
    fn vocab_size(&self) -> usize;
    fn context_len(&self) -> usize;
    /// Positions consumed so far, the slot included.
    fn position(&self) -> usize;
    fn begin(&mut self, embedding: Option<&[f32]>) -> Result<Vec<f32>, DecodeError>;
    fn feed(&mut self, id: u32) -> Result<Vec<f32>, DecodeError>;
}

/// A trained transformer with its key/value cache.
pub struct TransformerSession<'m> {
    model: &'m Model<f32>,
    cache: KvCache<f32>,
}

impl<'m> TransformerSession<'m> {
    pub fn new(model: &'m Model<f32>) -> Self {
        Self { model, cache: model.cache() }
    }
}

impl TokenModel for TransformerSession<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn context_len(&self) -> usize {
        self.model.config.context_len
    }

    fn position(&self) -> usize {
        self.cache.len()
    }

    fn begin(&mut self, embedding: Option<&[f32]>) -> Result<Vec<f32>, DecodeError> {
        self.cache = self.model.cache();
        let input = match embedding {
            Some(e) => StepInput::Slot(e),
            None => StepInput::Token(self.model.config.slot_id),
        };
        Ok(self.model.step(&mut self.cache, input)?)
    }

    fn feed(&mut self, id: u32) -> Result<Vec<f32>, DecodeError> {
        Ok(self.model.step(&mut self.cache, StepInput::Token(id))?)
    }
}
