use serde::{Deserialize, Serialize};
use syllaform_core::planner::{ControlToken, Role, SymbolicSequence};
use syllaform_core::tokenizer::Vocab;

use crate::model::{SeqInput, SeqTargets};

/// An encoded training or evaluation sequence. `ids[0]` is the semantic
/// slot; `predict[i]` marks `ids[i]` as a loss target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub ids: Vec<u32>,
    pub predict: Vec<bool>,
    pub embedding: Option<Vec<f32>>,
}

/// Id occupying the semantic slot.
pub fn slot_id(vocab: &Vocab) -> u32 {
    vocab.special_id(ControlToken::Pad)
}

impl Example {
    /// Encodes `seq` after the slot, truncating to `max_len` ids.
    pub fn from_sequence(vocab: &Vocab, seq: &SymbolicSequence, embedding: Option<Vec<f32>>, max_len: usize) -> Self {
        let mut ids = vec![slot_id(vocab)];
        let mut predict = vec![false];
        for sym in seq.iter() {
            let enc = vocab.encode(std::slice::from_ref(&sym.item));
            predict.extend(std::iter::repeat_n(sym.role == Role::Predict, enc.len()));
            ids.extend(enc);
        }
        ids.truncate(max_len);
        predict.truncate(max_len);
        Self { ids, predict, embedding }
    }

    pub fn input(&self) -> SeqInput<'_> {
        SeqInput { ids: &self.ids, embedding: self.embedding.as_deref() }
    }

    pub fn targets(&self) -> SeqTargets<'_> {
        SeqTargets { input: self.input(), predict: &self.predict }
    }

    pub fn target_count(&self) -> usize {
        self.predict.iter().skip(1).filter(|&&p| p).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use syllaform_core::planner::Item;
    use syllaform_core::tokenizer::train_vocab;

    #[test]
    fn roles_follow_items() {
        let vocab = train_vocab(["la la la"], 700).unwrap();
        let mut seq = SymbolicSequence::new();
        seq.cond(ControlToken::LyrStart);
        seq.text("la la", Role::Predict);
        seq.pred(ControlToken::EndL);
        let ex = Example::from_sequence(&vocab, &seq, None, 1024);
        assert_eq!(ex.ids[0], slot_id(&vocab));
        assert_eq!(ex.ids.len(), ex.predict.len());
        assert!(!ex.predict[0] && !ex.predict[1]);
        assert!(ex.predict[2..].iter().all(|&p| p));
        let text_ids = vocab.encode(&[Item::Text("la la".into())]);
        assert_eq!(&ex.ids[2..2 + text_ids.len()], text_ids.as_slice());
        let short = Example::from_sequence(&vocab, &seq, None, 2);
        assert_eq!(short.ids.len(), 2);
    }
}
