//! A deterministic stand-in for a trained model that always satisfies the
//! syllable directives. It isolates harness behavior from learning.

use std::collections::VecDeque;

use syllaform_core::planner::{directive_granularity, ControlToken, Granularity};
use syllaform_core::tokenizer::Vocab;

use crate::session::TokenModel;
use crate::DecodeError;

const CHOSEN: f32 = 10.0;
const OTHER: f32 = -1.0e4;

/// Dictionary words by syllable count (index 0 unused).
const WORDS: [&str; 6] = ["", "love", "river", "beautiful", "hallelujah", "imagination"];

/// Text realizing exactly `s` syllables. Word segments get a single
/// (possibly hyphenated) word.
pub fn oracle_text(s: u32, granularity: Option<Granularity>) -> String {
    let s = s as usize;
    if granularity == Some(Granularity::Word) {
        return if s < WORDS.len() { WORDS[s].to_string() } else { vec!["la"; s].join("-") };
    }
    let mut words = vec![WORDS[5]; s / 5];
    if !s.is_multiple_of(5) {
        words.push(WORDS[s % 5]);
    }
    words.join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Emit {
    Id(u32),
    /// Any END token; used after `<MASK>` segments, whose level is hidden.
    AnyEnd,
}

/// Syllable oracle over a real vocabulary.
///
/// After `<SYL:s> <GEN_X>` or `<INF_X>/<MASK> <SYL:s>` it emits text of
/// exactly `s` syllables and the closing END. In a Front layout it replays
/// the prompt skeleton after `<LYR_START>`, filling every segment the same
/// way.
pub struct OracleModel<'v> {
    vocab: &'v Vocab,
    history: Vec<u32>,
    queue: VecDeque<Emit>,
    replay: Option<(Vec<u32>, usize)>,
    context_len: usize,
}

impl<'v> OracleModel<'v> {
    pub fn new(vocab: &'v Vocab) -> Self {
        Self { vocab, history: Vec::new(), queue: VecDeque::new(), replay: None, context_len: 1 << 16 }
    }

    pub fn with_context_len(mut self, n: usize) -> Self {
        self.context_len = n;
        self
    }

    fn tok(&self, t: ControlToken) -> u32 {
        self.vocab.special_id(t)
    }

    fn ends(&self) -> [u32; 3] {
        [self.tok(ControlToken::EndP), self.tok(ControlToken::EndL), self.tok(ControlToken::EndNw)]
    }

    fn logits(&self) -> Vec<f32> {
        let mut l = vec![OTHER; self.vocab.len()];
        match self.queue.front() {
            Some(Emit::Id(id)) => l[*id as usize] = CHOSEN,
            Some(Emit::AnyEnd) => self.ends().iter().for_each(|&e| l[e as usize] = CHOSEN),
            None => {
                let next = match &self.replay {
                    Some((r, c)) => r.get(*c).copied().unwrap_or(self.tok(ControlToken::DocEnd)),
                    None if !self.history.contains(&self.tok(ControlToken::LyrStart)) => self.tok(ControlToken::LyrStart),
                    None => self.tok(ControlToken::DocEnd),
                };
                l[next as usize] = CHOSEN;
            }
        }
        l
    }

    fn fill(&mut self, s: u32, granularity: Option<Granularity>, end: Emit) {
        self.queue = self.vocab.encode_item_text(&oracle_text(s, granularity)).into_iter().map(Emit::Id).collect();
        self.queue.push_back(end);
    }

    fn observe(&mut self, id: u32) {
        let is_end = self.ends().contains(&id);
        match self.queue.front() {
            Some(Emit::Id(x)) if *x == id => drop(self.queue.pop_front()),
            Some(Emit::AnyEnd) if is_end => drop(self.queue.pop_front()),
            Some(_) => self.queue.clear(),
            None => {}
        }
        if let Some((r, c)) = self.replay.as_mut() {
            if r.get(*c) == Some(&id) {
                *c += 1;
            }
        }
        if id == self.tok(ControlToken::LyrStart) && self.replay.is_none() {
            let prompt: Vec<u32> = self.history.iter().skip(1).copied().filter(|&x| self.vocab.is_special(x)).collect();
            if !prompt.is_empty() {
                self.replay = Some((prompt, 0));
            }
        }

        let prev = self.history.last().and_then(|&p| self.vocab.special_of(p));
        let cur = self.vocab.special_of(id);
        match (prev, cur) {
            (Some(ControlToken::Syl(s)), Some(t @ (ControlToken::GenP | ControlToken::GenL | ControlToken::GenN | ControlToken::GenW))) => {
                let g = directive_granularity(t).expect("generation directive");
                let end = self.tok(syllaform_core::planner::end_token(g));
                self.fill(s as u32, Some(g), Emit::Id(end));
            }
            (Some(t @ (ControlToken::InfP | ControlToken::InfL | ControlToken::InfN | ControlToken::InfW)), Some(ControlToken::Syl(s))) => {
                let g = directive_granularity(t).expect("infill directive");
                let end = self.tok(syllaform_core::planner::end_token(g));
                self.fill(s as u32, Some(g), Emit::Id(end));
            }
            (Some(ControlToken::Mask), Some(ControlToken::Syl(s))) => self.fill(s as u32, None, Emit::AnyEnd),
            _ => {}
        }
        self.history.push(id);
    }
}

impl TokenModel for OracleModel<'_> {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn context_len(&self) -> usize {
        self.context_len
    }

    fn position(&self) -> usize {
        self.history.len()
    }

    fn begin(&mut self, _embedding: Option<&[f32]>) -> Result<Vec<f32>, DecodeError> {
        self.history = vec![self.tok(ControlToken::Pad)];
        self.queue.clear();
        self.replay = None;
        Ok(self.logits())
    }

    fn feed(&mut self, id: u32) -> Result<Vec<f32>, DecodeError> {
        if id as usize >= self.vocab.len() {
            return Err(DecodeError::Model(syllaform_lm::LmError::UnknownId(id)));
        }
        self.observe(id);
        Ok(self.logits())
    }
}
