use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use syllaform_core::planner::{
    directive_granularity, serialize_generation, ControlToken, Granularity, Item, Layout, PlanError, PlanTree, Role, Symbol,
    SymbolicSequence,
};
use syllaform_core::tokenizer::Vocab;

use crate::sampling::{logit_rank, sample_masked};
use crate::session::TokenModel;
use crate::trace::{TraceEvent, TraceSink};
use crate::{DecodeError, DecodeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Forced,
    Sampled,
    InjectedOnTimeout,
}

/// One sampled segment of a guided run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    /// Index of the segment's text item in the output sequence.
    pub item: usize,
    pub granularity: Granularity,
    pub target: u32,
    pub end: ControlToken,
    pub text: String,
    /// Text tokens sampled before the segment closed.
    pub tokens: usize,
    pub timed_out: bool,
    /// Ids the model had consumed when the segment opened, slot included.
    pub visible: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub sequence: SymbolicSequence,
    /// One entry per item of `sequence`.
    pub provenance: Vec<Provenance>,
    pub segments: Vec<SegmentRecord>,
    /// Every id fed after the slot, in order.
    pub ids: Vec<u32>,
    /// First item of the infill answer section; 0 for generation.
    pub answer_start: usize,
}

impl Decoded {
    pub fn timeouts(&self) -> Vec<Granularity> {
        self.segments.iter().filter(|s| s.timed_out).map(|s| s.granularity).collect()
    }

    pub fn answer(&self) -> SymbolicSequence {
        SymbolicSequence(self.sequence.0[self.answer_start..].to_vec())
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&x| x == p).count()
    }
}

struct Run<'a, M: TokenModel + ?Sized> {
    model: &'a mut M,
    vocab: &'a Vocab,
    params: &'a DecodeParams,
    sink: &'a mut dyn TraceSink,
    rng: ChaCha8Rng,
    history: Vec<u32>,
    logits: Vec<f32>,
}

impl<'a, M: TokenModel + ?Sized> Run<'a, M> {
    fn start(
        model: &'a mut M,
        vocab: &'a Vocab,
        embedding: Option<&[f32]>,
        params: &'a DecodeParams,
        sink: &'a mut dyn TraceSink,
    ) -> Result<Self, DecodeError> {
        params.validate()?;
        if model.vocab_size() != vocab.len() {
            return Err(DecodeError::InvalidParams(format!(
                "model vocabulary has {} ids but the tokenizer has {}",
                model.vocab_size(),
                vocab.len()
            )));
        }
        let logits = model.begin(embedding)?;
        Ok(Self { model, vocab, params, sink, rng: ChaCha8Rng::seed_from_u64(params.seed), history: Vec::new(), logits })
    }

    fn full(&self) -> bool {
        self.model.position() >= self.model.context_len()
    }

    fn push(&mut self, id: u32, provenance: Provenance) -> Result<(), DecodeError> {
        if self.full() {
            return Err(DecodeError::BudgetExhausted { limit: self.model.context_len() });
        }
        let surface = match self.vocab.special_of(id) {
            Some(t) => t.surface(),
            None => String::from_utf8_lossy(self.vocab.token_bytes(id).unwrap_or_default()).into_owned(),
        };
        self.sink.event(&TraceEvent { step: self.history.len(), id, surface, provenance, logit_rank: logit_rank(&self.logits, id) });
        self.logits = self.model.feed(id)?;
        self.history.push(id);
        Ok(())
    }

    fn sample(&mut self, allowed: impl Fn(u32) -> bool) -> Result<u32, DecodeError> {
        sample_masked(&self.logits, self.params, &self.history, self.vocab.special_base(), allowed, &mut self.rng)
    }

    fn text(&self, ids: &[u32]) -> Result<String, DecodeError> {
        let t = self.vocab.decode_text(ids)?;
        Ok(t.strip_prefix(' ').map(str::to_string).unwrap_or(t))
    }
}

fn end_granularity(end: ControlToken) -> Granularity {
    match end {
        ControlToken::EndP => Granularity::Paragraph,
        ControlToken::EndL => Granularity::Line,
        _ => Granularity::Phrase,
    }
}

/// Force-feeds Condition items and samples every `text END` Predict pair
/// until the END id appears or the segment budget runs out.
fn guided<M: TokenModel + ?Sized>(run: &mut Run<M>, items: &[Symbol], hints: &[Granularity]) -> Result<Decoded, DecodeError> {
    let base = run.vocab.special_base();
    let mut out = SymbolicSequence::new();
    let mut provenance = Vec::with_capacity(items.len());
    let mut segments = Vec::new();
    let mut syl: Option<u32> = None;
    let mut directive: Option<ControlToken> = None;
    let mut i = 0;
    while i < items.len() {
        let sym = &items[i];
        match (&sym.item, sym.role) {
            (Item::Token(t), role) => {
                run.push(run.vocab.special_id(*t), Provenance::Forced)?;
                if let Some(s) = t.syl_value() {
                    syl = Some(s);
                }
                if directive_granularity(*t).is_some() || *t == ControlToken::Mask {
                    directive = Some(*t);
                }
                out.push(*t, role);
                provenance.push(Provenance::Forced);
            }
            (Item::Text(text), Role::Condition) => {
                for id in run.vocab.encode_item_text(text) {
                    run.push(id, Provenance::Forced)?;
                }
                out.text(text.clone(), Role::Condition);
                provenance.push(Provenance::Forced);
            }
            (Item::Text(_), Role::Predict) => {
                let end = items
                    .get(i + 1)
                    .filter(|s| s.role == Role::Predict)
                    .and_then(|s| s.item.token())
                    .filter(|t| t.is_end())
                    .ok_or_else(|| DecodeError::MalformedPlan(format!("predicted text at item {i} is not closed by an END token")))?;
                let target = syl.ok_or_else(|| DecodeError::MalformedPlan(format!("segment at item {i} has no syllable target")))?;
                let granularity = match directive {
                    Some(ControlToken::Mask) => hints.get(segments.len()).copied().unwrap_or(end_granularity(end)),
                    Some(d) => directive_granularity(d).unwrap_or(end_granularity(end)),
                    None => end_granularity(end),
                };
                let end_id = run.vocab.special_id(end);
                let budget = run.params.segment_budget(target);
                let visible = run.model.position();
                let mut ids = Vec::new();
                let mut closed = false;
                while ids.len() < budget {
                    let id = run.sample(|x| x < base || x == end_id)?;
                    run.push(id, Provenance::Sampled)?;
                    if id == end_id {
                        closed = true;
                        break;
                    }
                    ids.push(id);
                }
                let end_prov = if closed { Provenance::Sampled } else { Provenance::InjectedOnTimeout };
                if !closed {
                    run.push(end_id, end_prov)?;
                }
                let text = run.text(&ids)?;
                segments.push(SegmentRecord {
                    item: out.len(),
                    granularity,
                    target,
                    end,
                    text: text.clone(),
                    tokens: ids.len(),
                    timed_out: !closed,
                    visible,
                });
                out.text(text, Role::Predict);
                provenance.push(Provenance::Sampled);
                out.pred(end);
                provenance.push(end_prov);
                i += 2;
                continue;
            }
        }
        i += 1;
    }
    Ok(Decoded { sequence: out, provenance, segments, ids: run.history.clone(), answer_start: 0 })
}

/// Forces the prompt, then samples freely until `<DOC_END>` or the context
/// window is full.
fn unguided<M: TokenModel + ?Sized>(run: &mut Run<M>, items: &[Symbol]) -> Result<Decoded, DecodeError> {
    let mut out = SymbolicSequence::new();
    let mut provenance = Vec::new();
    for sym in items.iter().take_while(|s| s.role == Role::Condition) {
        match &sym.item {
            Item::Token(t) => run.push(run.vocab.special_id(*t), Provenance::Forced)?,
            Item::Text(text) => {
                for id in run.vocab.encode_item_text(text) {
                    run.push(id, Provenance::Forced)?;
                }
            }
        }
        out.0.push(sym.clone());
        provenance.push(Provenance::Forced);
    }
    let pad = run.vocab.special_id(ControlToken::Pad);
    let doc_end = run.vocab.special_id(ControlToken::DocEnd);
    let mut generated = Vec::new();
    while !run.full() {
        let id = run.sample(|x| x != pad)?;
        run.push(id, Provenance::Sampled)?;
        generated.push(id);
        if id == doc_end {
            break;
        }
    }
    for item in run.vocab.decode(&generated)? {
        out.push(item, Role::Predict);
        provenance.push(Provenance::Sampled);
    }
    Ok(Decoded { sequence: out, provenance, segments: Vec::new(), ids: run.history.clone(), answer_start: 0 })
}

/// Runs a generation plan from `serialize_generation`.
///
/// Back and Both force every Condition item and sample the segments. Front
/// forces the prompt and leaves the body entirely to the model.
pub fn execute_plan<M: TokenModel + ?Sized>(
    model: &mut M,
    vocab: &Vocab,
    plan: &SymbolicSequence,
    layout: Layout,
    embedding: Option<&[f32]>,
    params: &DecodeParams,
    sink: &mut dyn TraceSink,
) -> Result<Decoded, DecodeError> {
    let mut run = Run::start(model, vocab, embedding, params, sink)?;
    match layout {
        Layout::Front => unguided(&mut run, &plan.0),
        Layout::Back | Layout::Both => guided(&mut run, &plan.0, &[]),
    }
}

/// Fills the answer scaffold of `serialize_infilling` after the visible
/// context. `granularities` names each masked segment in answer order and
/// labels `<MASK>` segments.
#[allow(clippy::too_many_arguments)]
pub fn execute_infill<M: TokenModel + ?Sized>(
    model: &mut M,
    vocab: &Vocab,
    context: &SymbolicSequence,
    answer: &SymbolicSequence,
    granularities: &[Granularity],
    embedding: Option<&[f32]>,
    params: &DecodeParams,
    sink: &mut dyn TraceSink,
) -> Result<Decoded, DecodeError> {
    if !answer.iter().any(|s| s.role == Role::Predict && matches!(s.item, Item::Text(_))) {
        return Err(PlanError::NothingMasked.into());
    }
    if answer.0.first().and_then(|s| s.item.token()) != Some(ControlToken::Start) {
        return Err(DecodeError::MalformedPlan("answer scaffold must open with <START>".into()));
    }
    let items: Vec<Symbol> = context.0.iter().chain(&answer.0).cloned().collect();
    let mut run = Run::start(model, vocab, embedding, params, sink)?;
    let mut decoded = guided(&mut run, &items, granularities)?;
    decoded.answer_start = context.len();
    Ok(decoded)
}

/// Past-context-only infilling: the masked tree is decoded as a Back
/// generation plan, so each masked span sees only what precedes it.
pub fn execute_baseline<M: TokenModel + ?Sized>(
    model: &mut M,
    vocab: &Vocab,
    masked: &PlanTree,
    embedding: Option<&[f32]>,
    params: &DecodeParams,
    sink: &mut dyn TraceSink,
) -> Result<Decoded, DecodeError> {
    if masked.targets().is_empty() {
        return Err(PlanError::NothingMasked.into());
    }
    let plan = serialize_generation(masked, Layout::Back)?;
    execute_plan(model, vocab, &plan, Layout::Back, embedding, params, sink)
}
