//! Plan trees, stochastic span selection, the control-token grammar and its
//! inverse.

mod parse;
mod sequence;
mod serialize;
mod token;
mod tree;

use thiserror::Error;

pub use parse::{fill_document, infill_pairs, parse_infill_answer, parse_output, InfillSegment, ParsedOutput, SegmentPair, SegmentPairs};
pub use sequence::{Item, Role, Symbol, SymbolicSequence};
pub use serialize::{
    directive_granularity, end_token, gen_token, inf_token, masked_granularities, serialize_generation, serialize_infilling, InfillFlags,
    Layout,
};
pub use token::{ControlToken, UnknownToken, MAX_SYL};
pub use tree::{
    bernoulli, build_tree, check_tiling, mask_spans, select_masks, select_spans, tree_from_outline, uniform_len, Granularity, LineOutline,
    MaskSpec, Mode, ParagraphPlan, PlanNode, PlanTree, SectionOutline, SegmentKind, SegmentOutline, MAX_PHRASE_WORDS,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("paragraph {paragraph} totals {total} syllables, above the {cap} cap", cap = MAX_SYL)]
    SyllableCapExceeded { paragraph: usize, total: u32 },
    #[error("plan does not tile the document: {0}")]
    IncompleteTiling(String),
    #[error("no span is masked")]
    NothingMasked,
    #[error("grammar violation at item {position}: expected one of {expected:?}")]
    GrammarViolation { position: usize, expected: Vec<String> },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}
