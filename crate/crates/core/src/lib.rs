//! Building blocks for syllable-controlled, song-form-aware lyrics
//! generation: counting, corpus handling, plan synthesis and serialization,
//! a byte-level BPE vocabulary, and evaluation metrics.

pub mod corpus;
pub mod embed;
pub mod metrics;
pub mod planner;
pub mod syllables;
pub mod synth;
pub mod tokenizer;

pub use corpus::{Line, Paragraph, SongDocument, SongForm, Word};
pub use planner::{ControlToken, Granularity, Layout, PlanTree, SymbolicSequence};
pub use syllables::{SyllableCount, SyllableCounter};
