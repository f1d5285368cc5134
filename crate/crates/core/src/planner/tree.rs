use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::token::MAX_SYL;
use super::PlanError;
use crate::corpus::{SongDocument, SongForm};
use crate::syllables::SyllableCount;

/// Longest phrase a selection may create.
pub const MAX_PHRASE_WORDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Paragraph,
    Line,
    Phrase,
    Word,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [Granularity::Paragraph, Granularity::Line, Granularity::Phrase, Granularity::Word];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Text to be produced (generation) or masked (infilling).
    Target,
    /// Split further into children.
    Recurse,
    /// Verbatim text visible to the model.
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanNode {
    pub granularity: Granularity,
    pub syllable_target: SyllableCount,
    pub mode: Mode,
    /// Word indices within the owning paragraph; `None` for text-less plans.
    pub text_span: Option<Range<usize>>,
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    pub fn leaf(granularity: Granularity, syllables: u32, mode: Mode, text_span: Option<Range<usize>>) -> Self {
        PlanNode {
            granularity,
            syllable_target: SyllableCount::new(syllables.max(1)).expect("nonzero"),
            mode,
            text_span,
            children: Vec::new(),
        }
    }

    pub fn syllables(&self) -> u32 {
        self.syllable_target.get()
    }

    /// Pre-order visit of this node and all descendants.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a PlanNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    fn retarget(&mut self, mode: Mode) {
        self.mode = mode;
        self.children.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParagraphPlan {
    pub form: SongForm,
    pub form_index: u32,
    /// Flattened words of the paragraph; empty for text-less plans.
    pub words: Vec<String>,
    /// Index into `words` where each line starts.
    pub line_starts: Vec<usize>,
    pub root: PlanNode,
}

impl ParagraphPlan {
    pub fn has_text(&self) -> bool {
        !self.words.is_empty()
    }

    /// Words in `span`; a newline separates words of different lines.
    pub fn span_text(&self, span: &Range<usize>) -> String {
        let mut out = String::new();
        for i in span.clone() {
            if i > span.start {
                out.push(if self.line_starts.contains(&i) { '\n' } else { ' ' });
            }
            out.push_str(&self.words[i]);
        }
        out
    }

    pub fn node_text(&self, node: &PlanNode) -> String {
        node.text_span.as_ref().map(|s| self.span_text(s)).unwrap_or_default()
    }

    pub fn is_line_start(&self, i: usize) -> bool {
        self.line_starts.contains(&i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanTree {
    pub song_id: String,
    pub paragraphs: Vec<ParagraphPlan>,
}

impl PlanTree {
    /// Target nodes in document (pre-order) order with their paragraph index.
    pub fn targets(&self) -> Vec<(usize, &PlanNode)> {
        let mut out = Vec::new();
        for (pi, p) in self.paragraphs.iter().enumerate() {
            p.root.walk(&mut |n| {
                if n.mode == Mode::Target {
                    out.push((pi, n));
                }
            });
        }
        out
    }
}

/// One paragraph root per paragraph, line children, word leaves.
pub fn build_tree(doc: &SongDocument) -> Result<PlanTree, PlanError> {
    let mut paragraphs = Vec::with_capacity(doc.paragraphs.len());
    for (pi, p) in doc.paragraphs.iter().enumerate() {
        let total = p.syllables();
        if total > MAX_SYL {
            return Err(PlanError::SyllableCapExceeded { paragraph: pi, total });
        }
        let mut words = Vec::new();
        let mut line_starts = Vec::new();
        let mut lines = Vec::new();
        for line in &p.lines {
            let start = words.len();
            line_starts.push(start);
            let leaves: Vec<PlanNode> = line
                .words
                .iter()
                .enumerate()
                .map(|(k, w)| PlanNode::leaf(Granularity::Word, w.syllables, Mode::Target, Some(start + k..start + k + 1)))
                .collect();
            words.extend(line.words.iter().map(|w| w.text.clone()));
            lines.push(PlanNode {
                granularity: Granularity::Line,
                syllable_target: count(line.syllables()),
                mode: Mode::Recurse,
                text_span: Some(start..words.len()),
                children: leaves,
            });
        }
        let root = PlanNode {
            granularity: Granularity::Paragraph,
            syllable_target: count(total),
            mode: Mode::Recurse,
            text_span: Some(0..words.len()),
            children: lines,
        };
        paragraphs.push(ParagraphPlan { form: p.form, form_index: p.form_index, words, line_starts, root });
    }
    Ok(PlanTree { song_id: doc.id.clone(), paragraphs })
}

fn count(v: u32) -> SyllableCount {
    SyllableCount::new(v.max(1)).expect("nonzero")
}

/// Bernoulli draw from one uniform `f64`.
pub fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.gen::<f64>() < p
}

/// Uniform integer on `1..=max` from one uniform `f64`.
pub fn uniform_len<R: Rng + ?Sized>(rng: &mut R, max: usize) -> usize {
    let u: f64 = rng.gen();
    1 + ((u * max as f64) as usize).min(max - 1)
}

fn word_syllables(line: &PlanNode, i: usize) -> u32 {
    line.children.iter().find(|c| c.text_span.as_ref().is_some_and(|s| s.start == i && s.len() == 1)).map(PlanNode::syllables).unwrap_or(1)
}

/// Word/phrase segmentation of a recursing line. `mask_p = None` tiles every
/// word (generation); `Some(p)` masks each position with probability `p` and
/// keeps the rest as context (infilling).
fn segment_line<R: Rng + ?Sized>(line: &mut PlanNode, rng: &mut R, mask_p: Option<f64>) {
    let span = line.text_span.clone().expect("line span");
    let syl: Vec<u32> = span.clone().map(|i| word_syllables(line, i)).collect();
    let mut leaves = Vec::new();
    let mut i = 0;
    let n = syl.len();
    while i < n {
        let selected = match mask_p {
            None => true,
            Some(p) => bernoulli(rng, p),
        };
        if !selected {
            leaves.push(PlanNode::leaf(Granularity::Word, syl[i], Mode::Context, Some(span.start + i..span.start + i + 1)));
            i += 1;
            continue;
        }
        if bernoulli(rng, 0.5) {
            leaves.push(PlanNode::leaf(Granularity::Word, syl[i], Mode::Target, Some(span.start + i..span.start + i + 1)));
            i += 1;
        } else {
            let k = uniform_len(rng, MAX_PHRASE_WORDS.min(n - i));
            let total = syl[i..i + k].iter().sum();
            leaves.push(PlanNode::leaf(Granularity::Phrase, total, Mode::Target, Some(span.start + i..span.start + i + k)));
            i += k;
        }
    }
    line.mode = Mode::Recurse;
    line.children = leaves;
}

fn select<R: Rng + ?Sized>(tree: &PlanTree, p: f64, rng: &mut R, masking: bool) -> PlanTree {
    let mut out = tree.clone();
    for para in &mut out.paragraphs {
        if bernoulli(rng, p) {
            para.root.retarget(Mode::Target);
            continue;
        }
        para.root.mode = Mode::Recurse;
        for line in &mut para.root.children {
            if bernoulli(rng, p) {
                line.retarget(Mode::Target);
            } else {
                segment_line(line, rng, masking.then_some(p));
            }
        }
    }
    out
}

/// Generation plan synthesis: pre-order over paragraph and line nodes, each
/// selected as a whole with probability `p`; recursing lines are tiled by
/// single words (probability 0.5) or phrases of uniform length
/// `1..=min(8, remaining)`.
///
/// `tree` must come from [`build_tree`].
pub fn select_spans<R: Rng + ?Sized>(tree: &PlanTree, p: f64, rng: &mut R) -> PlanTree {
    select(tree, p, rng, false)
}

/// Infilling mask synthesis: like [`select_spans`], but inside a recursing
/// line each position starts a masked word/phrase only with probability `p`;
/// unselected words stay as context.
pub fn select_masks<R: Rng + ?Sized>(tree: &PlanTree, p: f64, rng: &mut R) -> PlanTree {
    select(tree, p, rng, true)
}

/// Checks the structural invariants a serializer relies on: node modes per
/// level, spans tiling their parent, and syllable conservation.
pub fn check_tiling(tree: &PlanTree) -> Result<(), PlanError> {
    let bad = |msg: String| Err(PlanError::IncompleteTiling(msg));
    for (pi, para) in tree.paragraphs.iter().enumerate() {
        let root = &para.root;
        if root.granularity != Granularity::Paragraph {
            return bad(format!("paragraph {pi}: root is {:?}", root.granularity));
        }
        match root.mode {
            Mode::Target | Mode::Context => {
                if !root.children.is_empty() {
                    return bad(format!("paragraph {pi}: leaf node has children"));
                }
            }
            Mode::Recurse => {
                if root.children.is_empty() {
                    return bad(format!("paragraph {pi}: recursing node without lines"));
                }
                check_children(para, root, pi)?;
                for (li, line) in root.children.iter().enumerate() {
                    if line.granularity != Granularity::Line {
                        return bad(format!("paragraph {pi} line {li}: expected a line node"));
                    }
                    match line.mode {
                        Mode::Target | Mode::Context => {
                            if !line.children.is_empty() {
                                return bad(format!("paragraph {pi} line {li}: leaf node has children"));
                            }
                        }
                        Mode::Recurse => {
                            if line.children.is_empty() {
                                return bad(format!("paragraph {pi} line {li}: recursing line without segments"));
                            }
                            check_children(para, line, pi)?;
                            for seg in &line.children {
                                let ok_kind = matches!(seg.granularity, Granularity::Word | Granularity::Phrase);
                                if !ok_kind || seg.mode == Mode::Recurse || !seg.children.is_empty() {
                                    return bad(format!("paragraph {pi} line {li}: segments must be word/phrase leaves"));
                                }
                                if let Some(s) = &seg.text_span {
                                    let ok = match seg.granularity {
                                        Granularity::Word => s.len() == 1,
                                        _ => (1..=MAX_PHRASE_WORDS).contains(&s.len()),
                                    };
                                    if !ok {
                                        return bad(format!("paragraph {pi} line {li}: segment spans {} words", s.len()));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_children(para: &ParagraphPlan, node: &PlanNode, pi: usize) -> Result<(), PlanError> {
    let sum: u32 = node.children.iter().map(PlanNode::syllables).sum();
    if sum != node.syllables() {
        return Err(PlanError::IncompleteTiling(format!(
            "paragraph {pi}: {:?} node targets {} syllables but children sum to {sum}",
            node.granularity,
            node.syllables()
        )));
    }
    if let Some(span) = &node.text_span {
        let mut at = span.start;
        for c in &node.children {
            let Some(cs) = &c.text_span else {
                return Err(PlanError::IncompleteTiling(format!("paragraph {pi}: child without span")));
            };
            if cs.start != at || cs.end > para.words.len() {
                return Err(PlanError::IncompleteTiling(format!("paragraph {pi}: gap or overlap at word {at}")));
            }
            at = cs.end;
        }
        if at != span.end {
            return Err(PlanError::IncompleteTiling(format!("paragraph {pi}: children stop at word {at}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Word,
    Phrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentOutline {
    pub kind: SegmentKind,
    pub syllables: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineOutline {
    pub syllables: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Vec<SegmentOutline>>,
}

/// A user-authored section: either whole-paragraph or per-line targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionOutline {
    pub form: SongForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syllables: Option<u32>,
    #[serde(default)]
    pub lines: Vec<LineOutline>,
}

/// Builds a text-less plan tree from a structured outline.
pub fn tree_from_outline(song_id: &str, sections: &[SectionOutline]) -> Result<PlanTree, PlanError> {
    if sections.is_empty() {
        return Err(PlanError::InvalidPlan("plan has no sections".into()));
    }
    let in_range = |v: u32, what: &str| {
        if (1..=MAX_SYL).contains(&v) {
            Ok(v)
        } else {
            Err(PlanError::InvalidPlan(format!("{what} syllables {v} outside 1..={MAX_SYL}")))
        }
    };
    let mut seen = std::collections::HashMap::new();
    let mut paragraphs = Vec::new();
    for (pi, sec) in sections.iter().enumerate() {
        let index = seen.entry(sec.form).and_modify(|i| *i += 1).or_insert(1u32);
        let root = if sec.lines.is_empty() {
            let total = sec.syllables.ok_or_else(|| PlanError::InvalidPlan(format!("section {pi} has neither syllables nor lines")))?;
            if total > MAX_SYL {
                return Err(PlanError::SyllableCapExceeded { paragraph: pi, total });
            }
            PlanNode::leaf(Granularity::Paragraph, in_range(total, "paragraph")?, Mode::Target, None)
        } else {
            let mut lines = Vec::new();
            for line in &sec.lines {
                let s = in_range(line.syllables, "line")?;
                let node = match &line.segmentation {
                    None => PlanNode::leaf(Granularity::Line, s, Mode::Target, None),
                    Some(segs) if segs.is_empty() => PlanNode::leaf(Granularity::Line, s, Mode::Target, None),
                    Some(segs) => {
                        let mut children = Vec::new();
                        for seg in segs {
                            let g = match seg.kind {
                                SegmentKind::Word => Granularity::Word,
                                SegmentKind::Phrase => Granularity::Phrase,
                            };
                            children.push(PlanNode::leaf(g, in_range(seg.syllables, "segment")?, Mode::Target, None));
                        }
                        let sum: u32 = children.iter().map(PlanNode::syllables).sum();
                        if sum != s {
                            return Err(PlanError::InvalidPlan(format!("line targets {s} syllables but its segments sum to {sum}")));
                        }
                        PlanNode {
                            granularity: Granularity::Line,
                            syllable_target: count(s),
                            mode: Mode::Recurse,
                            text_span: None,
                            children,
                        }
                    }
                };
                lines.push(node);
            }
            let total: u32 = lines.iter().map(PlanNode::syllables).sum();
            if total > MAX_SYL {
                return Err(PlanError::SyllableCapExceeded { paragraph: pi, total });
            }
            if let Some(declared) = sec.syllables {
                if declared != total {
                    return Err(PlanError::InvalidPlan(format!("section {pi} declares {declared} syllables but its lines sum to {total}")));
                }
            }
            PlanNode {
                granularity: Granularity::Paragraph,
                syllable_target: count(total),
                mode: Mode::Recurse,
                text_span: None,
                children: lines,
            }
        };
        paragraphs.push(ParagraphPlan { form: sec.form, form_index: *index, words: Vec::new(), line_starts: Vec::new(), root });
    }
    Ok(PlanTree { song_id: song_id.to_string(), paragraphs })
}

/// A user-chosen span to mask in an existing document.
///
/// `line` and `words` index into the document; `words` is a range within
/// the line. `syllables` replaces the span's current count as the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub granularity: Granularity,
    pub paragraph: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Range<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syllables: Option<u32>,
}

/// Builds an infilling tree from `doc` where exactly the spans in `masks`
/// are targets and everything else is context. Parent targets are
/// recomputed from their children.
pub fn mask_spans(doc: &SongDocument, masks: &[MaskSpec]) -> Result<PlanTree, PlanError> {
    if masks.is_empty() {
        return Err(PlanError::NothingMasked);
    }
    let mut tree = build_tree(doc)?;
    for para in &mut tree.paragraphs {
        for line in &mut para.root.children {
            for leaf in &mut line.children {
                leaf.mode = Mode::Context;
            }
        }
    }
    let bad = |i: usize, m: String| Err(PlanError::InvalidPlan(format!("mask {i}: {m}")));
    // (paragraph, line, word range) of every mask so far
    let mut claimed: Vec<(usize, Option<usize>, Range<usize>)> = Vec::new();
    for (i, m) in masks.iter().enumerate() {
        let Some(para) = tree.paragraphs.get_mut(m.paragraph) else {
            return bad(i, format!("paragraph {} does not exist", m.paragraph));
        };
        if let Some(s) = m.syllables {
            if !(1..=MAX_SYL).contains(&s) {
                return bad(i, format!("syllables {s} outside 1..={MAX_SYL}"));
            }
        }
        let shape_ok = match m.granularity {
            Granularity::Paragraph => m.line.is_none() && m.words.is_none(),
            Granularity::Line => m.line.is_some() && m.words.is_none(),
            Granularity::Phrase | Granularity::Word => m.line.is_some() && m.words.is_some(),
        };
        if !shape_ok {
            return bad(
                i,
                format!(
                    "{:?} masks take {}",
                    m.granularity,
                    match m.granularity {
                        Granularity::Paragraph => "neither line nor words",
                        Granularity::Line => "a line and no words",
                        _ => "both line and words",
                    }
                ),
            );
        }
        let line_count = para.root.children.len();
        let range = match (m.line, &m.words) {
            (None, _) => 0..usize::MAX,
            (Some(l), None) if l < line_count => 0..usize::MAX,
            (Some(l), Some(w)) if l < line_count => {
                let n = para.root.children[l].text_span.as_ref().map_or(0, Range::len);
                if w.start >= w.end || w.end > n {
                    return bad(i, format!("words {}..{} do not lie inside line {l} of {n} words", w.start, w.end));
                }
                if m.granularity == Granularity::Word && w.len() != 1 {
                    return bad(i, "a word mask covers exactly one word".into());
                }
                w.clone()
            }
            (Some(l), _) => return bad(i, format!("line {l} does not exist")),
        };
        let overlaps = claimed.iter().any(|(p, l, r)| {
            *p == m.paragraph && (l.is_none() || m.line.is_none() || (*l == m.line && r.start < range.end && range.start < r.end))
        });
        if overlaps {
            return bad(i, "overlaps an earlier mask".into());
        }
        claimed.push((m.paragraph, m.line, range));
        match (m.line, &m.words) {
            (None, _) => {
                para.root.retarget(Mode::Target);
                if let Some(s) = m.syllables {
                    para.root.syllable_target = count(s);
                }
            }
            (Some(l), None) => {
                let line = &mut para.root.children[l];
                line.retarget(Mode::Target);
                if let Some(s) = m.syllables {
                    line.syllable_target = count(s);
                }
            }
            (Some(l), Some(w)) => {
                let line = &mut para.root.children[l];
                let start = line.text_span.as_ref().expect("line span").start;
                // earlier splices in this line shift positions, so locate by span
                let pos =
                    line.children.iter().position(|c| c.text_span.as_ref().is_some_and(|s| s.start == start + w.start)).expect("word leaf");
                let natural: u32 = line.children[pos..pos + w.len()].iter().map(PlanNode::syllables).sum();
                let leaf =
                    PlanNode::leaf(m.granularity, m.syllables.unwrap_or(natural), Mode::Target, Some(start + w.start..start + w.end));
                line.children.splice(pos..pos + w.len(), [leaf]);
            }
        }
    }
    for (pi, para) in tree.paragraphs.iter_mut().enumerate() {
        if para.root.mode != Mode::Recurse {
            continue;
        }
        for line in &mut para.root.children {
            if line.mode == Mode::Recurse {
                line.syllable_target = count(line.children.iter().map(PlanNode::syllables).sum());
            }
        }
        let total: u32 = para.root.children.iter().map(PlanNode::syllables).sum();
        if total > MAX_SYL {
            return Err(PlanError::SyllableCapExceeded { paragraph: pi, total });
        }
        para.root.syllable_target = count(total);
    }
    Ok(tree)
}
