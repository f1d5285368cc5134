use serde::{Deserialize, Serialize};

use super::sequence::{Item, Role, Symbol, SymbolicSequence};
use super::token::ControlToken;
use super::tree::{check_tiling, Granularity, Mode, ParagraphPlan, PlanNode, PlanTree};
use super::PlanError;

/// Where the plan goes relative to `<LYR_START>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Whole plan as a prompt; the model reproduces structure and text.
    Front,
    /// Plan injected step by step while decoding.
    Back,
    /// Front prompt followed by a Back body.
    Both,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "front" => Ok(Layout::Front),
            "back" => Ok(Layout::Back),
            "both" => Ok(Layout::Both),
            other => Err(format!("unknown layout {other:?} (front|back|both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InfillFlags {
    /// A single `<MASK>` in the context for every granularity.
    #[serde(default)]
    pub same_mask: bool,
    /// No song form token in the answer segments.
    #[serde(default)]
    pub no_songform: bool,
}

pub fn gen_token(g: Granularity) -> ControlToken {
    match g {
        Granularity::Paragraph => ControlToken::GenP,
        Granularity::Line => ControlToken::GenL,
        Granularity::Phrase => ControlToken::GenN,
        Granularity::Word => ControlToken::GenW,
    }
}

pub fn inf_token(g: Granularity) -> ControlToken {
    match g {
        Granularity::Paragraph => ControlToken::InfP,
        Granularity::Line => ControlToken::InfL,
        Granularity::Phrase => ControlToken::InfN,
        Granularity::Word => ControlToken::InfW,
    }
}

pub fn end_token(g: Granularity) -> ControlToken {
    match g {
        Granularity::Paragraph => ControlToken::EndP,
        Granularity::Line => ControlToken::EndL,
        Granularity::Phrase | Granularity::Word => ControlToken::EndNw,
    }
}

/// Granularity announced by a segment-opening directive.
pub fn directive_granularity(t: ControlToken) -> Option<Granularity> {
    match t {
        ControlToken::GenP | ControlToken::InfP => Some(Granularity::Paragraph),
        ControlToken::GenL | ControlToken::InfL => Some(Granularity::Line),
        ControlToken::GenN | ControlToken::InfN => Some(Granularity::Phrase),
        ControlToken::GenW | ControlToken::InfW => Some(Granularity::Word),
        _ => None,
    }
}

fn syl(s: u32) -> ControlToken {
    ControlToken::syl(s).expect("syllable targets are validated upstream")
}

/// Back-layout body with natural roles; context nodes are all Condition.
fn body(tree: &PlanTree, out: &mut SymbolicSequence) {
    for para in &tree.paragraphs {
        let root = &para.root;
        out.cond(ControlToken::Form(para.form));
        out.cond(syl(root.syllables()));
        match root.mode {
            Mode::Target | Mode::Context => segment(para, root, out),
            Mode::Recurse => {
                for line in &root.children {
                    out.cond(syl(line.syllables()));
                    match line.mode {
                        Mode::Target | Mode::Context => segment(para, line, out),
                        Mode::Recurse => {
                            out.cond(ControlToken::GenLNw);
                            for seg in &line.children {
                                out.cond(syl(seg.syllables()));
                                segment(para, seg, out);
                            }
                            let all_context = line.children.iter().all(|c| c.mode == Mode::Context);
                            out.push(ControlToken::EndL, if all_context { Role::Condition } else { Role::Predict });
                        }
                    }
                }
            }
        }
    }
}

/// `GEN_X text END_X`; context nodes are forced in full.
fn segment(para: &ParagraphPlan, node: &PlanNode, out: &mut SymbolicSequence) {
    let role = if node.mode == Mode::Context { Role::Condition } else { Role::Predict };
    out.cond(gen_token(node.granularity));
    out.text(para.node_text(node), role);
    out.push(end_token(node.granularity), role);
}

/// Serializes a fully tiled plan for generation under `layout`.
pub fn serialize_generation(tree: &PlanTree, layout: Layout) -> Result<SymbolicSequence, PlanError> {
    check_tiling(tree)?;
    let mut natural = SymbolicSequence::new();
    body(tree, &mut natural);

    let mut out = SymbolicSequence::new();
    if matches!(layout, Layout::Front | Layout::Both) {
        for s in natural.iter().filter(|s| matches!(s.item, Item::Token(_))) {
            out.0.push(Symbol::condition(s.item.clone()));
        }
    }
    out.cond(ControlToken::LyrStart);
    match layout {
        Layout::Front => {
            out.0.extend(natural.0.into_iter().map(|s| Symbol::predict(s.item)));
            out.pred(ControlToken::DocEnd);
        }
        Layout::Back | Layout::Both => {
            out.extend(natural);
            out.cond(ControlToken::DocEnd);
        }
    }
    Ok(out)
}

fn mask_tokens(node: &PlanNode, flags: InfillFlags, out: &mut SymbolicSequence) {
    if flags.same_mask {
        out.cond(ControlToken::Mask);
    } else {
        out.cond(inf_token(node.granularity));
        out.cond(syl(node.syllables()));
    }
}

enum Piece<'a> {
    Word(&'a str),
    Mask(&'a PlanNode),
}

/// Context rendering of a recursing paragraph. Unmasked words form text runs
/// (space within a line, newline between lines); masks are atomic. A line
/// break next to a mask is kept on the text side and dropped between masks.
fn context_lines(para: &ParagraphPlan, flags: InfillFlags, out: &mut SymbolicSequence) {
    fn words<'a>(para: &'a ParagraphPlan, li: usize, node: &PlanNode, pieces: &mut Vec<(usize, Piece<'a>)>) {
        if let Some(span) = &node.text_span {
            for i in span.clone() {
                pieces.push((li, Piece::Word(&para.words[i])));
            }
        }
    }
    let mut pieces: Vec<(usize, Piece)> = Vec::new();
    for (li, line) in para.root.children.iter().enumerate() {
        match line.mode {
            Mode::Target => pieces.push((li, Piece::Mask(line))),
            Mode::Context => words(para, li, line, &mut pieces),
            Mode::Recurse => {
                for seg in &line.children {
                    match seg.mode {
                        Mode::Target => pieces.push((li, Piece::Mask(seg))),
                        _ => words(para, li, seg, &mut pieces),
                    }
                }
            }
        }
    }

    let mut buf = String::new();
    let mut prev: Option<(usize, bool)> = None; // (line, was_text)
    for (li, piece) in &pieces {
        let new_line = prev.is_some_and(|(pl, _)| pl != *li);
        let prev_text = prev.is_some_and(|(_, t)| t);
        match piece {
            Piece::Word(w) => {
                if new_line {
                    buf.push('\n');
                } else if prev_text {
                    buf.push(' ');
                }
                buf.push_str(w);
                prev = Some((*li, true));
            }
            Piece::Mask(node) => {
                if new_line && prev_text {
                    buf.push('\n');
                }
                if !buf.is_empty() {
                    out.text(std::mem::take(&mut buf), Role::Condition);
                }
                mask_tokens(node, flags, out);
                prev = Some((*li, false));
            }
        }
    }
    if !buf.is_empty() {
        out.text(buf, Role::Condition);
    }
}

/// Serializes a masked plan into the visible context and the answer section.
///
/// Target nodes are masked; Context nodes are shown verbatim. The answer
/// starts with `<START>` and lists each masked segment in document order.
pub fn serialize_infilling(tree: &PlanTree, flags: InfillFlags) -> Result<(SymbolicSequence, SymbolicSequence), PlanError> {
    check_tiling(tree)?;
    let targets = tree.targets();
    if targets.is_empty() {
        return Err(PlanError::NothingMasked);
    }

    let mut context = SymbolicSequence::new();
    for para in &tree.paragraphs {
        context.cond(ControlToken::Form(para.form));
        context.cond(syl(para.root.syllables()));
        match para.root.mode {
            Mode::Target => mask_tokens(&para.root, flags, &mut context),
            Mode::Context => context.text(para.node_text(&para.root), Role::Condition),
            Mode::Recurse => context_lines(para, flags, &mut context),
        }
    }

    let mut answer = SymbolicSequence::new();
    answer.cond(ControlToken::Start);
    for (pi, node) in targets {
        let para = &tree.paragraphs[pi];
        if !flags.no_songform {
            answer.cond(ControlToken::Form(para.form));
        }
        answer.cond(if flags.same_mask { ControlToken::Mask } else { inf_token(node.granularity) });
        answer.cond(syl(node.syllables()));
        answer.text(para.node_text(node), Role::Predict);
        answer.pred(end_token(node.granularity));
    }
    Ok((context, answer))
}

/// Granularities of the masked segments, in answer order.
pub fn masked_granularities(tree: &PlanTree) -> Vec<Granularity> {
    tree.targets().into_iter().map(|(_, n)| n.granularity).collect()
}
