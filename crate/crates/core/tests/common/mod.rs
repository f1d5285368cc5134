//! Hand-built plans shared by the golden-file tests.

#![allow(dead_code)]

use std::path::PathBuf;

use syllaform_core::corpus::parse_song;
use syllaform_core::planner::{build_tree, Granularity, Mode, PlanNode, PlanTree};
use syllaform_core::SyllableCounter;

pub const RAW_SONG: &str = "[Verse 1]
walk the road
in the rain tonight

[Chorus 1]
love is all

[Bridge 1]
ocean wonder
";

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn base() -> PlanTree {
    let doc = parse_song("golden-1", RAW_SONG, &SyllableCounter::new()).expect("fixture parses");
    build_tree(&doc).expect("fixture builds")
}

/// Replaces a line's children with `(offset, len, mode)` segments; length-1
/// segments are words, longer ones phrases.
fn segment(line: &mut PlanNode, segs: &[(usize, usize, Mode)]) {
    let start = line.text_span.as_ref().unwrap().start;
    let word_syl: Vec<u32> = line.children.iter().map(PlanNode::syllables).collect();
    line.mode = Mode::Recurse;
    line.children = segs
        .iter()
        .map(|&(off, len, mode)| {
            let g = if len == 1 { Granularity::Word } else { Granularity::Phrase };
            let syl = word_syl[off..off + len].iter().sum();
            PlanNode::leaf(g, syl, mode, Some(start + off..start + off + len))
        })
        .collect();
}

fn leaf(node: &mut PlanNode, mode: Mode) {
    node.mode = mode;
    node.children.clear();
}

/// Generation plan touching every granularity: a whole line, a phrase,
/// words, a whole paragraph.
pub fn generation_plan() -> PlanTree {
    let mut t = base();
    let verse = &mut t.paragraphs[0].root;
    leaf(&mut verse.children[0], Mode::Target);
    segment(&mut verse.children[1], &[(0, 2, Mode::Target), (2, 1, Mode::Target), (3, 1, Mode::Target)]);
    leaf(&mut t.paragraphs[1].root, Mode::Target);
    leaf(&mut t.paragraphs[2].root.children[0], Mode::Target);
    t
}

/// Infilling plan: a masked line, a masked phrase and word between context
/// words, a masked paragraph, and a paragraph left fully visible.
pub fn infilling_plan() -> PlanTree {
    let mut t = base();
    let verse = &mut t.paragraphs[0].root;
    leaf(&mut verse.children[0], Mode::Target);
    segment(&mut verse.children[1], &[(0, 1, Mode::Context), (1, 2, Mode::Target), (3, 1, Mode::Target)]);
    leaf(&mut t.paragraphs[1].root, Mode::Target);
    leaf(&mut t.paragraphs[2].root, Mode::Context);
    t
}
