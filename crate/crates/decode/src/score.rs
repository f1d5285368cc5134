//! Expected-versus-realized syllables for decoded outputs.

use syllaform_core::planner::{
    infill_pairs, parse_infill_answer, ControlToken, Granularity, Item, PlanError, PlanTree, SegmentPair, SegmentPairs, SymbolicSequence,
};
use syllaform_core::syllables::SyllableCounter;

#[derive(Debug, Clone, PartialEq)]
struct Span {
    granularity: Granularity,
    expected: Option<u32>,
    text: String,
    paragraph: usize,
}

#[derive(Default)]
struct Open {
    granularity: Option<Granularity>,
    expected: Option<u32>,
    text: String,
}

/// Reads body segments leniently: every `GEN_X ... END` run, every
/// `<GEN_L_NW>` line and every paragraph, in closing order. Malformed
/// stretches still yield whatever text they contain.
fn scan(seq: &SymbolicSequence) -> Vec<Span> {
    let items = seq.items();
    let start = items.iter().position(|i| i.token() == Some(ControlToken::LyrStart)).map(|p| p + 1).unwrap_or(0);
    let mut out = Vec::new();
    let mut paragraph: Option<(Option<u32>, Vec<String>)> = None;
    let mut para_index = 0usize;
    let mut syl: Option<u32> = None;
    let mut seg: Option<Open> = None;
    let mut line: Option<Open> = None;

    let close_para = |paragraph: &mut Option<(Option<u32>, Vec<String>)>, out: &mut Vec<Span>, para_index: &mut usize| {
        if let Some((expected, parts)) = paragraph.take() {
            out.push(Span { granularity: Granularity::Paragraph, expected, text: parts.join("\n"), paragraph: *para_index });
            *para_index += 1;
        }
    };

    for item in &items[start..] {
        match item {
            Item::Text(t) => {
                if let Some(s) = seg.as_mut() {
                    s.text.push_str(t);
                } else if let Some((_, parts)) = paragraph.as_mut() {
                    parts.push(t.clone());
                }
            }
            Item::Token(tok) => match tok {
                ControlToken::Form(_) => {
                    close_para(&mut paragraph, &mut out, &mut para_index);
                    paragraph = Some((None, Vec::new()));
                    syl = None;
                }
                ControlToken::Syl(s) => {
                    let s = *s as u32;
                    match paragraph.as_mut() {
                        Some((expected @ None, _)) => *expected = Some(s),
                        _ => syl = Some(s),
                    }
                }
                ControlToken::GenP => seg = Some(Open { granularity: None, expected: None, text: String::new() }),
                ControlToken::GenL => seg = Some(Open { granularity: Some(Granularity::Line), expected: syl, text: String::new() }),
                ControlToken::GenN => seg = Some(Open { granularity: Some(Granularity::Phrase), expected: syl, text: String::new() }),
                ControlToken::GenW => seg = Some(Open { granularity: Some(Granularity::Word), expected: syl, text: String::new() }),
                ControlToken::GenLNw => line = Some(Open { granularity: Some(Granularity::Line), expected: syl, text: String::new() }),
                ControlToken::EndP | ControlToken::EndL | ControlToken::EndNw | ControlToken::DocEnd => {
                    if let Some(s) = seg.take() {
                        if let Some(l) = line.as_mut() {
                            let part = s.text.trim();
                            if !part.is_empty() {
                                if !l.text.is_empty() {
                                    l.text.push(' ');
                                }
                                l.text.push_str(part);
                            }
                        } else if let Some((_, parts)) = paragraph.as_mut() {
                            parts.push(s.text.clone());
                        }
                        if let Some(g) = s.granularity {
                            out.push(Span { granularity: g, expected: s.expected, text: s.text, paragraph: para_index });
                        }
                    }
                    if matches!(tok, ControlToken::EndL | ControlToken::DocEnd) {
                        if let Some(l) = line.take() {
                            if let Some((_, parts)) = paragraph.as_mut() {
                                parts.push(l.text.clone());
                            }
                            out.push(Span { granularity: Granularity::Line, expected: l.expected, text: l.text, paragraph: para_index });
                        }
                    }
                    if *tok == ControlToken::DocEnd {
                        close_para(&mut paragraph, &mut out, &mut para_index);
                        break;
                    }
                }
                _ => {}
            },
        }
    }
    if let Some(s) = seg.take() {
        if let Some(g) = s.granularity {
            out.push(Span { granularity: g, expected: s.expected, text: s.text, paragraph: para_index });
        }
    }
    close_para(&mut paragraph, &mut out, &mut para_index);
    out
}

/// Pairs every syllable target of `plan` with what `output` realized.
///
/// Segments are matched per granularity in order of appearance, so a Front
/// output that drifts from the plan is scored against the plan's targets;
/// targets without a realized counterpart score 0.
pub fn realized_pairs(plan: &SymbolicSequence, output: &SymbolicSequence, counter: &SyllableCounter) -> SegmentPairs {
    let expected = scan(plan);
    let realized = scan(output);
    let mut cursor = [0usize; 4];
    let slot = |g: Granularity| match g {
        Granularity::Paragraph => 0,
        Granularity::Line => 1,
        Granularity::Phrase => 2,
        Granularity::Word => 3,
    };
    let mut pairs = Vec::new();
    for e in expected {
        let Some(target) = e.expected else { continue };
        let k = slot(e.granularity);
        let hit = realized.iter().filter(|r| r.granularity == e.granularity).nth(cursor[k]);
        cursor[k] += 1;
        let text = hit.map(|r| r.text.clone()).unwrap_or_default();
        pairs.push(SegmentPair {
            granularity: e.granularity,
            expected: target,
            realized: counter.realized(&text),
            text,
            paragraph: e.paragraph,
        });
    }
    SegmentPairs(pairs)
}

/// Expected-versus-realized pairs of a completed infill answer.
pub fn score_infill(masked: &PlanTree, answer: &SymbolicSequence, counter: &SyllableCounter) -> Result<SegmentPairs, PlanError> {
    let grans: Vec<Granularity> = masked.targets().iter().map(|(_, n)| n.granularity).collect();
    let segments = parse_infill_answer(answer, &grans)?;
    Ok(infill_pairs(masked, &segments, counter))
}
