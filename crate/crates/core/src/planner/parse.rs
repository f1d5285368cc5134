use serde::{Deserialize, Serialize};

use super::sequence::{Item, SymbolicSequence};
use super::serialize::{directive_granularity, end_token};
use super::token::ControlToken;
use super::tree::{Granularity, Mode, PlanTree};
use super::PlanError;
use crate::corpus::{annotate_line, Line, Paragraph, SongDocument, SongForm};
use crate::syllables::SyllableCounter;

/// One syllable-controlled span: the requested count and what the text
/// actually realizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPair {
    pub granularity: Granularity,
    pub expected: u32,
    pub realized: u32,
    pub text: String,
    pub paragraph: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SegmentPairs(pub Vec<SegmentPair>);

impl SegmentPairs {
    /// `(expected, realized)` at one granularity, or all of them for `None`.
    pub fn lists(&self, granularity: Option<Granularity>) -> (Vec<u32>, Vec<u32>) {
        self.0.iter().filter(|p| granularity.is_none_or(|g| p.granularity == g)).map(|p| (p.expected, p.realized)).unzip()
    }

    pub fn all_exact(&self) -> bool {
        self.0.iter().all(|p| p.expected == p.realized)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub document: SongDocument,
    pub pairs: SegmentPairs,
}

struct Cursor<'a> {
    items: &'a [Item],
    pos: usize,
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Item> {
        self.items.get(self.pos)
    }

    fn peek_token(&self) -> Option<ControlToken> {
        self.peek().and_then(Item::token)
    }

    fn violation(&self, expected: &[&str]) -> PlanError {
        PlanError::GrammarViolation { position: self.offset + self.pos, expected: expected.iter().map(|s| s.to_string()).collect() }
    }

    fn expect(&mut self, want: ControlToken) -> Result<(), PlanError> {
        if self.peek_token() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.violation(&[&want.surface()]))
        }
    }

    fn expect_syl(&mut self) -> Result<u32, PlanError> {
        match self.peek_token().and_then(ControlToken::syl_value) {
            Some(v) => {
                self.pos += 1;
                Ok(v)
            }
            None => Err(self.violation(&["<SYL:n>"])),
        }
    }

    /// Zero or more text items, concatenated.
    fn text(&mut self) -> String {
        let mut out = String::new();
        while let Some(Item::Text(t)) = self.peek() {
            out.push_str(t);
            self.pos += 1;
        }
        out
    }
}

fn lines_of(text: &str, counter: &SyllableCounter) -> Vec<Line> {
    text.split('\n').map(|l| annotate_line(l, counter)).filter(|l| !l.words.is_empty()).collect()
}

/// Parses a generation sequence (optionally with a prompt before
/// `<LYR_START>`) back into a document plus expected/realized syllables for
/// every `<SYL:s>` condition.
pub fn parse_output(seq: &SymbolicSequence, counter: &SyllableCounter) -> Result<ParsedOutput, PlanError> {
    let items = seq.items();
    let start = items.iter().position(|i| i.token() == Some(ControlToken::LyrStart)).map(|p| p + 1).unwrap_or(0);
    let mut c = Cursor { items: &items[start..], pos: 0, offset: start };

    let mut paragraphs = Vec::new();
    let mut pairs = Vec::new();
    let mut form_counts = std::collections::HashMap::<SongForm, u32>::new();

    loop {
        let form = match c.peek_token() {
            Some(ControlToken::DocEnd) => {
                c.pos += 1;
                break;
            }
            Some(ControlToken::Form(f)) => {
                c.pos += 1;
                f
            }
            _ => return Err(c.violation(&["<FORM>", "<DOC_END>"])),
        };
        let pi = paragraphs.len();
        let para_syl = c.expect_syl()?;
        let mut lines: Vec<Line> = Vec::new();
        let mut para_text: Vec<String> = Vec::new();
        if c.peek_token() == Some(ControlToken::GenP) {
            c.pos += 1;
            let text = c.text();
            c.expect(ControlToken::EndP)?;
            lines.extend(lines_of(&text, counter));
            para_text.push(text);
        } else {
            if c.peek_token().and_then(ControlToken::syl_value).is_none() {
                return Err(c.violation(&["<GEN_P>", "<SYL:n>"]));
            }
            while c.peek_token().and_then(ControlToken::syl_value).is_some() {
                let line_syl = c.expect_syl()?;
                let line_text = match c.peek_token() {
                    Some(ControlToken::GenL) => {
                        c.pos += 1;
                        let t = c.text();
                        c.expect(ControlToken::EndL)?;
                        t
                    }
                    Some(ControlToken::GenLNw) => {
                        c.pos += 1;
                        let mut parts = Vec::new();
                        loop {
                            match c.peek_token() {
                                Some(ControlToken::EndL) if !parts.is_empty() => {
                                    c.pos += 1;
                                    break;
                                }
                                Some(t) if t.syl_value().is_some() => {
                                    let seg_syl = c.expect_syl()?;
                                    let g = match c.peek_token() {
                                        Some(ControlToken::GenW) => Granularity::Word,
                                        Some(ControlToken::GenN) => Granularity::Phrase,
                                        _ => return Err(c.violation(&["<GEN_W>", "<GEN_N>"])),
                                    };
                                    c.pos += 1;
                                    let t = c.text();
                                    c.expect(ControlToken::EndNw)?;
                                    pairs.push(SegmentPair {
                                        granularity: g,
                                        expected: seg_syl,
                                        realized: counter.realized(&t),
                                        text: t.clone(),
                                        paragraph: pi,
                                    });
                                    parts.push(t);
                                }
                                _ if parts.is_empty() => return Err(c.violation(&["<SYL:n>"])),
                                _ => return Err(c.violation(&["<SYL:n>", "<END_L>"])),
                            }
                        }
                        let joined: Vec<&str> = parts.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
                        joined.join(" ")
                    }
                    _ => return Err(c.violation(&["<GEN_L>", "<GEN_L_NW>"])),
                };
                pairs.push(SegmentPair {
                    granularity: Granularity::Line,
                    expected: line_syl,
                    realized: counter.realized(&line_text),
                    text: line_text.clone(),
                    paragraph: pi,
                });
                lines.extend(lines_of(&line_text.replace('\n', " "), counter));
                para_text.push(line_text);
            }
        }
        let text = para_text.join("\n");
        pairs.push(SegmentPair {
            granularity: Granularity::Paragraph,
            expected: para_syl,
            realized: counter.realized(&text),
            text,
            paragraph: pi,
        });
        let index = form_counts.entry(form).and_modify(|i| *i += 1).or_insert(1);
        paragraphs.push(Paragraph { form, form_index: *index, lines });
    }
    if c.pos != c.items.len() {
        return Err(c.violation(&["end of sequence"]));
    }
    if paragraphs.is_empty() {
        return Err(PlanError::GrammarViolation { position: start, expected: vec!["<FORM>".into()] });
    }
    // Paragraphs whose text came out empty carry no lines; keep their pairs
    // but not the paragraph itself.
    paragraphs.retain(|p| !p.lines.is_empty());
    Ok(ParsedOutput { document: SongDocument { id: String::new(), paragraphs, language_tag: "en".into() }, pairs: SegmentPairs(pairs) })
}

/// Text produced for each answer segment, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfillSegment {
    pub granularity: Granularity,
    pub expected: u32,
    pub text: String,
}

/// Reads an answer section `<START> ([FORM] (INF_X|MASK) SYL text END)*`.
///
/// `granularities` disambiguates `<MASK>` segments, whose directive does not
/// name a level.
pub fn parse_infill_answer(answer: &SymbolicSequence, granularities: &[Granularity]) -> Result<Vec<InfillSegment>, PlanError> {
    let items = answer.items();
    let mut c = Cursor { items: &items, pos: 0, offset: 0 };
    c.expect(ControlToken::Start)?;
    let mut out = Vec::new();
    while c.peek().is_some() {
        if let Some(ControlToken::Form(_)) = c.peek_token() {
            c.pos += 1;
        }
        let k = out.len();
        let g = match c.peek_token() {
            Some(ControlToken::Mask) => granularities.get(k).copied().ok_or_else(|| c.violation(&["segment granularity"]))?,
            Some(t) => match directive_granularity(t) {
                Some(g) if !matches!(t, ControlToken::GenP | ControlToken::GenL | ControlToken::GenN | ControlToken::GenW) => g,
                _ => return Err(c.violation(&["<INF_*>", "<MASK>"])),
            },
            None => return Err(c.violation(&["<INF_*>", "<MASK>"])),
        };
        c.pos += 1;
        let expected = c.expect_syl()?;
        let text = c.text();
        c.expect(end_token(g))?;
        out.push(InfillSegment { granularity: g, expected, text });
    }
    Ok(out)
}

pub fn infill_pairs(tree: &PlanTree, segments: &[InfillSegment], counter: &SyllableCounter) -> SegmentPairs {
    let paras: Vec<usize> = tree.targets().into_iter().map(|(p, _)| p).collect();
    SegmentPairs(
        segments
            .iter()
            .enumerate()
            .map(|(i, s)| SegmentPair {
                granularity: s.granularity,
                expected: s.expected,
                realized: counter.realized(&s.text),
                text: s.text.clone(),
                paragraph: paras.get(i).copied().unwrap_or(0),
            })
            .collect(),
    )
}

/// Rebuilds the document with each masked target replaced by its filled
/// text, in answer order. Missing fills leave the span empty.
pub fn fill_document(tree: &PlanTree, fills: &[String], counter: &SyllableCounter) -> SongDocument {
    let mut next = fills.iter();
    let mut paragraphs = Vec::new();
    for para in &tree.paragraphs {
        let root = &para.root;
        let mut lines: Vec<String> = Vec::new();
        match root.mode {
            Mode::Target => lines.extend(next.next().map(|s| s.split('\n').map(str::to_string).collect::<Vec<_>>()).unwrap_or_default()),
            Mode::Context => lines.extend(para.node_text(root).split('\n').map(str::to_string)),
            Mode::Recurse => {
                for line in &root.children {
                    let text = match line.mode {
                        Mode::Target => next.next().cloned().unwrap_or_default().replace('\n', " "),
                        Mode::Context => para.node_text(line),
                        Mode::Recurse => {
                            let parts: Vec<String> = line
                                .children
                                .iter()
                                .map(|seg| match seg.mode {
                                    Mode::Target => next.next().cloned().unwrap_or_default().replace('\n', " "),
                                    _ => para.node_text(seg),
                                })
                                .collect();
                            let parts: Vec<&str> = parts.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
                            parts.join(" ")
                        }
                    };
                    lines.push(text);
                }
            }
        }
        let lines: Vec<Line> = lines.iter().map(|l| annotate_line(l, counter)).filter(|l| !l.words.is_empty()).collect();
        if !lines.is_empty() {
            paragraphs.push(Paragraph { form: para.form, form_index: para.form_index, lines });
        }
    }
    SongDocument { id: tree.song_id.clone(), paragraphs, language_tag: "en".into() }
}
