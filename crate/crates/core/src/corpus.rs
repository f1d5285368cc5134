//! Lyrics ingestion: bracketed-header parsing, filtering, syllable annotation,
//! JSON-lines persistence, deterministic splitting and extractive summaries.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::syllables::{is_countable, SyllableCounter};

/// Largest paragraph syllable total the control vocabulary can express.
pub const SYLLABLE_CAP: u32 = 300;

/// Documents scoring above this are dropped.
pub const TOXICITY_THRESHOLD: f64 = 0.5;

/// Minimum share of ASCII letters among non-whitespace characters.
pub const ENGLISH_ASCII_SHARE: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("unknown song form {0:?}")]
    UnknownForm(String),
    #[error("section [{0}] has no lyric lines")]
    EmptySection(String),
    #[error("no bracketed section headers found")]
    NoSections,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("corpus line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SongForm {
    Verse,
    Chorus,
    PreChorus,
    PostChorus,
    Bridge,
}

impl SongForm {
    pub const ALL: [SongForm; 5] = [SongForm::Verse, SongForm::Chorus, SongForm::PreChorus, SongForm::PostChorus, SongForm::Bridge];

    pub fn label(self) -> &'static str {
        match self {
            SongForm::Verse => "Verse",
            SongForm::Chorus => "Chorus",
            SongForm::PreChorus => "Pre-Chorus",
            SongForm::PostChorus => "Post-Chorus",
            SongForm::Bridge => "Bridge",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Case-insensitive, hyphen/underscore/space tolerant.
    pub fn from_label(label: &str) -> Option<SongForm> {
        let key: String = label.chars().filter(|c| !matches!(c, '-' | '_' | ' ' | '\t')).flat_map(char::to_lowercase).collect();
        match key.as_str() {
            "verse" => Some(SongForm::Verse),
            "chorus" => Some(SongForm::Chorus),
            "prechorus" => Some(SongForm::PreChorus),
            "postchorus" => Some(SongForm::PostChorus),
            "bridge" => Some(SongForm::Bridge),
            _ => None,
        }
    }
}

impl fmt::Display for SongForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    pub syllables: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub words: Vec<Word>,
}

impl Line {
    pub fn syllables(&self) -> u32 {
        self.words.iter().map(|w| w.syllables).sum()
    }

    pub fn text(&self) -> String {
        let parts: Vec<&str> = self.words.iter().map(|w| w.text.as_str()).collect();
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub form: SongForm,
    pub form_index: u32,
    pub lines: Vec<Line>,
}

impl Paragraph {
    pub fn syllables(&self) -> u32 {
        self.lines.iter().map(Line::syllables).sum()
    }

    /// Lines joined by newlines.
    pub fn text(&self) -> String {
        let lines: Vec<String> = self.lines.iter().map(Line::text).collect();
        lines.join("\n")
    }

    pub fn word_count(&self) -> usize {
        self.lines.iter().map(|l| l.words.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SongDocument {
    pub id: String,
    pub paragraphs: Vec<Paragraph>,
    pub language_tag: String,
}

impl SongDocument {
    /// All lyric text; paragraphs separated by blank lines.
    pub fn lyrics_text(&self) -> String {
        let paras: Vec<String> = self.paragraphs.iter().map(Paragraph::text).collect();
        paras.join("\n\n")
    }

    pub fn word_count(&self) -> usize {
        self.paragraphs.iter().map(Paragraph::word_count).sum()
    }

    /// Equality ignoring id and language tag.
    pub fn same_lyrics(&self, other: &SongDocument) -> bool {
        self.paragraphs == other.paragraphs
    }
}

/// Splits a line into annotated words. Words without letters are dropped.
pub fn annotate_line(text: &str, counter: &SyllableCounter) -> Line {
    let words = text
        .split_whitespace()
        .filter(|w| is_countable(w))
        .map(|w| Word { text: w.to_string(), syllables: counter.count_word(w).map(|c| c.get()).unwrap_or(1) })
        .collect();
    Line { words }
}

fn parse_header(line: &str) -> Option<&str> {
    let t = line.trim();
    if t.len() >= 2 && t.starts_with('[') && t.ends_with(']') {
        Some(t[1..t.len() - 1].trim())
    } else {
        None
    }
}

fn split_label(raw: &str) -> (&str, u32) {
    // "Chorus: Artist" carries a performer suffix.
    let label = raw.split(':').next().unwrap_or("").trim();
    let digits_start = label.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits_start < label.len() {
        let index = label[digits_start..].parse().unwrap_or(1).max(1);
        (label[..digits_start].trim(), index)
    } else {
        (label, 1)
    }
}

/// Parses bracketed-header lyrics into an annotated document.
pub fn parse_song(id: &str, raw: &str, counter: &SyllableCounter) -> Result<SongDocument, CorpusError> {
    struct Open {
        raw: String,
        form: SongForm,
        index: u32,
        lines: Vec<Line>,
    }
    let mut paragraphs = Vec::new();
    let mut open: Option<Open> = None;

    let close = |open: Option<Open>, paragraphs: &mut Vec<Paragraph>| -> Result<(), CorpusError> {
        if let Some(o) = open {
            if o.lines.is_empty() {
                return Err(CorpusError::EmptySection(o.raw));
            }
            paragraphs.push(Paragraph { form: o.form, form_index: o.index, lines: o.lines });
        }
        Ok(())
    };

    for text in raw.lines() {
        if let Some(header) = parse_header(text) {
            close(open.take(), &mut paragraphs)?;
            let (label, index) = split_label(header);
            let form = SongForm::from_label(label).ok_or_else(|| CorpusError::UnknownForm(label.to_string()))?;
            open = Some(Open { raw: header.to_string(), form, index, lines: Vec::new() });
        } else if let Some(o) = open.as_mut() {
            let line = annotate_line(text, counter);
            if !line.words.is_empty() {
                o.lines.push(line);
            }
        }
    }
    close(open.take(), &mut paragraphs)?;
    if paragraphs.is_empty() {
        return Err(CorpusError::NoSections);
    }
    Ok(SongDocument { id: id.to_string(), paragraphs, language_tag: "en".into() })
}

/// Renders a document back into the bracketed-header format.
pub fn render_song(doc: &SongDocument) -> String {
    let mut out = String::new();
    for (i, p) in doc.paragraphs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("[{} {}]\n", p.form.label(), p.form_index));
        for line in &p.lines {
            out.push_str(&line.text());
            out.push('\n');
        }
    }
    out
}

/// Share of ASCII letters among the non-whitespace characters of `text`.
pub fn ascii_letter_share(text: &str) -> f64 {
    let mut total = 0usize;
    let mut ascii = 0usize;
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if c.is_ascii_alphabetic() {
            ascii += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        ascii as f64 / total as f64
    }
}

pub fn looks_english(text: &str) -> bool {
    ascii_letter_share(text) >= ENGLISH_ASCII_SHARE
}

/// Any text to [0, 1] toxicity estimator.
pub trait ToxicityScorer {
    fn score(&self, text: &str) -> f64;
}

impl<F: Fn(&str) -> f64> ToxicityScorer for F {
    fn score(&self, text: &str) -> f64 {
        self(text)
    }
}

/// Blocked-wordlist scorer: `min(1, weight * hits / words)`.
///
/// With the default weight of 5, a lyric where more than one word in ten is
/// on the list scores above the 0.5 exclusion threshold.
#[derive(Debug, Clone)]
pub struct WordlistScorer {
    blocked: HashSet<String>,
    pub weight: f64,
}

const DEFAULT_BLOCKLIST: &str = include_str!("../data/blocked_words.txt");

impl WordlistScorer {
    pub const DEFAULT_WEIGHT: f64 = 5.0;

    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        Self {
            blocked: words.into_iter().map(|w| w.trim().to_lowercase()).filter(|w| !w.is_empty()).collect(),
            weight: Self::DEFAULT_WEIGHT,
        }
    }

    pub fn from_list(text: &str) -> Self {
        Self::new(text.lines().map(str::to_string))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self::from_list(&text))
    }
}

impl Default for WordlistScorer {
    fn default() -> Self {
        Self::from_list(DEFAULT_BLOCKLIST)
    }
}

impl ToxicityScorer for WordlistScorer {
    fn score(&self, text: &str) -> f64 {
        let mut words = 0usize;
        let mut hits = 0usize;
        for w in text.split_whitespace() {
            let key: String = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
            if key.is_empty() {
                continue;
            }
            words += 1;
            if self.blocked.contains(&key) {
                hits += 1;
            }
        }
        if words == 0 {
            return 0.0;
        }
        (self.weight * hits as f64 / words as f64).min(1.0)
    }
}

pub fn score_toxicity(doc: &SongDocument, scorer: &dyn ToxicityScorer) -> f64 {
    scorer.score(&doc.lyrics_text()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NotEnglish,
    Toxic,
    SyllableCap,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped: Vec<(String, DropReason)>,
}

/// Applies the language gate, the toxicity filter (per song) and the
/// paragraph syllable cap.
pub fn filter_corpus(docs: Vec<SongDocument>, scorer: &dyn ToxicityScorer) -> (Vec<SongDocument>, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::with_capacity(docs.len());
    for doc in docs {
        let text = doc.lyrics_text();
        let reason = if !looks_english(&text) {
            Some(DropReason::NotEnglish)
        } else if score_toxicity(&doc, scorer) > TOXICITY_THRESHOLD {
            Some(DropReason::Toxic)
        } else if doc.paragraphs.iter().any(|p| p.syllables() > SYLLABLE_CAP) {
            Some(DropReason::SyllableCap)
        } else {
            None
        };
        match reason {
            Some(r) => report.dropped.push((doc.id.clone(), r)),
            None => kept.push(doc),
        }
    }
    report.kept = kept.len();
    (kept, report)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<SongDocument>,
    pub valid: Vec<SongDocument>,
    pub eval: Vec<SongDocument>,
}

/// Seeded shuffle, then floor-sized validation and evaluation parts; the
/// remainder goes to training.
pub fn split_corpus(docs: Vec<SongDocument>, ratios: (f64, f64, f64), seed: u64) -> Result<Splits, CorpusError> {
    let (tr, va, ev) = ratios;
    let ok = [tr, va, ev].iter().all(|r| r.is_finite() && *r >= 0.0) && (tr + va + ev - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(CorpusError::BadRatios(ratios));
    }
    let mut docs = docs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.shuffle(&mut rng);
    let n = docs.len() as f64;
    let n_valid = (n * va).floor() as usize;
    let n_eval = (n * ev).floor() as usize;
    let eval = docs.split_off(docs.len() - n_eval);
    let valid = docs.split_off(docs.len() - n_valid);
    Ok(Splits { train: docs, valid, eval })
}

fn norm_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Per-word count of corpus lines containing the word.
#[derive(Debug, Clone, Default)]
pub struct LineFrequency {
    lines: usize,
    freq: HashMap<String, usize>,
}

impl LineFrequency {
    pub fn from_docs<'a>(docs: impl IntoIterator<Item = &'a SongDocument>) -> Self {
        let mut out = Self::default();
        for doc in docs {
            for p in &doc.paragraphs {
                for line in &p.lines {
                    out.lines += 1;
                    let distinct: HashSet<String> = line.words.iter().map(|w| norm_word(&w.text)).collect();
                    for w in distinct {
                        *out.freq.entry(w).or_default() += 1;
                    }
                }
            }
        }
        out
    }

    /// `ln(1 + N / lf(w))`; unseen words are treated as appearing once.
    pub fn weight(&self, word: &str) -> f64 {
        let lf = self.freq.get(&norm_word(word)).copied().unwrap_or(0).max(1);
        (1.0 + self.lines.max(1) as f64 / lf as f64).ln()
    }
}

/// Extractive summary: the `sentence_budget` highest-scoring lines, in
/// document order, joined by ". ". Ties keep the earlier line.
pub fn summarize_for_eval(doc: &SongDocument, sentence_budget: usize, stats: &LineFrequency) -> String {
    let lines: Vec<&Line> = doc.paragraphs.iter().flat_map(|p| p.lines.iter()).collect();
    let mut scored: Vec<(usize, f64)> = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let distinct: HashSet<String> = l.words.iter().map(|w| norm_word(&w.text)).collect();
            (i, distinct.iter().map(|w| stats.weight(w)).sum())
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = scored.into_iter().take(sentence_budget).map(|(i, _)| i).collect();
    chosen.sort_unstable();
    let parts: Vec<String> = chosen.into_iter().map(|i| lines[i].text()).collect();
    parts.join(". ")
}

pub fn write_jsonl(path: &Path, docs: &[SongDocument]) -> Result<(), CorpusError> {
    let io = |e: std::io::Error| CorpusError::Io(format!("{}: {e}", path.display()));
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for doc in docs {
        let line = serde_json::to_string(doc).map_err(|e| CorpusError::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SongDocument>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
    let mut docs = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: SongDocument = serde_json::from_str(&line).map_err(|e| CorpusError::BadRecord { line: i + 1, reason: e.to_string() })?;
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counter() -> SyllableCounter {
        SyllableCounter::new()
    }

    #[test]
    fn parses_two_sections() {
        let doc = parse_song("s", "[Verse 1]\nhello world\n\n[Chorus]\nla la la", &counter()).unwrap();
        let forms: Vec<SongForm> = doc.paragraphs.iter().map(|p| p.form).collect();
        assert_eq!(forms, vec![SongForm::Verse, SongForm::Chorus]);
        assert_eq!(doc.paragraphs[0].form_index, 1);
        assert_eq!(doc.paragraphs[0].syllables(), 3);
        assert_eq!(doc.paragraphs[1].syllables(), 3);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_song("s", "[Interlude]\nhmm", &counter()), Err(CorpusError::UnknownForm("Interlude".into())));
        assert_eq!(parse_song("s", "[Chorus]\n\n", &counter()), Err(CorpusError::EmptySection("Chorus".into())));
        assert_eq!(parse_song("s", "just words", &counter()), Err(CorpusError::NoSections));
        assert_eq!(parse_song("s", "[Verse]\n123 456\n", &counter()), Err(CorpusError::EmptySection("Verse".into())));
    }

    #[test]
    fn header_labels_are_tolerant() {
        let raw = "[pre chorus 2]\nup\n[Pre-Chorus]\nup\n[POST_CHORUS]\nup\n[Chorus: Someone]\nup\n[Bridge 3]\nup";
        let doc = parse_song("s", raw, &counter()).unwrap();
        let got: Vec<(SongForm, u32)> = doc.paragraphs.iter().map(|p| (p.form, p.form_index)).collect();
        assert_eq!(
            got,
            vec![
                (SongForm::PreChorus, 2),
                (SongForm::PreChorus, 1),
                (SongForm::PostChorus, 1),
                (SongForm::Chorus, 1),
                (SongForm::Bridge, 3)
            ]
        );
    }

    #[test]
    fn numeric_tokens_dropped() {
        let doc = parse_song("s", "[Verse]\nwe got 99 problems\n", &counter()).unwrap();
        assert_eq!(doc.paragraphs[0].lines[0].text(), "we got problems");
    }

    #[test]
    fn render_round_trip() {
        let raw = "[Verse 1]\nHello, world!\nit's a test\n\n[Chorus 2]\nla la la\n";
        let doc = parse_song("x", raw, &counter()).unwrap();
        let again = parse_song("x", &render_song(&doc), &counter()).unwrap();
        assert_eq!(doc, again);
    }

    #[test]
    fn toxicity_default_and_constant() {
        let doc = parse_song("s", "[Verse]\nthe sun is bright today\n", &counter()).unwrap();
        assert_eq!(score_toxicity(&doc, &WordlistScorer::default()), 0.0);
        let always = |_: &str| 1.0;
        assert_eq!(score_toxicity(&doc, &always), 1.0);
        let (kept, report) = filter_corpus(vec![doc], &always);
        assert!(kept.is_empty());
        assert_eq!(report.dropped[0].1, DropReason::Toxic);
    }

    #[test]
    fn toxicity_two_hits_in_twenty() {
        let scorer = WordlistScorer::from_list("zap\nzorp\n");
        let mut words = vec!["la"; 18];
        words.push("zap");
        words.push("Zorp!");
        let raw = format!("[Verse]\n{}\n", words.join(" "));
        let doc = parse_song("s", &raw, &counter()).unwrap();
        // 5 * 2 / 20
        let expected = 0.5;
        assert!((score_toxicity(&doc, &scorer) - expected).abs() < 1e-12);
        // exactly at the threshold is kept
        let (kept, _) = filter_corpus(vec![doc], &scorer);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn language_gate() {
        assert!(looks_english("hello, world"));
        assert!(!looks_english("привет мир hello"));
    }

    fn docs(n: usize) -> Vec<SongDocument> {
        (0..n).map(|i| parse_song(&format!("d{i}"), "[Verse]\nla\n", &counter()).unwrap()).collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split_corpus(docs(10), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.eval.len()), (8, 1, 1));
        let again = split_corpus(docs(10), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(s, again);
        let mut ids: Vec<String> = s.train.iter().chain(&s.valid).chain(&s.eval).map(|d| d.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);

        let s = split_corpus(docs(3), (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.eval.len()), (3, 0, 0));
        assert!(split_corpus(docs(3), (0.5, 0.1, 0.1), 1).is_err());
        assert!(split_corpus(docs(3), (1.2, -0.1, -0.1), 1).is_err());
    }

    #[test]
    fn summary_saturation_and_single() {
        let c = counter();
        let one = parse_song("a", "[Verse]\nonly line here\n", &c).unwrap();
        let stats = LineFrequency::from_docs([&one]);
        assert_eq!(summarize_for_eval(&one, 1, &stats), "only line here");
        let two = parse_song("b", "[Verse]\nfirst line\n[Chorus]\nsecond line\n", &c).unwrap();
        assert_eq!(summarize_for_eval(&two, 5, &stats), "first line. second line");
    }

    #[test]
    fn summary_prefers_rare_words() {
        // Toy corpus of three documents, six lines in total.
        let c = counter();
        let target = parse_song("t", "[Verse]\nlove you baby\nneon lighthouse\n", &c).unwrap();
        let d2 = parse_song("u", "[Verse]\nlove you baby\nlove me\n", &c).unwrap();
        let d3 = parse_song("v", "[Chorus]\nbaby love\nyou\n", &c).unwrap();
        let stats = LineFrequency::from_docs([&target, &d2, &d3]);
        // Line frequencies: love 4, you 3, baby 3, me 1, neon 1, lighthouse 1; N = 6.
        // "love you baby": ln(1+6/4) + 2 ln(1+6/3) = 0.9163 + 2.1972 = 3.1135
        // "neon lighthouse": 2 ln(1+6/1) = 3.8918
        let line_a = 2.0 * (1.0f64 + 6.0).ln();
        let line_b = (1.0f64 + 6.0 / 4.0).ln() + 2.0 * (1.0f64 + 2.0).ln();
        assert!(line_a > line_b);
        assert_eq!(summarize_for_eval(&target, 1, &stats), "neon lighthouse");
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = std::env::temp_dir().join(format!("syllaform-corpus-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.jsonl");
        let d = docs(3);
        write_jsonl(&path, &d).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), d);
        std::fs::remove_dir_all(&dir).ok();
    }
}
