//! Syllable-control metrics, edit distance, similarity scoring, reports and
//! song-form consistency matrices.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SongDocument, SongForm};
use crate::embed::{text_pair_hash, Embedder, HashedBowEmbedder};
use crate::planner::{Granularity, SegmentPair};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("expected {expected} counts but got {realized} realized counts")]
    LengthMismatch { expected: usize, realized: usize },
    #[error("syllable set is empty")]
    EmptySet,
    #[error("expected syllable count at index {0} is zero")]
    ZeroExpected(usize),
    #[error("nothing to report")]
    EmptyInput,
    #[error("bad score file line {line}: {msg}")]
    BadScoreFile { line: usize, msg: String },
}

fn check(expected: &[u32], realized: &[u32]) -> Result<(), MetricsError> {
    if expected.len() != realized.len() {
        return Err(MetricsError::LengthMismatch { expected: expected.len(), realized: realized.len() });
    }
    if expected.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    if let Some(i) = expected.iter().position(|&s| s == 0) {
        return Err(MetricsError::ZeroExpected(i));
    }
    Ok(())
}

/// Syllable count distance. A realized count of zero is floored to one in
/// the second denominator.
pub fn scd(expected: &[u32], realized: &[u32]) -> Result<f64, MetricsError> {
    check(expected, realized)?;
    let sum: f64 = expected
        .iter()
        .zip(realized)
        .map(|(&s, &r)| {
            let d = (s as f64 - r as f64).abs();
            d / s as f64 + d / r.max(1) as f64
        })
        .sum();
    Ok(sum / (2 * expected.len()) as f64)
}

/// Percentage of positions whose realized count differs from the request.
pub fn scerr(expected: &[u32], realized: &[u32]) -> Result<f64, MetricsError> {
    check(expected, realized)?;
    let wrong = expected.iter().zip(realized).filter(|(s, r)| s != r).count();
    Ok(100.0 * wrong as f64 / expected.len() as f64)
}

/// Character-level edit distance (unit-cost insert, delete, substitute).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over the longer length in characters; 0 for two empties.
pub fn nld(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / longest as f64
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub trait SimilarityScorer: Send + Sync {
    fn score(&self, a: &str, b: &str) -> f64;
}

/// Cosine similarity of embeddings.
pub struct CosineScorer<E: Embedder = HashedBowEmbedder> {
    pub embedder: E,
}

impl Default for CosineScorer {
    fn default() -> Self {
        Self { embedder: HashedBowEmbedder::default() }
    }
}

impl<E: Embedder> SimilarityScorer for CosineScorer<E> {
    fn score(&self, a: &str, b: &str) -> f64 {
        self.embedder.embed(a).cosine(&self.embedder.embed(b))
    }
}

#[derive(Deserialize)]
struct ScoreRecord {
    hash: String,
    score: f64,
}

/// Precomputed pair scores keyed by [`text_pair_hash`], one JSON object per
/// line: `{"hash": "...", "score": 0.87}`. Missing pairs are scored by the
/// fallback.
pub struct PairFileScorer {
    scores: HashMap<String, f64>,
    fallback: Box<dyn SimilarityScorer>,
}

impl PairFileScorer {
    pub fn from_reader(reader: impl BufRead, fallback: Box<dyn SimilarityScorer>) -> Result<Self, MetricsError> {
        let mut scores = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| MetricsError::BadScoreFile { line: i + 1, msg: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScoreRecord =
                serde_json::from_str(&line).map_err(|e| MetricsError::BadScoreFile { line: i + 1, msg: e.to_string() })?;
            scores.insert(rec.hash, rec.score);
        }
        Ok(Self { scores, fallback })
    }

    pub fn load(path: &Path, fallback: Box<dyn SimilarityScorer>) -> Result<Self, MetricsError> {
        let file = std::fs::File::open(path).map_err(|e| MetricsError::BadScoreFile { line: 0, msg: e.to_string() })?;
        Self::from_reader(std::io::BufReader::new(file), fallback)
    }
}

impl SimilarityScorer for PairFileScorer {
    fn score(&self, a: &str, b: &str) -> f64 {
        match self.scores.get(&text_pair_hash(a, b)) {
            Some(&s) => s,
            None => self.fallback.score(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Full,
    Para,
    Line,
    Phrase,
    Word,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::Full, Level::Para, Level::Line, Level::Phrase, Level::Word];

    pub fn of(g: Granularity) -> Level {
        match g {
            Granularity::Paragraph => Level::Para,
            Granularity::Line => Level::Line,
            Granularity::Phrase => Level::Phrase,
            Granularity::Word => Level::Word,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Level::Full => "Full",
            Level::Para => "Para",
            Level::Line => "Line",
            Level::Phrase => "Phrase",
            Level::Word => "Word",
        }
    }

    fn includes(self, g: Granularity) -> bool {
        self == Level::Full || self == Level::of(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub level: Level,
    pub segments: usize,
    pub scd: Option<f64>,
    pub scerr: Option<f64>,
    pub ppl: Option<f64>,
    pub similarity: Option<f64>,
    pub timeouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub levels: Vec<LevelMetrics>,
}

/// Reference text compared against generated text at one granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPair {
    pub granularity: Granularity,
    pub reference: String,
    pub generated: String,
}

#[derive(Default)]
pub struct ReportInputs {
    pub pairs: Vec<SegmentPair>,
    /// Granularity of every segment whose END was injected on timeout.
    pub timeouts: Vec<Granularity>,
    pub ppl: HashMap<Level, f64>,
    pub texts: Vec<TextPair>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Pools segment pairs per level; `Full` pools everything.
pub fn build_report(inputs: &ReportInputs, scorer: &dyn SimilarityScorer) -> Result<MetricsReport, MetricsError> {
    if inputs.pairs.is_empty() && inputs.texts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let sims: Vec<(Granularity, f64)> = inputs.texts.iter().map(|t| (t.granularity, scorer.score(&t.reference, &t.generated))).collect();
    let mut levels = Vec::new();
    for level in Level::ALL {
        let (exp, real): (Vec<u32>, Vec<u32>) =
            inputs.pairs.iter().filter(|p| level.includes(p.granularity)).map(|p| (p.expected, p.realized)).unzip();
        let (scd_v, scerr_v) = if exp.is_empty() { (None, None) } else { (Some(scd(&exp, &real)?), Some(scerr(&exp, &real)?)) };
        levels.push(LevelMetrics {
            level,
            segments: exp.len(),
            scd: scd_v,
            scerr: scerr_v,
            ppl: inputs.ppl.get(&level).copied(),
            similarity: mean(sims.iter().filter(|(g, _)| level.includes(*g)).map(|(_, s)| *s)),
            timeouts: inputs.timeouts.iter().filter(|g| level.includes(**g)).count(),
        });
    }
    Ok(MetricsReport { levels })
}

impl MetricsReport {
    pub fn get(&self, level: Level) -> &LevelMetrics {
        self.levels.iter().find(|l| l.level == level).expect("report has every level")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table, one row per level; `-` marks an empty cell.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"));
        let mut out =
            format!("{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}\n", "Level", "Segments", "SCD", "SCErr%", "PPL", "Sim", "Timeouts");
        for l in &self.levels {
            let _ = writeln!(
                out,
                "{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
                l.level.label(),
                l.segments,
                cell(l.scd, 3),
                cell(l.scerr, 3),
                cell(l.ppl, 3),
                cell(l.similarity, 3),
                l.timeouts
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyMatrices {
    pub forms: Vec<SongForm>,
    pub similarity: Vec<Vec<Option<f64>>>,
    pub nld: Vec<Vec<Option<f64>>>,
    pub pairs: Vec<Vec<usize>>,
}

/// Averages similarity and NLD over every unordered pair of distinct
/// paragraphs within each song, grouped by form pair.
pub fn consistency_matrices(docs: &[SongDocument], scorer: &dyn SimilarityScorer) -> ConsistencyMatrices {
    let n = SongForm::ALL.len();
    let mut sim = vec![vec![0.0; n]; n];
    let mut dist = vec![vec![0.0; n]; n];
    let mut count = vec![vec![0usize; n]; n];
    for doc in docs {
        let paras: Vec<(usize, String)> = doc.paragraphs.iter().map(|p| (p.form.index(), normalize_whitespace(&p.text()))).collect();
        for i in 0..paras.len() {
            for j in i + 1..paras.len() {
                let (fa, ta) = &paras[i];
                let (fb, tb) = &paras[j];
                let s = scorer.score(ta, tb);
                let d = nld(ta, tb);
                for (x, y) in [(*fa, *fb), (*fb, *fa)] {
                    sim[x][y] += s;
                    dist[x][y] += d;
                    count[x][y] += 1;
                }
                if fa == fb {
                    // the mirrored update above double counted the diagonal
                    sim[*fa][*fa] -= s;
                    dist[*fa][*fa] -= d;
                    count[*fa][*fa] -= 1;
                }
            }
        }
    }
    let avg = |m: &Vec<Vec<f64>>| -> Vec<Vec<Option<f64>>> {
        (0..n).map(|i| (0..n).map(|j| (count[i][j] > 0).then(|| m[i][j] / count[i][j] as f64)).collect()).collect()
    };
    ConsistencyMatrices { forms: SongForm::ALL.to_vec(), similarity: avg(&sim), nld: avg(&dist), pairs: count.clone() }
}

impl ConsistencyMatrices {
    pub fn similarity_of(&self, a: SongForm, b: SongForm) -> Option<f64> {
        self.similarity[a.index()][b.index()]
    }

    pub fn nld_of(&self, a: SongForm, b: SongForm) -> Option<f64> {
        self.nld[a.index()][b.index()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrices serialize")
    }

    /// Long-format CSV: `form_a,form_b,pairs,similarity,nld`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("form_a,form_b,pairs,similarity,nld\n");
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        for (i, a) in self.forms.iter().enumerate() {
            for (j, b) in self.forms.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    a.label(),
                    b.label(),
                    self.pairs[i][j],
                    cell(self.similarity[i][j]),
                    cell(self.nld[i][j])
                );
            }
        }
        out
    }
}
