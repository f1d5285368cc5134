//! Text embeddings used for semantic conditioning and similarity scoring.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_EMBED_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("line {line}: {msg}")]
    BadRecord { line: usize, msg: String },
    #[error("vector for {hash} has dimension {got}, expected {want}")]
    DimMismatch { hash: String, got: usize, want: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticEmbedding {
    pub vector: Vec<f32>,
    pub source_text_hash: String,
}

impl SemanticEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &SemanticEmbedding) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = self.vector.iter().zip(&other.vector).map(|(&a, &b)| a as f64 * b as f64).sum();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub fn text_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of an ordered text pair, used as the key of precomputed score files.
pub fn text_pair_hash(a: &str, b: &str) -> String {
    let mut h = Sha256::new();
    h.update(a.as_bytes());
    h.update([0u8]);
    h.update(b.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> SemanticEmbedding;
}

/// Signed feature hashing of lowercased words, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedBowEmbedder {
    dim: usize,
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_EMBED_DIM }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn bow_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()).filter(|w| !w.is_empty())
}

impl HashedBowEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    /// Bucket and sign for one already-normalized word.
    pub fn bucket(&self, word: &str) -> (usize, f32) {
        let h = fnv1a(word.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % self.dim as u64) as usize, sign)
    }
}

impl Embedder for HashedBowEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> SemanticEmbedding {
        let mut v = vec![0.0f64; self.dim];
        for w in bow_words(text) {
            let (i, s) = self.bucket(&w);
            v[i] += s as f64;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        SemanticEmbedding { vector: v.into_iter().map(|x| x as f32).collect(), source_text_hash: text_hash(text) }
    }
}

#[derive(Deserialize)]
struct VectorRecord {
    hash: String,
    vector: Vec<f32>,
}

/// Precomputed vectors keyed by [`text_hash`], one JSON object per line:
/// `{"hash": "...", "vector": [...]}`. Unknown texts fall back to the hashed
/// bag-of-words embedder.
pub struct FileEmbedder {
    vectors: HashMap<String, Vec<f32>>,
    fallback: HashedBowEmbedder,
}

impl FileEmbedder {
    pub fn from_reader(reader: impl BufRead, dim: usize) -> Result<Self, EmbedError> {
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VectorRecord = serde_json::from_str(&line).map_err(|e| EmbedError::BadRecord { line: i + 1, msg: e.to_string() })?;
            if rec.vector.len() != dim {
                return Err(EmbedError::DimMismatch { hash: rec.hash, got: rec.vector.len(), want: dim });
            }
            vectors.insert(rec.hash, rec.vector);
        }
        Ok(Self { vectors, fallback: HashedBowEmbedder::new(dim) })
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self, EmbedError> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?), dim)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl Embedder for FileEmbedder {
    fn dim(&self) -> usize {
        self.fallback.dim
    }

    fn embed(&self, text: &str) -> SemanticEmbedding {
        let hash = text_hash(text);
        match self.vectors.get(&hash) {
            Some(v) => SemanticEmbedding { vector: v.clone(), source_text_hash: hash },
            None => self.fallback.embed(text),
        }
    }
}
