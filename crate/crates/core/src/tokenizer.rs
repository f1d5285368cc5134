//! Byte-level BPE vocabulary with the control tokens as atomic specials.
//!
//! Id layout: `0..256` raw bytes, then learned merges, then one id per
//! [`ControlToken`] in canonical order. Text is pre-split into chunks (an
//! optional leading space plus a run of letters, digits or other symbols, or
//! a whitespace run) and merges never cross chunk boundaries.
//!
//! Text items are encoded with one leading space so that a word gets the
//! same ids at the start of a segment as inside it; decoding strips it again.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::planner::{ControlToken, Item};

pub const VOCAB_FORMAT: &str = "syllaform-vocab";
pub const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("vocabulary size {size} is below the minimum {min}")]
    SizeTooSmall { size: usize, min: usize },
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("bad vocabulary file: {0}")]
    BadFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Digit,
    Space,
    Other,
}

fn class(c: char) -> Class {
    if c.is_alphabetic() || c == '\'' {
        Class::Letter
    } else if c.is_numeric() {
        Class::Digit
    } else if c.is_whitespace() {
        Class::Space
    } else {
        Class::Other
    }
}

/// Splits text into merge-isolated chunks. Concatenating the chunks gives
/// back the input.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = chars[i].0;
        let mut j = i;
        if chars[j].1 == ' ' && j + 1 < chars.len() && class(chars[j + 1].1) != Class::Space {
            j += 1;
        }
        let cls = class(chars[j].1);
        j += 1;
        while j < chars.len() && class(chars[j].1) == cls {
            j += 1;
        }
        if cls == Class::Space && j < chars.len() && j - i > 1 && chars[j - 1].1 == ' ' {
            // leave the last space to prefix the following chunk
            j -= 1;
        }
        let end = chars.get(j).map(|c| c.0).unwrap_or(text.len());
        out.push(&text[start..end]);
        i = j;
    }
    out
}

#[derive(Debug, Clone)]
pub struct Vocab {
    merges: Vec<(u32, u32)>,
    tokens: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
    by_bytes: HashMap<Vec<u8>, u32>,
}

impl Vocab {
    pub fn min_size() -> usize {
        256 + ControlToken::count()
    }

    fn bytes_only() -> Self {
        let tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let by_bytes = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { merges: Vec::new(), tokens, ranks: HashMap::new(), by_bytes }
    }

    fn add_merge(&mut self, a: u32, b: u32) -> u32 {
        let mut bytes = self.tokens[a as usize].clone();
        bytes.extend_from_slice(&self.tokens[b as usize]);
        let id = match self.by_bytes.get(&bytes) {
            Some(&id) => id,
            None => {
                let id = self.tokens.len() as u32;
                self.tokens.push(bytes.clone());
                self.by_bytes.insert(bytes, id);
                id
            }
        };
        self.ranks.insert((a, b), (self.merges.len(), id));
        self.merges.push((a, b));
        id
    }

    /// Number of ids, specials included.
    pub fn len(&self) -> usize {
        self.tokens.len() + ControlToken::count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// First special id; everything below is text.
    pub fn special_base(&self) -> u32 {
        self.tokens.len() as u32
    }

    pub fn special_id(&self, t: ControlToken) -> u32 {
        self.special_base() + t.ordinal() as u32
    }

    pub fn special_of(&self, id: u32) -> Option<ControlToken> {
        let base = self.special_base();
        if id < base {
            return None;
        }
        ControlToken::from_ordinal((id - base) as usize)
    }

    pub fn is_special(&self, id: u32) -> bool {
        id >= self.special_base()
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        while ids.len() > 1 {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id)))
                .min_by_key(|x| x.0);
            let Some((_, pair, merged)) = best else { break };
            let mut next = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(ids[i]);
                    i += 1;
                }
            }
            ids = next;
        }
        out.extend(ids);
    }

    /// Raw text to ids; never produces special ids.
    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in pretokenize(text) {
            self.encode_chunk(chunk.as_bytes(), &mut out);
        }
        out
    }

    /// Bytes of non-special ids, decoded lossily to UTF-8.
    pub fn decode_text(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let t = self.tokens.get(id as usize).ok_or(TokenizerError::UnknownId(id))?;
            bytes.extend_from_slice(t);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Encodes a text item: one leading space, then [`Vocab::encode_text`].
    pub fn encode_item_text(&self, text: &str) -> Vec<u32> {
        self.encode_text(&format!(" {text}"))
    }

    pub fn encode(&self, items: &[Item]) -> Vec<u32> {
        let mut out = Vec::new();
        for item in items {
            match item {
                Item::Token(t) => out.push(self.special_id(*t)),
                Item::Text(s) => out.extend(self.encode_item_text(s)),
            }
        }
        out
    }

    /// Inverse of [`Vocab::encode`]. Consecutive text ids form one text item.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<Item>, TokenizerError> {
        let mut out = Vec::new();
        let mut run: Vec<u32> = Vec::new();
        let flush = |run: &mut Vec<u32>, out: &mut Vec<Item>| -> Result<(), TokenizerError> {
            if !run.is_empty() {
                let text = self.decode_text(run)?;
                out.push(Item::Text(text.strip_prefix(' ').map(str::to_string).unwrap_or(text)));
                run.clear();
            }
            Ok(())
        };
        for &id in ids {
            if id as usize >= self.len() {
                return Err(TokenizerError::UnknownId(id));
            }
            match self.special_of(id) {
                Some(t) => {
                    flush(&mut run, &mut out)?;
                    out.push(Item::Token(t));
                }
                None => run.push(id),
            }
        }
        flush(&mut run, &mut out)?;
        Ok(out)
    }

    fn to_file(&self) -> VocabFile {
        VocabFile {
            format: VOCAB_FORMAT.into(),
            version: VOCAB_VERSION,
            merges: self.merges.iter().map(|&(a, b)| [a, b]).collect(),
            entries: self.tokens[256..].iter().map(|t| hex(t)).collect(),
            specials: ControlToken::all().iter().map(|t| t.surface()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("vocab serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, TokenizerError> {
        let bad = |m: String| TokenizerError::BadFile(m);
        let file: VocabFile = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
        if file.format != VOCAB_FORMAT || file.version != VOCAB_VERSION {
            return Err(bad(format!("unsupported format {} v{}", file.format, file.version)));
        }
        let canonical: Vec<String> = ControlToken::all().iter().map(|t| t.surface()).collect();
        if file.specials != canonical {
            return Err(bad("special token list differs from this build".into()));
        }
        let mut v = Vocab::bytes_only();
        for [a, b] in file.merges {
            if a as usize >= v.tokens.len() || b as usize >= v.tokens.len() {
                return Err(bad(format!("merge ({a}, {b}) refers to an unknown id")));
            }
            v.add_merge(a, b);
        }
        let entries: Vec<String> = v.tokens[256..].iter().map(|t| hex(t)).collect();
        if entries != file.entries {
            return Err(bad("entries do not match the merge list".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_json()).map_err(|e| TokenizerError::BadFile(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let json = std::fs::read_to_string(path).map_err(|e| TokenizerError::BadFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    version: u32,
    merges: Vec<[u32; 2]>,
    entries: Vec<String>,
    specials: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Greedy pair-merge training over byte sequences.
///
/// `size` counts every id including the specials. Training stops early when
/// no adjacent pair is left. Ties go to the lexicographically smallest pair
/// of byte strings.
pub fn train_vocab<'a>(corpus: impl IntoIterator<Item = &'a str>, size: usize) -> Result<Vocab, TokenizerError> {
    let min = Vocab::min_size();
    if size < min {
        return Err(TokenizerError::SizeTooSmall { size, min });
    }
    let mut counts: HashMap<&[u8], u64> = HashMap::new();
    for text in corpus {
        for chunk in pretokenize(text) {
            *counts.entry(chunk.as_bytes()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<u32>, u64)> = counts.into_iter().map(|(bytes, n)| (bytes.iter().map(|&b| b as u32).collect(), n)).collect();
    words.sort();

    let mut vocab = Vocab::bytes_only();
    while vocab.len() < size {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (w, n) in &words {
            for p in w.windows(2) {
                *pairs.entry((p[0], p[1])).or_default() += n;
            }
        }
        let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&vocab.tokens[pa.0 as usize], &vocab.tokens[pa.1 as usize]);
                let kb = (&vocab.tokens[pb.0 as usize], &vocab.tokens[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((a, b), _)) = best else { break };
        let merged = vocab.add_merge(a, b);
        for (w, _) in &mut words {
            if w.len() < 2 {
                continue;
            }
            let mut next = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == a && w[i + 1] == b {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(w[i]);
                    i += 1;
                }
            }
            *w = next;
        }
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SongForm;

    #[test]
    fn pretokenize_is_lossless() {
        for s in ["hello world", "  two  spaces ", "la\nla", "don't stop!!", "x1 22 ab", "", " ", "\n\n a"] {
            assert_eq!(pretokenize(s).concat(), s);
        }
        assert_eq!(pretokenize(" hello world"), vec![" hello", " world"]);
        assert_eq!(pretokenize("a  b"), vec!["a", " ", " b"]);
        assert_eq!(pretokenize("la\nla"), vec!["la", "\n", "la"]);
    }

    #[test]
    fn minimum_size_is_byte_only() {
        let v = train_vocab(["hello hello"], Vocab::min_size()).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.len(), 256 + 322);
        assert!(matches!(train_vocab(["x"], Vocab::min_size() - 1), Err(TokenizerError::SizeTooSmall { .. })));
    }

    #[test]
    fn unigram_first_merge() {
        let v = train_vocab(["aaaaaaaa"], Vocab::min_size() + 2).unwrap();
        assert_eq!(v.merges()[0], (b'a' as u32, b'a' as u32));
        assert_eq!(v.token_bytes(256).unwrap(), b"aa");
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // "ab" and "cd" both occur once; ("a","b") sorts first.
        let v = train_vocab(["cd\nab"], Vocab::min_size() + 1).unwrap();
        assert_eq!(v.merges()[0], (b'a' as u32, b'b' as u32));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["la la land", "hello there hello", "the rain in spain"];
        let a = train_vocab(corpus, 700).unwrap();
        let b = train_vocab(corpus, 700).unwrap();
        assert_eq!(a.merges(), b.merges());
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn specials_are_atomic() {
        let v = train_vocab(["hello world"], 700).unwrap();
        let ids = v.encode(&[Item::Token(ControlToken::LyrStart)]);
        assert_eq!(ids.len(), 1);
        assert!(v.is_special(ids[0]));
        assert_eq!(v.decode(&ids).unwrap(), vec![Item::Token(ControlToken::LyrStart)]);
    }

    #[test]
    fn literal_special_surface_in_text_stays_text() {
        let v = train_vocab(["hello <SYL:2> world"], 900).unwrap();
        let items = vec![Item::Text("sing <SYL:2> now".into())];
        let ids = v.encode(&items);
        assert!(ids.iter().all(|&id| !v.is_special(id)));
        assert!(!ids.contains(&v.special_id(ControlToken::Syl(2))));
        assert_eq!(v.decode(&ids).unwrap(), items);
    }

    #[test]
    fn mixed_round_trip_and_unknown_id() {
        let v = train_vocab(["la la la", "hello"], 800).unwrap();
        let items = vec![
            Item::Token(ControlToken::Form(SongForm::Chorus)),
            Item::Token(ControlToken::Syl(3)),
            Item::Text("la la la".into()),
            Item::Token(ControlToken::EndL),
            Item::Text(" leading space and ünïcödé 🎵".into()),
        ];
        assert_eq!(v.decode(&v.encode(&items)).unwrap(), items);
        assert_eq!(v.decode(&[v.len() as u32]), Err(TokenizerError::UnknownId(v.len() as u32)));
    }

    #[test]
    fn file_round_trip() {
        let v = train_vocab(["la la la", "hello there"], 800).unwrap();
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(back.merges(), v.merges());
        assert_eq!(back.content_hash(), v.content_hash());
        let tampered = v.to_json().replace("syllaform-vocab", "other");
        assert!(Vocab::from_json(&tampered).is_err());
    }
}
