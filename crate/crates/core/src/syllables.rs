//! Deterministic English syllable counting.
//!
//! The counter is a vowel-group heuristic with an optional exception
//! dictionary. Training targets and evaluation both go through the same
//! counter, so counts only need to be self-consistent.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyllableError {
    #[error("word {0:?} has no alphabetic characters")]
    EmptyWord(String),
    #[error("text contains no words")]
    EmptyText,
    #[error("exception dictionary line {line}: {reason}")]
    BadException { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

/// Number of spoken syllables in a non-empty word or span. Always at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct SyllableCount(u32);

impl SyllableCount {
    pub fn new(value: u32) -> Option<Self> {
        (value >= 1).then_some(Self(value))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for SyllableCount {
    type Error = String;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Self::new(value).ok_or_else(|| "syllable count must be >= 1".to_string())
    }
}

impl From<SyllableCount> for u32 {
    fn from(c: SyllableCount) -> u32 {
        c.0
    }
}

impl fmt::Display for SyllableCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Heuristic counter with a user-supplied exception dictionary.
#[derive(Debug, Clone, Default)]
pub struct SyllableCounter {
    exceptions: HashMap<String, u32>,
}

impl SyllableCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exceptions(exceptions: HashMap<String, u32>) -> Self {
        Self { exceptions }
    }

    /// Parses `word<TAB>count` lines. Blank lines and `#` comments are skipped.
    pub fn parse_exceptions(reader: impl BufRead) -> Result<HashMap<String, u32>, SyllableError> {
        let mut map = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| SyllableError::Io(e.to_string()))?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (word, count) =
                trimmed.split_once('\t').ok_or(SyllableError::BadException { line: i + 1, reason: "expected word<TAB>count".into() })?;
            let count: u32 =
                count.trim().parse().map_err(|_| SyllableError::BadException { line: i + 1, reason: format!("bad count {count:?}") })?;
            if count == 0 {
                return Err(SyllableError::BadException { line: i + 1, reason: "count must be >= 1".into() });
            }
            map.insert(word.trim().to_lowercase(), count);
        }
        Ok(map)
    }

    pub fn load_exceptions(path: &Path) -> Result<Self, SyllableError> {
        let file = std::fs::File::open(path).map_err(|e| SyllableError::Io(format!("{}: {e}", path.display())))?;
        let map = Self::parse_exceptions(std::io::BufReader::new(file))?;
        Ok(Self::with_exceptions(map))
    }

    pub fn exceptions(&self) -> &HashMap<String, u32> {
        &self.exceptions
    }

    pub fn add_exception(&mut self, word: &str, count: u32) {
        self.exceptions.insert(word.to_lowercase(), count.max(1));
    }

    pub fn count_word(&self, word: &str) -> Result<SyllableCount, SyllableError> {
        let lower = word.to_lowercase();
        let core = strip_edges(&lower);
        if core.is_empty() {
            return Err(SyllableError::EmptyWord(word.to_string()));
        }
        if let Some(&n) = self.exceptions.get(core) {
            return Ok(SyllableCount(n.max(1)));
        }
        let total: u32 = core
            .split('-')
            .map(strip_edges)
            .filter(|part| !part.is_empty())
            .map(|part| self.exceptions.get(part).copied().unwrap_or_else(|| heuristic(part)))
            .sum();
        Ok(SyllableCount(total.max(1)))
    }

    pub fn count_text(&self, text: &str) -> Result<SyllableCount, SyllableError> {
        let mut total = 0;
        let mut any = false;
        for word in text.split_whitespace() {
            any = true;
            total += self.count_word(word)?.get();
        }
        if any {
            Ok(SyllableCount(total))
        } else {
            Err(SyllableError::EmptyText)
        }
    }

    /// Syllables realized by generated text: words without letters count 0,
    /// empty text counts 0. Never fails.
    pub fn realized(&self, text: &str) -> u32 {
        text.split_whitespace().filter_map(|w| self.count_word(w).ok()).map(SyllableCount::get).sum()
    }
}

pub fn count_word(word: &str) -> Result<SyllableCount, SyllableError> {
    SyllableCounter::new().count_word(word)
}

pub fn count_text(text: &str) -> Result<SyllableCount, SyllableError> {
    SyllableCounter::new().count_text(text)
}

/// True when the word carries at least one alphabetic character.
pub fn is_countable(word: &str) -> bool {
    word.chars().any(|c| c.is_alphabetic())
}

fn strip_edges(s: &str) -> &str {
    s.trim_matches(|c: char| !c.is_alphabetic())
}

fn is_vowel(c: char, index: usize) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u') || (c == 'y' && index > 0)
}

fn heuristic(word: &str) -> u32 {
    let chars: Vec<char> = word.chars().collect();
    let mut groups = 0u32;
    let mut in_group = false;
    for (i, &c) in chars.iter().enumerate() {
        let v = is_vowel(c, i);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    let n = chars.len();
    if n >= 1 && chars[n - 1] == 'e' {
        let consonant_le = n >= 3 && chars[n - 2] == 'l' && !is_vowel(chars[n - 3], n - 3);
        if !consonant_le && groups > 1 {
            groups -= 1;
        }
    }
    groups.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_examples() {
        assert_eq!(count_word("a").unwrap().get(), 1);
        assert_eq!(count_word("hello").unwrap().get(), 2);
        assert_eq!(count_word("table").unwrap().get(), 2);
        assert_eq!(count_text("hello hello").unwrap().get(), 4);
        assert_eq!(count_text("a").unwrap().get(), 1);
        assert_eq!(count_text(""), Err(SyllableError::EmptyText));
    }

    #[test]
    fn silent_e_and_floor() {
        assert_eq!(count_word("make").unwrap().get(), 1);
        assert_eq!(count_word("the").unwrap().get(), 1);
        assert_eq!(count_word("see").unwrap().get(), 1);
        assert_eq!(count_word("rhythm").unwrap().get(), 1);
        assert_eq!(count_word("tsk").unwrap().get(), 1);
    }

    #[test]
    fn initial_y_is_consonant() {
        assert_eq!(count_word("yes").unwrap().get(), 1);
        assert_eq!(count_word("happy").unwrap().get(), 2);
    }

    #[test]
    fn punctuation_and_case() {
        assert_eq!(count_word("\"Hello,").unwrap().get(), 2);
        assert_eq!(count_word("don't").unwrap().get(), 1);
        assert_eq!(count_word("42"), Err(SyllableError::EmptyWord("42".into())));
        assert_eq!(count_word("..."), Err(SyllableError::EmptyWord("...".into())));
    }

    #[test]
    fn hyphenated_parts_sum() {
        assert_eq!(count_word("la-la-la").unwrap().get(), 3);
        assert_eq!(count_word("hello-world").unwrap().get(), 3);
        assert_eq!(count_word("-la-").unwrap().get(), 1);
    }

    #[test]
    fn exceptions_override() {
        let map = SyllableCounter::parse_exceptions("fire\t2\n# comment\n\nHour\t2\n".as_bytes()).unwrap();
        let c = SyllableCounter::with_exceptions(map);
        assert_eq!(c.count_word("fire").unwrap().get(), 2);
        assert_eq!(c.count_word("Hour!").unwrap().get(), 2);
        assert_eq!(c.count_word("fire-hour").unwrap().get(), 4);
        assert!(SyllableCounter::parse_exceptions("fire 2\n".as_bytes()).is_err());
        assert!(SyllableCounter::parse_exceptions("fire\t0\n".as_bytes()).is_err());
    }

    #[test]
    fn realized_is_lenient() {
        let c = SyllableCounter::new();
        assert_eq!(c.realized(""), 0);
        assert_eq!(c.realized("hello 42 !!"), 2);
    }
}
