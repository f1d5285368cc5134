use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::token::ControlToken;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Item {
    Token(ControlToken),
    Text(String),
}

impl Item {
    pub fn token(&self) -> Option<ControlToken> {
        match self {
            Item::Token(t) => Some(*t),
            Item::Text(_) => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            Item::Text(s) => Some(s),
            Item::Token(_) => None,
        }
    }
}

impl From<ControlToken> for Item {
    fn from(t: ControlToken) -> Self {
        Item::Token(t)
    }
}

/// Whether an item is given to the model (`Condition`) or must be produced
/// by it (`Predict`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Condition,
    Predict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbol {
    pub item: Item,
    pub role: Role,
}

impl Symbol {
    pub fn condition(item: impl Into<Item>) -> Self {
        Self { item: item.into(), role: Role::Condition }
    }

    pub fn predict(item: impl Into<Item>) -> Self {
        Self { item: item.into(), role: Role::Predict }
    }
}

#[derive(Serialize, Deserialize)]
struct SymbolRepr {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    token: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    text: Option<String>,
    role: Role,
}

impl Serialize for Symbol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let repr = match &self.item {
            Item::Token(t) => SymbolRepr { token: Some(t.surface()), text: None, role: self.role },
            Item::Text(x) => SymbolRepr { token: None, text: Some(x.clone()), role: self.role },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Symbol {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = SymbolRepr::deserialize(d)?;
        let item = match (repr.token, repr.text) {
            (Some(t), None) => Item::Token(t.parse().map_err(D::Error::custom)?),
            (None, Some(x)) => Item::Text(x),
            _ => return Err(D::Error::custom("symbol needs exactly one of `token` or `text`")),
        };
        Ok(Symbol { item, role: repr.role })
    }
}

/// Ordered control tokens and text spans with per-item roles.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymbolicSequence(pub Vec<Symbol>);

impl SymbolicSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, item: impl Into<Item>, role: Role) {
        self.0.push(Symbol { item: item.into(), role });
    }

    pub fn cond(&mut self, t: ControlToken) {
        self.push(t, Role::Condition);
    }

    pub fn pred(&mut self, t: ControlToken) {
        self.push(t, Role::Predict);
    }

    pub fn text(&mut self, text: impl Into<String>, role: Role) {
        self.0.push(Symbol { item: Item::Text(text.into()), role });
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Symbol> {
        self.0.iter()
    }

    pub fn items(&self) -> Vec<Item> {
        self.0.iter().map(|s| s.item.clone()).collect()
    }

    pub fn extend(&mut self, other: SymbolicSequence) {
        self.0.extend(other.0);
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sequence serializes")
    }
}

impl fmt::Display for SymbolicSequence {
    /// Space-separated surfaces; text spans printed verbatim.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match &s.item {
                Item::Token(t) => f.write_str(&t.surface())?,
                Item::Text(x) => f.write_str(x)?,
            }
        }
        Ok(())
    }
}

impl FromIterator<Symbol> for SymbolicSequence {
    fn from_iter<I: IntoIterator<Item = Symbol>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}
