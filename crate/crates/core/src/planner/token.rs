use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::SongForm;

/// Largest value a `<SYL:s>` token can carry.
pub const MAX_SYL: u32 = 300;

/// Structural vocabulary entries. Surfaces are fixed strings such as
/// `<CHORUS>` or `<SYL:17>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControlToken {
    Form(SongForm),
    Syl(u16),
    LyrStart,
    GenP,
    EndP,
    GenL,
    EndL,
    GenLNw,
    GenN,
    GenW,
    EndNw,
    InfP,
    InfL,
    InfN,
    InfW,
    Start,
    Mask,
    Pad,
    DocEnd,
}

const FIXED: [(ControlToken, &str); 17] = [
    (ControlToken::LyrStart, "<LYR_START>"),
    (ControlToken::GenP, "<GEN_P>"),
    (ControlToken::EndP, "<END_P>"),
    (ControlToken::GenL, "<GEN_L>"),
    (ControlToken::EndL, "<END_L>"),
    (ControlToken::GenLNw, "<GEN_L_NW>"),
    (ControlToken::GenN, "<GEN_N>"),
    (ControlToken::GenW, "<GEN_W>"),
    (ControlToken::EndNw, "<END_NW>"),
    (ControlToken::InfP, "<INF_P>"),
    (ControlToken::InfL, "<INF_L>"),
    (ControlToken::InfN, "<INF_N>"),
    (ControlToken::InfW, "<INF_W>"),
    (ControlToken::Start, "<START>"),
    (ControlToken::Mask, "<MASK>"),
    (ControlToken::Pad, "<PAD>"),
    (ControlToken::DocEnd, "<DOC_END>"),
];

fn form_surface(form: SongForm) -> &'static str {
    match form {
        SongForm::Verse => "<VERSE>",
        SongForm::Chorus => "<CHORUS>",
        SongForm::PreChorus => "<PRE_CHORUS>",
        SongForm::PostChorus => "<POST_CHORUS>",
        SongForm::Bridge => "<BRIDGE>",
    }
}

impl ControlToken {
    /// `<SYL:s>` for `1 <= s <= MAX_SYL`.
    pub fn syl(s: u32) -> Option<ControlToken> {
        (1..=MAX_SYL).contains(&s).then_some(ControlToken::Syl(s as u16))
    }

    /// Every token in canonical order: forms, SYL:1..=300, then the fixed set.
    pub fn all() -> Vec<ControlToken> {
        let mut out: Vec<ControlToken> = SongForm::ALL.iter().map(|&f| ControlToken::Form(f)).collect();
        out.extend((1..=MAX_SYL as u16).map(ControlToken::Syl));
        out.extend(FIXED.iter().map(|(t, _)| *t));
        out
    }

    pub fn count() -> usize {
        SongForm::ALL.len() + MAX_SYL as usize + FIXED.len()
    }

    /// Position in [`ControlToken::all`].
    pub fn ordinal(self) -> usize {
        let n_forms = SongForm::ALL.len();
        match self {
            ControlToken::Form(f) => f.index(),
            ControlToken::Syl(s) => n_forms + s as usize - 1,
            other => {
                let pos = FIXED.iter().position(|(t, _)| *t == other).expect("fixed token");
                n_forms + MAX_SYL as usize + pos
            }
        }
    }

    /// Inverse of [`ControlToken::ordinal`].
    pub fn from_ordinal(i: usize) -> Option<ControlToken> {
        let n_forms = SongForm::ALL.len();
        let n_syl = MAX_SYL as usize;
        if i < n_forms {
            Some(ControlToken::Form(SongForm::ALL[i]))
        } else if i < n_forms + n_syl {
            Some(ControlToken::Syl((i - n_forms + 1) as u16))
        } else {
            FIXED.get(i - n_forms - n_syl).map(|(t, _)| *t)
        }
    }

    pub fn surface(self) -> String {
        match self {
            ControlToken::Form(f) => form_surface(f).to_string(),
            ControlToken::Syl(s) => format!("<SYL:{s}>"),
            other => FIXED.iter().find(|(t, _)| *t == other).map(|(_, s)| s.to_string()).expect("fixed token"),
        }
    }

    pub fn is_end(self) -> bool {
        matches!(self, ControlToken::EndP | ControlToken::EndL | ControlToken::EndNw)
    }

    pub fn syl_value(self) -> Option<u32> {
        match self {
            ControlToken::Syl(s) => Some(s as u32),
            _ => None,
        }
    }
}

impl fmt::Display for ControlToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownToken(pub String);

impl fmt::Display for UnknownToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown control token {:?}", self.0)
    }
}

impl std::error::Error for UnknownToken {}

impl FromStr for ControlToken {
    type Err = UnknownToken;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("<SYL:").and_then(|r| r.strip_suffix('>')) {
            // Reject leading zeros and signs so surfaces stay canonical.
            if rest.starts_with('0') || !rest.bytes().all(|b| b.is_ascii_digit()) {
                return Err(UnknownToken(s.into()));
            }
            return rest.parse::<u32>().ok().and_then(ControlToken::syl).ok_or_else(|| UnknownToken(s.into()));
        }
        if let Some(f) = SongForm::ALL.iter().find(|&&f| form_surface(f) == s) {
            return Ok(ControlToken::Form(*f));
        }
        FIXED.iter().find(|(_, surf)| *surf == s).map(|(t, _)| *t).ok_or_else(|| UnknownToken(s.into()))
    }
}

impl Serialize for ControlToken {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.surface())
    }
}

impl<'de> Deserialize<'de> for ControlToken {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|e: UnknownToken| D::Error::custom(format!("unknown control token {}", e.0)))
    }
}
