//! Seeded synthetic lyrics corpus.
//!
//! Every word comes from a small vocabulary whose syllable counts are known
//! and agree with the heuristic counter. Each song form draws from its own
//! themed word list, and a song's choruses repeat verbatim.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Line, Paragraph, SongDocument, SongForm, Word};

/// Words shared by all forms.
pub const FUNCTION_WORDS: &[(&str, u32)] = &[
    ("the", 1),
    ("and", 1),
    ("you", 1),
    ("me", 1),
    ("we", 1),
    ("my", 1),
    ("in", 1),
    ("to", 1),
    ("of", 1),
    ("on", 1),
    ("all", 1),
    ("now", 1),
    ("so", 1),
    ("just", 1),
    ("still", 1),
];

pub const VERSE_WORDS: &[(&str, u32)] = &[
    ("walk", 1),
    ("road", 1),
    ("town", 1),
    ("rain", 1),
    ("street", 1),
    ("train", 1),
    ("door", 1),
    ("coat", 1),
    ("window", 2),
    ("morning", 2),
    ("letter", 2),
    ("city", 2),
    ("river", 2),
    ("paper", 2),
    ("station", 2),
    ("highway", 2),
    ("corner", 2),
    ("summer", 2),
    ("winter", 2),
    ("slowly", 2),
    ("yesterday", 3),
    ("memory", 3),
    ("telephone", 3),
    ("family", 3),
    ("afternoon", 3),
    ("neighborhood", 3),
    ("umbrella", 3),
    ("november", 3),
    ("cigarette", 3),
];

pub const CHORUS_WORDS: &[(&str, u32)] = &[
    ("love", 1),
    ("heart", 1),
    ("burn", 1),
    ("shine", 1),
    ("light", 1),
    ("sky", 1),
    ("high", 1),
    ("fly", 1),
    ("dream", 1),
    ("star", 1),
    ("gold", 1),
    ("sing", 1),
    ("free", 1),
    ("baby", 2),
    ("dancing", 2),
    ("tonight", 2),
    ("alive", 2),
    ("golden", 2),
    ("higher", 2),
    ("heaven", 2),
    ("shining", 2),
    ("forever", 3),
    ("together", 3),
    ("beautiful", 3),
    ("electric", 3),
    ("satellite", 3),
];

pub const PRE_CHORUS_WORDS: &[(&str, u32)] = &[
    ("wait", 1),
    ("feel", 1),
    ("edge", 1),
    ("close", 1),
    ("breath", 1),
    ("ready", 2),
    ("falling", 2),
    ("waiting", 2),
    ("almost", 2),
    ("closer", 2),
    ("tremble", 2),
    ("whisper", 2),
    ("believe", 2),
    ("suddenly", 3),
    ("anticipation", 5),
];

pub const POST_CHORUS_WORDS: &[(&str, u32)] =
    &[("oh", 1), ("hey", 1), ("yeah", 1), ("whoa", 1), ("echo", 2), ("again", 2), ("over", 2), ("lullaby", 3), ("hallelujah", 4)];

pub const BRIDGE_WORDS: &[(&str, u32)] = &[
    ("ocean", 2),
    ("silence", 2),
    ("mountain", 2),
    ("distance", 2),
    ("shadow", 2),
    ("mirror", 2),
    ("broken", 2),
    ("between", 2),
    ("wonder", 2),
    ("answer", 2),
    ("moment", 2),
    ("tomorrow", 3),
    ("horizon", 3),
    ("understand", 3),
    ("remember", 3),
    ("unbroken", 3),
    ("imagination", 5),
];

pub fn theme(form: SongForm) -> &'static [(&'static str, u32)] {
    match form {
        SongForm::Verse => VERSE_WORDS,
        SongForm::Chorus => CHORUS_WORDS,
        SongForm::PreChorus => PRE_CHORUS_WORDS,
        SongForm::PostChorus => POST_CHORUS_WORDS,
        SongForm::Bridge => BRIDGE_WORDS,
    }
}

/// Every vocabulary entry with its syllable count.
pub fn vocabulary() -> impl Iterator<Item = (&'static str, u32)> {
    FUNCTION_WORDS
        .iter()
        .chain(VERSE_WORDS)
        .chain(CHORUS_WORDS)
        .chain(PRE_CHORUS_WORDS)
        .chain(POST_CHORUS_WORDS)
        .chain(BRIDGE_WORDS)
        .copied()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub songs: usize,
    pub seed: u64,
    pub lines_per_paragraph: (usize, usize),
    pub words_per_line: (usize, usize),
    /// Chance that a word is drawn from the form's theme rather than the
    /// shared function words.
    pub theme_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { songs: 5000, seed: 7, lines_per_paragraph: (2, 2), words_per_line: (3, 5), theme_share: 0.6 }
    }
}

const STRUCTURES: &[&[SongForm]] = {
    use SongForm::*;
    &[
        &[Verse, Chorus],
        &[Verse, Chorus, Verse],
        &[Verse, Chorus, Verse, Chorus],
        &[Verse, PreChorus, Chorus],
        &[Verse, PreChorus, Chorus, PostChorus],
        &[Verse, Chorus, Bridge, Chorus],
        &[Verse, Bridge, Chorus],
        &[Chorus, Verse, Chorus],
    ]
};

fn line<R: Rng>(form: SongForm, cfg: &SynthConfig, rng: &mut R) -> Line {
    let n = rng.gen_range(cfg.words_per_line.0..=cfg.words_per_line.1);
    let themed_at = rng.gen_range(0..n);
    let words = (0..n)
        .map(|i| {
            let list = if i == themed_at || rng.gen_bool(cfg.theme_share) { theme(form) } else { FUNCTION_WORDS };
            let &(text, syllables) = list.choose(rng).expect("non-empty word list");
            Word { text: text.to_string(), syllables }
        })
        .collect();
    Line { words }
}

fn paragraph<R: Rng>(form: SongForm, cfg: &SynthConfig, rng: &mut R) -> Vec<Line> {
    let n = rng.gen_range(cfg.lines_per_paragraph.0..=cfg.lines_per_paragraph.1);
    (0..n).map(|_| line(form, cfg, rng)).collect()
}

pub fn synth_song<R: Rng>(id: &str, cfg: &SynthConfig, rng: &mut R) -> SongDocument {
    let structure = STRUCTURES.choose(rng).expect("structures");
    let mut chorus: Option<Vec<Line>> = None;
    let mut counts = [0u32; 5];
    let paragraphs = structure
        .iter()
        .map(|&form| {
            counts[form.index()] += 1;
            let lines = match form {
                SongForm::Chorus => chorus.get_or_insert_with(|| paragraph(form, cfg, rng)).clone(),
                _ => paragraph(form, cfg, rng),
            };
            Paragraph { form, form_index: counts[form.index()], lines }
        })
        .collect();
    SongDocument { id: id.to_string(), paragraphs, language_tag: "en".into() }
}

pub fn synth_corpus(cfg: &SynthConfig) -> Vec<SongDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.songs).map(|i| synth_song(&format!("synth-{i:05}"), cfg, &mut rng)).collect()
}
