//! Run configuration: a TOML document with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use syllaform_core::planner::Layout;
use syllaform_core::synth::SynthConfig;
use syllaform_decode::DecodeParams;
use syllaform_lm::{LmConfig, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Seed for span selection; per-document decode seeds derive from
    /// `decode.seed`.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: TaskConfig,
    pub decode: DecodeParams,
    pub infill: InfillConfig,
    pub run: RunOptions,
    pub evaluate: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("run"),
            seed: 0,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            vocab: VocabConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            task: TaskConfig::default(),
            decode: DecodeParams::default(),
            infill: InfillConfig::default(),
            run: RunOptions::default(),
            evaluate: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw corpus: a JSON-lines file of documents or a directory of `.txt` songs.
    pub corpus: PathBuf,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub blocklist: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self { corpus: PathBuf::from("corpus.jsonl"), vocab: None, checkpoint: None, blocklist: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratios: [0.924, 0.049, 0.027], seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { size: 8192 }
    }
}

/// Model shape; vocabulary size and slot id come from the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub context_len: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let c = LmConfig::new(0, 0);
        Self {
            layers: c.layers,
            heads: c.heads,
            model_dim: c.model_dim,
            ff_dim: c.ff_dim,
            context_len: c.context_len,
            embed_dim: c.embed_dim,
            dropout: c.dropout,
            seed: c.seed,
        }
    }
}

impl ModelConfig {
    pub fn lm_config(&self, vocab_size: usize, slot_id: u32) -> LmConfig {
        LmConfig {
            layers: self.layers,
            heads: self.heads,
            model_dim: self.model_dim,
            ff_dim: self.ff_dim,
            context_len: self.context_len,
            vocab_size,
            embed_dim: self.embed_dim,
            slot_id,
            dropout: self.dropout,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTask {
    Generate,
    Infill,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub layout: Layout,
    /// Subtree selection probability for generation plans.
    pub p_generate: f64,
    /// Subtree selection probability for infilling masks.
    pub p_infill: f64,
    /// Which serializations `train` learns from.
    pub train_on: TrainTask,
    /// Lines kept in the extractive summary used as input text.
    pub summary_lines: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { layout: Layout::Back, p_generate: 0.2, p_infill: 0.1, train_on: TrainTask::Generate, summary_lines: 2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfillConfig {
    pub same_mask: bool,
    pub no_songform: bool,
    /// Decode each mask with past context only.
    pub baseline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Valid,
    Eval,
}

impl SplitName {
    pub fn file_name(self) -> &'static str {
        match self {
            SplitName::Train => "train.jsonl",
            SplitName::Valid => "valid.jsonl",
            SplitName::Eval => "eval.jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Decode with the syllable oracle instead of a checkpoint.
    pub oracle: bool,
    /// Split that `generate`, `infill` and `evaluate` read.
    pub split: SplitName,
    /// Use at most this many documents; 0 means all.
    pub limit: usize,
    /// Write one JSON-lines decode trace per document.
    pub trace: bool,
    /// Compute validation perplexity after every training epoch.
    pub valid_ppl: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { oracle: false, split: SplitName::Eval, limit: 0, trace: false, valid_ppl: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSource {
    Generate,
    Infill,
    /// The split's own lyrics scored against their plans.
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub source: EvalSource,
    /// Held-out perplexity from the checkpoint, reported at the Full level.
    pub ppl: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { source: EvalSource::Generate, ppl: true }
    }
}

/// Every configuration key with its meaning, as shown by `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("out_dir", "directory receiving every artifact"),
    ("seed", "span selection seed"),
    ("paths.corpus", "raw corpus: documents as JSON lines, or a directory of .txt songs"),
    ("paths.vocab", "vocabulary file (default <out_dir>/vocab.json)"),
    ("paths.checkpoint", "model checkpoint (default <out_dir>/model.ckpt)"),
    ("paths.blocklist", "toxicity word list (default: built-in list)"),
    ("synth.songs", "number of synthetic songs"),
    ("synth.seed", "synthetic corpus seed"),
    ("synth.lines_per_paragraph", "[min, max] lines per paragraph"),
    ("synth.words_per_line", "[min, max] words per line"),
    ("synth.theme_share", "chance a word comes from the song form's theme"),
    ("split.ratios", "[train, valid, eval] fractions"),
    ("split.seed", "split shuffle seed"),
    ("vocab.size", "target vocabulary size"),
    ("model.layers", "transformer blocks"),
    ("model.heads", "attention heads"),
    ("model.model_dim", "residual width"),
    ("model.ff_dim", "feed-forward width"),
    ("model.context_len", "maximum sequence length"),
    ("model.embed_dim", "semantic embedding width"),
    ("model.dropout", "dropout rate"),
    ("model.seed", "initialization seed"),
    ("train.epochs", "training epochs"),
    ("train.batch", "examples per step"),
    ("train.lr", "peak learning rate"),
    ("train.warmup_steps", "linear warmup steps"),
    ("train.weight_decay", "decoupled weight decay on matrices"),
    ("train.grad_clip", "global gradient norm limit (0 disables)"),
    ("train.beta1", "first moment decay"),
    ("train.beta2", "second moment decay"),
    ("train.eps", "optimizer epsilon"),
    ("train.seed", "shuffling and dropout seed"),
    ("task.layout", "front | back | both"),
    ("task.p_generate", "generation subtree selection probability"),
    ("task.p_infill", "infilling mask probability"),
    ("task.train_on", "generate | infill | both"),
    ("task.summary_lines", "lines in the extractive input summary"),
    ("decode.top_k", "top-k cutoff"),
    ("decode.top_p", "nucleus mass"),
    ("decode.temperature", "sampling temperature"),
    ("decode.repetition_penalty", "penalty for previously seen text tokens"),
    ("decode.max_tokens_per_segment", "per-segment token budget (default 4 * syllables + 8)"),
    ("decode.seed", "base decode seed; document i uses seed + i"),
    ("infill.same_mask", "one <MASK> token for every granularity"),
    ("infill.no_songform", "omit song forms from answer segments"),
    ("infill.baseline", "decode masks with past context only"),
    ("run.oracle", "decode with the syllable oracle"),
    ("run.split", "train | valid | eval"),
    ("run.limit", "maximum documents (0 = all)"),
    ("run.trace", "write decode traces"),
    ("run.valid_ppl", "validation perplexity after each epoch"),
    ("evaluate.source", "generate | infill | gold"),
    ("evaluate.ppl", "include checkpoint perplexity"),
];

pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Configuration keys (set in --config or with --set key=value):\n");
    for (k, d) in KEYS {
        out.push_str(&format!("  {k:<width$}  {d}\n"));
    }
    out
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    if !KEYS.iter().any(|(k, _)| *k == key) {
        return Err(CliError::Config(format!("unknown key {key:?}")));
    }
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("{p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `file` (if any) and applies `key=value` overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        for (name, p) in [("task.p_generate", self.task.p_generate), ("task.p_infill", self.task.p_infill)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.infill.baseline && (self.infill.same_mask || self.infill.no_songform) {
            return bad("infill.baseline decodes a generation plan; same_mask and no_songform do not apply".into());
        }
        self.decode.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.paths.vocab.clone().unwrap_or_else(|| self.out_dir.join("vocab.json"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn splits_dir(&self) -> PathBuf {
        self.out_dir.join("splits")
    }

    pub fn split_path(&self, split: SplitName) -> PathBuf {
        self.splits_dir().join(split.file_name())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_keys(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
        match v {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    leaf_keys(&key, v, out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }

    #[test]
    fn help_lists_every_key() {
        let v = toml::Value::try_from(RunConfig::default()).unwrap();
        let mut keys = Vec::new();
        leaf_keys("", &v, &mut keys);
        let optional = ["paths.vocab", "paths.checkpoint", "paths.blocklist", "decode.max_tokens_per_segment"];
        for k in &keys {
            assert!(KEYS.iter().any(|(x, _)| x == k), "{k} missing from KEYS");
        }
        for (k, _) in KEYS {
            assert!(keys.iter().any(|x| x == k) || optional.contains(k), "{k} is not a config key");
        }
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::load(None, &["train.lr=0.001".into(), "task.layout=front".into(), "train.lr=2e-3".into()]).unwrap();
        assert_eq!(cfg.train.lr, 2e-3);
        assert_eq!(cfg.task.layout, Layout::Front);
        let cfg = RunConfig::load(None, &["out_dir=/tmp/x y".into(), "decode.max_tokens_per_segment=5".into()]).unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x y"));
        assert_eq!(cfg.decode.max_tokens_per_segment, Some(5));
    }

    #[test]
    fn bad_configs_are_rejected() {
        for o in ["nope=1", "train.lr", "task.p_generate=1.5", "decode.top_k=0", "task.layout=sideways"] {
            assert!(matches!(RunConfig::load(None, &[o.into()]), Err(CliError::Config(_))), "{o}");
        }
        let both = RunConfig::load(None, &["infill.baseline=true".into(), "infill.same_mask=true".into()]);
        assert!(both.is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("syllaform-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        let cfg = RunConfig { seed: 9, ..Default::default() };
        std::fs::write(&path, cfg.to_toml()).unwrap();
        assert_eq!(RunConfig::load(Some(&path), &[]).unwrap(), cfg);
        std::fs::write(&path, "[train]\nepochs = 2\nbogus = 1\n").unwrap();
        assert!(RunConfig::load(Some(&path), &[]).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
