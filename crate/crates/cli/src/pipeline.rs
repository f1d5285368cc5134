use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use syllaform_core::corpus::{
    filter_corpus, parse_song, read_jsonl, split_corpus, summarize_for_eval, write_jsonl, LineFrequency, WordlistScorer,
};
use syllaform_core::embed::{Embedder, HashedBowEmbedder};
use syllaform_core::metrics::{build_report, consistency_matrices, CosineScorer, Level, ReportInputs, TextPair};
use syllaform_core::planner::{
    build_tree, fill_document, masked_granularities, parse_output, select_masks, select_spans, serialize_generation, serialize_infilling,
    Granularity, InfillFlags, Layout, SegmentPair, SymbolicSequence,
};
use syllaform_core::synth::synth_corpus;
use syllaform_core::tokenizer::{train_vocab, Vocab};
use syllaform_core::{SongDocument, SyllableCounter};
use syllaform_decode::{
    execute_baseline, execute_infill, execute_plan, realized_pairs, score_infill, DecodeParams, Decoded, OracleModel, Provenance,
    SegmentRecord, TokenModel, TraceEvent, TransformerSession,
};
use syllaform_lm::data::slot_id;
use syllaform_lm::{checkpoint, perplexity_eval, train, Example, Model};

use crate::config::{EvalSource, RunConfig, SplitName, TrainTask};
use crate::{io_err, CliError};

/// One decoded document as written to `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub song_id: String,
    /// `generate`, `infill` or `baseline`.
    pub task: String,
    pub layout: Option<Layout>,
    pub decode_seed: u64,
    pub input_text: String,
    /// The generation plan, or the infilling context.
    pub plan: SymbolicSequence,
    /// Infilling answer scaffold.
    pub scaffold: Option<SymbolicSequence>,
    pub output: SymbolicSequence,
    pub provenance: Vec<Provenance>,
    pub segments: Vec<SegmentRecord>,
    pub pairs: Vec<SegmentPair>,
    pub timeouts: Vec<Granularity>,
    pub document: Option<SongDocument>,
    pub parse_error: Option<String>,
}

impl Record {
    pub fn lyrics(&self) -> String {
        self.document.as_ref().map(SongDocument::lyrics_text).unwrap_or_default()
    }
}

fn mkdir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_split(cfg: &RunConfig, split: SplitName, limited: bool) -> Result<Vec<SongDocument>, CliError> {
    let path = cfg.split_path(split);
    if !path.exists() {
        return Err(io_err(&path, "missing; run `preprocess` first"));
    }
    let mut docs = read_jsonl(&path)?;
    if limited && cfg.run.limit > 0 {
        docs.truncate(cfg.run.limit);
    }
    Ok(docs)
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocab, CliError> {
    Ok(Vocab::load(&cfg.vocab_path())?)
}

fn load_model(cfg: &RunConfig, vocab: &Vocab) -> Result<Model<f32>, CliError> {
    let (model, header) = checkpoint::load(&cfg.checkpoint_path())?;
    if header.vocab_hash != vocab.content_hash() {
        return Err(CliError::Config(format!("checkpoint {} was trained with a different vocabulary", cfg.checkpoint_path().display())));
    }
    Ok(model)
}

fn read_records(path: &Path) -> Result<Vec<Record>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| io_err(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn write_records(path: &Path, records: &[Record]) -> Result<(), CliError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    write(path, &out)
}

/// Summaries condition both training and decoding.
struct Inputs {
    stats: LineFrequency,
    lines: usize,
    embedder: HashedBowEmbedder,
}

impl Inputs {
    fn new(cfg: &RunConfig, train_docs: &[SongDocument]) -> Self {
        Self {
            stats: LineFrequency::from_docs(train_docs),
            lines: cfg.task.summary_lines,
            embedder: HashedBowEmbedder::new(cfg.model.embed_dim),
        }
    }

    fn text(&self, doc: &SongDocument) -> String {
        summarize_for_eval(doc, self.lines, &self.stats)
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        self.embedder.embed(text).vector
    }
}

fn examples(
    cfg: &RunConfig,
    docs: &[SongDocument],
    vocab: &Vocab,
    inputs: &Inputs,
    task: TrainTask,
    seed: u64,
) -> Result<Vec<Example>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for doc in docs {
        let tree = build_tree(doc)?;
        let emb = inputs.embed(&inputs.text(doc));
        if matches!(task, TrainTask::Generate | TrainTask::Both) {
            let plan = serialize_generation(&select_spans(&tree, cfg.task.p_generate, &mut rng), cfg.task.layout)?;
            out.push(Example::from_sequence(vocab, &plan, Some(emb.clone()), cfg.model.context_len));
        }
        if matches!(task, TrainTask::Infill | TrainTask::Both) {
            let masked = select_masks(&tree, cfg.task.p_infill, &mut rng);
            let flags = InfillFlags { same_mask: cfg.infill.same_mask, no_songform: cfg.infill.no_songform };
            if let Ok((mut ctx, answer)) = serialize_infilling(&masked, flags) {
                ctx.extend(answer);
                out.push(Example::from_sequence(vocab, &ctx, Some(emb), cfg.model.context_len));
            }
        }
    }
    Ok(out)
}

/// The vocabulary and the (limited) documents of `split`, serialized as
/// training examples with span selection seeded by `seed`.
pub fn split_examples(cfg: &RunConfig, split: SplitName) -> Result<(Vocab, Vec<Example>), CliError> {
    let vocab = load_vocab(cfg)?;
    let inputs = Inputs::new(cfg, &read_split(cfg, SplitName::Train, false)?);
    let docs = read_split(cfg, split, true)?;
    let data = examples(cfg, &docs, &vocab, &inputs, cfg.task.train_on, cfg.seed)?;
    Ok((vocab, data))
}

pub fn cmd_synth_corpus(cfg: &RunConfig) -> Result<Value, CliError> {
    let docs = synth_corpus(&cfg.synth);
    if let Some(parent) = cfg.paths.corpus.parent() {
        mkdir(parent)?;
    }
    write_jsonl(&cfg.paths.corpus, &docs)?;
    Ok(json!({ "songs": docs.len(), "corpus": cfg.paths.corpus }))
}

fn read_corpus(path: &Path) -> Result<Vec<SongDocument>, CliError> {
    if !path.is_dir() {
        return Ok(read_jsonl(path)?);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| io_err(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    let counter = SyllableCounter::new();
    files
        .iter()
        .map(|f| {
            let raw = fs::read_to_string(f).map_err(|e| io_err(f, e))?;
            let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            parse_song(&id, &raw, &counter).map_err(|e| io_err(f, e))
        })
        .collect()
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<Value, CliError> {
    let docs = read_corpus(&cfg.paths.corpus)?;
    let total = docs.len();
    let scorer = match &cfg.paths.blocklist {
        Some(p) => WordlistScorer::load(p)?,
        None => WordlistScorer::default(),
    };
    let (kept, report) = filter_corpus(docs, &scorer);
    let [a, b, c] = cfg.split.ratios;
    let splits = split_corpus(kept, (a, b, c), cfg.split.seed)?;
    mkdir(&cfg.splits_dir())?;
    write_jsonl(&cfg.split_path(SplitName::Train), &splits.train)?;
    write_jsonl(&cfg.split_path(SplitName::Valid), &splits.valid)?;
    write_jsonl(&cfg.split_path(SplitName::Eval), &splits.eval)?;
    write(&cfg.splits_dir().join("filter_report.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(json!({
        "read": total,
        "dropped": report.dropped.len(),
        "train": splits.train.len(),
        "valid": splits.valid.len(),
        "eval": splits.eval.len(),
    }))
}

pub fn cmd_train_vocab(cfg: &RunConfig) -> Result<Value, CliError> {
    let docs = read_split(cfg, SplitName::Train, false)?;
    let texts: Vec<String> = docs.iter().map(SongDocument::lyrics_text).collect();
    let vocab = train_vocab(texts.iter().map(String::as_str), cfg.vocab.size)?;
    let path = cfg.vocab_path();
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    vocab.save(&path)?;
    Ok(json!({ "size": vocab.len(), "vocab": path, "hash": vocab.content_hash() }))
}

#[derive(Debug, Clone, Serialize)]
struct CurveRow {
    epoch: usize,
    mean_loss: Option<f64>,
    valid_ppl: Option<f64>,
    seconds: f64,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Value, CliError> {
    let vocab = load_vocab(cfg)?;
    let train_docs = read_split(cfg, SplitName::Train, false)?;
    let valid_docs = read_split(cfg, SplitName::Valid, false)?;
    let inputs = Inputs::new(cfg, &train_docs);
    let data = examples(cfg, &train_docs, &vocab, &inputs, cfg.task.train_on, cfg.seed)?;
    let valid = examples(cfg, &valid_docs, &vocab, &inputs, cfg.task.train_on, cfg.seed.wrapping_add(1))?;
    let text_limit = vocab.special_base();
    let mut model = Model::new(cfg.model.lm_config(vocab.len(), slot_id(&vocab)))?;
    let eval_valid =
        |m: &Model<f32>| (cfg.run.valid_ppl && !valid.is_empty()).then(|| perplexity_eval(m, &valid, text_limit).ok()).flatten();
    let mut rows = vec![CurveRow { epoch: 0, mean_loss: None, valid_ppl: eval_valid(&model), seconds: 0.0 }];
    train(&mut model, &data, &cfg.train, &mut |st, m| {
        rows.push(CurveRow { epoch: st.epoch, mean_loss: Some(st.mean_loss), valid_ppl: eval_valid(m), seconds: st.seconds });
    })?;
    let path = cfg.checkpoint_path();
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    checkpoint::save(&path, &model, &vocab.content_hash())?;
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    let mut csv = String::from("epoch,mean_loss,valid_ppl,seconds\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{:.1}", r.epoch, cell(r.mean_loss), cell(r.valid_ppl), r.seconds);
    }
    write(&cfg.out_dir.join("loss.csv"), &csv)?;
    Ok(json!({
        "checkpoint": path,
        "parameters": model.param_count(),
        "examples": data.len(),
        "curve": rows,
    }))
}

enum Decoder<'a> {
    Oracle(&'a Vocab),
    Model(Box<Model<f32>>),
}

impl Decoder<'_> {
    fn session(&self) -> Box<dyn TokenModel + '_> {
        match self {
            Decoder::Oracle(v) => Box::new(OracleModel::new(v)),
            Decoder::Model(m) => Box::new(TransformerSession::new(m)),
        }
    }

    fn embedding<'e>(&self, e: &'e [f32]) -> Option<&'e [f32]> {
        matches!(self, Decoder::Model(_)).then_some(e)
    }
}

fn decoder<'v>(cfg: &RunConfig, vocab: &'v Vocab) -> Result<Decoder<'v>, CliError> {
    if cfg.run.oracle {
        Ok(Decoder::Oracle(vocab))
    } else {
        Ok(Decoder::Model(Box::new(load_model(cfg, vocab)?)))
    }
}

fn params_for(cfg: &RunConfig, i: usize) -> DecodeParams {
    DecodeParams { seed: cfg.decode.seed.wrapping_add(i as u64), ..cfg.decode.clone() }
}

fn write_trace(dir: &Path, song_id: &str, events: &[TraceEvent]) -> Result<(), CliError> {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    write(&dir.join(format!("{song_id}.jsonl")), &out)
}

fn texts(d: &Decoded) -> Vec<String> {
    d.segments.iter().map(|s| s.text.clone()).collect()
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Value, CliError> {
    let vocab = load_vocab(cfg)?;
    let docs = read_split(cfg, cfg.run.split, true)?;
    let inputs = Inputs::new(cfg, &read_split(cfg, SplitName::Train, false)?);
    let dec = decoder(cfg, &vocab)?;
    let counter = SyllableCounter::new();
    let layout = cfg.task.layout;
    let dir = cfg.out_dir.join("generate");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(docs.len());
    for (i, doc) in docs.iter().enumerate() {
        let plan_tree = select_spans(&build_tree(doc)?, cfg.task.p_generate, &mut rng);
        let plan = serialize_generation(&plan_tree, layout)?;
        let input_text = inputs.text(doc);
        let emb = inputs.embed(&input_text);
        let params = params_for(cfg, i);
        let mut events: Vec<TraceEvent> = Vec::new();
        let out = execute_plan(dec.session().as_mut(), &vocab, &plan, layout, dec.embedding(&emb), &params, &mut events)?;
        if cfg.run.trace {
            write_trace(&dir.join("traces"), &doc.id, &events)?;
        }
        let pairs = realized_pairs(&plan, &out.sequence, &counter);
        let (document, parse_error) = match layout {
            Layout::Front => match parse_output(&out.sequence, &counter) {
                Ok(p) => (Some(SongDocument { id: doc.id.clone(), ..p.document }), None),
                Err(e) => (None, Some(e.to_string())),
            },
            Layout::Back | Layout::Both => (Some(fill_document(&plan_tree, &texts(&out), &counter)), None),
        };
        records.push(Record {
            song_id: doc.id.clone(),
            task: "generate".into(),
            layout: Some(layout),
            decode_seed: params.seed,
            input_text,
            plan,
            scaffold: None,
            timeouts: out.timeouts(),
            output: out.sequence,
            provenance: out.provenance,
            segments: out.segments,
            pairs: pairs.0,
            document,
            parse_error,
        });
    }
    write_records(&dir.join("records.jsonl"), &records)?;
    Ok(summary("generate", &records))
}

fn summary(task: &str, records: &[Record]) -> Value {
    let segments: usize = records.iter().map(|r| r.pairs.len()).sum();
    let exact: usize = records.iter().flat_map(|r| &r.pairs).filter(|p| p.expected == p.realized).count();
    let timeouts: usize = records.iter().map(|r| r.timeouts.len()).sum();
    let unparsed = records.iter().filter(|r| r.parse_error.is_some()).count();
    json!({ "task": task, "documents": records.len(), "segments": segments, "exact": exact, "timeouts": timeouts, "unparsed": unparsed })
}

pub fn cmd_infill(cfg: &RunConfig) -> Result<Value, CliError> {
    let vocab = load_vocab(cfg)?;
    let docs = read_split(cfg, cfg.run.split, true)?;
    let inputs = Inputs::new(cfg, &read_split(cfg, SplitName::Train, false)?);
    let dec = decoder(cfg, &vocab)?;
    let counter = SyllableCounter::new();
    let flags = InfillFlags { same_mask: cfg.infill.same_mask, no_songform: cfg.infill.no_songform };
    let dir = cfg.out_dir.join("infill");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(docs.len());
    let mut unmasked = 0usize;
    for (i, doc) in docs.iter().enumerate() {
        let masked = select_masks(&build_tree(doc)?, cfg.task.p_infill, &mut rng);
        if masked.targets().is_empty() {
            unmasked += 1;
            continue;
        }
        let input_text = inputs.text(doc);
        let emb = inputs.embed(&input_text);
        let params = params_for(cfg, i);
        let mut events: Vec<TraceEvent> = Vec::new();
        let (plan, scaffold, out, pairs) = if cfg.infill.baseline {
            let plan = serialize_generation(&masked, Layout::Back)?;
            let out = execute_baseline(dec.session().as_mut(), &vocab, &masked, dec.embedding(&emb), &params, &mut events)?;
            let pairs = masked
                .targets()
                .iter()
                .zip(&out.segments)
                .map(|((p, n), s)| SegmentPair {
                    granularity: n.granularity,
                    expected: n.syllables(),
                    realized: counter.realized(&s.text),
                    text: s.text.clone(),
                    paragraph: *p,
                })
                .collect();
            (plan, None, out, pairs)
        } else {
            let (context, answer) = serialize_infilling(&masked, flags)?;
            let grans = masked_granularities(&masked);
            let out = execute_infill(dec.session().as_mut(), &vocab, &context, &answer, &grans, dec.embedding(&emb), &params, &mut events)?;
            let pairs = score_infill(&masked, &out.answer(), &counter)?.0;
            (context, Some(answer), out, pairs)
        };
        if cfg.run.trace {
            write_trace(&dir.join("traces"), &doc.id, &events)?;
        }
        records.push(Record {
            song_id: doc.id.clone(),
            task: if cfg.infill.baseline { "baseline" } else { "infill" }.into(),
            layout: None,
            decode_seed: params.seed,
            input_text,
            plan,
            scaffold,
            timeouts: out.timeouts(),
            document: Some(fill_document(&masked, &texts(&out), &counter)),
            output: out.sequence,
            provenance: out.provenance,
            segments: out.segments,
            pairs,
            parse_error: None,
        });
    }
    write_records(&dir.join("records.jsonl"), &records)?;
    let mut s = summary("infill", &records);
    s["skipped_unmasked"] = json!(unmasked);
    Ok(s)
}

fn source_name(s: EvalSource) -> &'static str {
    match s {
        EvalSource::Generate => "generate",
        EvalSource::Infill => "infill",
        EvalSource::Gold => "gold",
    }
}

/// The split's own lyrics read back through the generation plans.
fn gold_records(cfg: &RunConfig, docs: &[SongDocument]) -> Result<Vec<Record>, CliError> {
    let counter = SyllableCounter::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    docs.iter()
        .map(|doc| {
            let plan = serialize_generation(&select_spans(&build_tree(doc)?, cfg.task.p_generate, &mut rng), Layout::Back)?;
            let pairs = realized_pairs(&plan, &plan, &counter).0;
            Ok(Record {
                song_id: doc.id.clone(),
                task: "gold".into(),
                layout: Some(Layout::Back),
                decode_seed: 0,
                input_text: doc.lyrics_text(),
                output: plan.clone(),
                provenance: vec![Provenance::Forced; plan.len()],
                plan,
                scaffold: None,
                segments: Vec::new(),
                pairs,
                timeouts: Vec::new(),
                document: Some(doc.clone()),
                parse_error: None,
            })
        })
        .collect()
}

fn load_records(cfg: &RunConfig, source: EvalSource) -> Result<Vec<Record>, CliError> {
    match source {
        EvalSource::Gold => gold_records(cfg, &read_split(cfg, cfg.run.split, true)?),
        s => read_records(&cfg.out_dir.join(source_name(s)).join("records.jsonl")),
    }
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Value, CliError> {
    let source = cfg.evaluate.source;
    let records = load_records(cfg, source)?;
    let mut inputs = ReportInputs::default();
    for r in &records {
        inputs.pairs.extend(r.pairs.iter().cloned());
        inputs.timeouts.extend(r.timeouts.iter().copied());
        inputs.texts.push(TextPair { granularity: Granularity::Paragraph, reference: r.input_text.clone(), generated: r.lyrics() });
    }
    if cfg.evaluate.ppl && !cfg.run.oracle && cfg.checkpoint_path().exists() {
        let (vocab, data) = split_examples(cfg, cfg.run.split)?;
        let model = load_model(cfg, &vocab)?;
        inputs.ppl = HashMap::from([(Level::Full, perplexity_eval(&model, &data, vocab.special_base())?)]);
    }
    let report = build_report(&inputs, &CosineScorer::default())?;
    let name = source_name(source);
    write(&cfg.out_dir.join(format!("report_{name}.json")), &report.to_json())?;
    write(&cfg.out_dir.join(format!("report_{name}.txt")), &report.to_table())?;
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

pub fn cmd_consistency(cfg: &RunConfig) -> Result<Value, CliError> {
    let source = cfg.evaluate.source;
    let docs: Vec<SongDocument> = match source {
        EvalSource::Gold => read_split(cfg, cfg.run.split, true)?,
        _ => load_records(cfg, source)?.into_iter().filter_map(|r| r.document).collect(),
    };
    let m = consistency_matrices(&docs, &CosineScorer::default());
    let name = source_name(source);
    write(&cfg.out_dir.join(format!("consistency_{name}.json")), &m.to_json())?;
    write(&cfg.out_dir.join(format!("consistency_{name}.csv")), &m.to_csv())?;
    Ok(serde_json::to_value(&m).expect("matrices serialize"))
}
