use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use syllaform_core::corpus::parse_song;
use syllaform_core::planner::{
    build_tree, masked_granularities, parse_output, select_masks, select_spans, serialize_generation, serialize_infilling, ControlToken,
    Granularity, InfillFlags, Item, Layout, Mode, PlanError, PlanTree, Role,
};
use syllaform_core::synth::{synth_corpus, SynthConfig};
use syllaform_core::tokenizer::{train_vocab, Vocab};
use syllaform_core::{SongDocument, SyllableCounter};
use syllaform_decode::{
    execute_baseline, execute_infill, execute_plan, realized_pairs, score_infill, DecodeError, DecodeParams, NoTrace, OracleModel,
    Provenance, TokenModel, TraceEvent, TransformerSession,
};
use syllaform_lm::data::slot_id;
use syllaform_lm::{LmConfig, Model};

const ODD_SONG: &str = "[Verse 1]
hello world out there
sing it again tonight for me

[Chorus]
la la la
yeah

[Bridge]
imagination and electricity
";

fn corpus() -> Vec<SongDocument> {
    let mut docs = synth_corpus(&SynthConfig { songs: 60, seed: 3, ..Default::default() });
    docs.push(parse_song("odd", ODD_SONG, &SyllableCounter::new()).unwrap());
    docs
}

fn vocab(docs: &[SongDocument]) -> Vocab {
    let texts: Vec<String> = docs.iter().map(|d| d.lyrics_text()).collect();
    train_vocab(texts.iter().map(String::as_str), 700).unwrap()
}

/// Random logits; a stand-in for an arbitrary, untrained model.
struct NoiseModel {
    vocab: usize,
    rng: ChaCha8Rng,
    pos: usize,
    context: usize,
}

impl NoiseModel {
    fn new(vocab: usize, seed: u64) -> Self {
        Self { vocab, rng: ChaCha8Rng::seed_from_u64(seed), pos: 0, context: 4096 }
    }

    fn logits(&mut self) -> Vec<f32> {
        (0..self.vocab).map(|_| self.rng.gen_range(-3.0..3.0)).collect()
    }
}

impl TokenModel for NoiseModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn context_len(&self) -> usize {
        self.context
    }
    fn position(&self) -> usize {
        self.pos
    }
    fn begin(&mut self, _: Option<&[f32]>) -> Result<Vec<f32>, DecodeError> {
        self.pos = 1;
        Ok(self.logits())
    }
    fn feed(&mut self, _: u32) -> Result<Vec<f32>, DecodeError> {
        self.pos += 1;
        Ok(self.logits())
    }
}

#[test]
fn oracle_generation_is_exact_at_every_level() {
    let docs = corpus();
    let v = vocab(&docs);
    let counter = SyllableCounter::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut seen = std::collections::HashSet::new();
    for doc in &docs {
        let tree = build_tree(doc).unwrap();
        for p in [0.0, 0.2, 0.6, 1.0] {
            let plan_tree = select_spans(&tree, p, &mut rng);
            for layout in [Layout::Back, Layout::Both, Layout::Front] {
                let plan = serialize_generation(&plan_tree, layout).unwrap();
                let mut oracle = OracleModel::new(&v);
                let params = DecodeParams { seed: rng.gen(), ..Default::default() };
                let out = execute_plan(&mut oracle, &v, &plan, layout, None, &params, &mut NoTrace).unwrap();
                let pairs = realized_pairs(&plan, &out.sequence, &counter);
                assert!(pairs.all_exact(), "{layout:?}\n{}\n{}", plan, out.sequence);
                seen.extend(pairs.0.iter().map(|p| p.granularity));
                let parsed = parse_output(&out.sequence, &counter).unwrap();
                assert!(parsed.pairs.all_exact());
                if layout != Layout::Front {
                    assert_eq!(parsed.pairs, pairs);
                    assert!(out.timeouts().is_empty());
                }
            }
        }
    }
    assert_eq!(seen.len(), 4);
}

#[test]
fn oracle_infill_is_exact_for_every_flag_combination() {
    let docs = corpus();
    let v = vocab(&docs);
    let counter = SyllableCounter::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut runs = 0;
    for doc in &docs {
        let tree = build_tree(doc).unwrap();
        for _ in 0..3 {
            let masked = select_masks(&tree, 0.3, &mut rng);
            let grans = masked_granularities(&masked);
            for flags in [
                InfillFlags::default(),
                InfillFlags { same_mask: true, no_songform: false },
                InfillFlags { same_mask: false, no_songform: true },
                InfillFlags { same_mask: true, no_songform: true },
            ] {
                let (context, answer) = match serialize_infilling(&masked, flags) {
                    Ok(x) => x,
                    Err(PlanError::NothingMasked) => continue,
                    Err(e) => panic!("{e}"),
                };
                let mut oracle = OracleModel::new(&v);
                let out = execute_infill(&mut oracle, &v, &context, &answer, &grans, None, &DecodeParams::default(), &mut NoTrace).unwrap();
                let pairs = score_infill(&masked, &out.answer(), &counter).unwrap();
                assert!(pairs.all_exact(), "{flags:?}\n{}", out.answer());
                assert_eq!(out.segments.iter().map(|s| s.granularity).collect::<Vec<_>>(), grans);
                runs += 1;
            }
            let base = execute_baseline(&mut OracleModel::new(&v), &v, &masked, None, &DecodeParams::default(), &mut NoTrace);
            match base {
                Ok(out) => assert!(out.segments.iter().all(|s| counter.realized(&s.text) == s.target)),
                Err(DecodeError::Plan(PlanError::NothingMasked)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
    assert!(runs > 200, "{runs}");
}

fn context_only(tree: &PlanTree) -> PlanTree {
    let mut t = tree.clone();
    for p in &mut t.paragraphs {
        p.root.mode = Mode::Context;
        p.root.children.clear();
    }
    t
}

#[test]
fn plan_without_generation_is_returned_unchanged() {
    let docs = corpus();
    let v = vocab(&docs);
    let plan = serialize_generation(&context_only(&build_tree(&docs[0]).unwrap()), Layout::Back).unwrap();
    assert!(plan.iter().all(|s| s.role == Role::Condition));
    let out =
        execute_plan(&mut NoiseModel::new(v.len(), 1), &v, &plan, Layout::Back, None, &DecodeParams::default(), &mut NoTrace).unwrap();
    assert_eq!(out.sequence, plan);
    assert!(out.provenance.iter().all(|&p| p == Provenance::Forced));
    assert!(out.segments.is_empty());
}

#[test]
fn zero_budget_times_out_every_segment() {
    let docs = corpus();
    let v = vocab(&docs);
    let counter = SyllableCounter::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let plan_tree = select_spans(&build_tree(&docs[1]).unwrap(), 0.2, &mut rng);
    let plan = serialize_generation(&plan_tree, Layout::Back).unwrap();
    let params = DecodeParams { max_tokens_per_segment: Some(0), ..Default::default() };
    let out = execute_plan(&mut OracleModel::new(&v), &v, &plan, Layout::Back, None, &params, &mut NoTrace).unwrap();
    let n_segments = plan_tree.targets().len();
    assert_eq!(out.segments.len(), n_segments);
    assert!(out.segments.iter().all(|s| s.timed_out && s.text.is_empty() && s.tokens == 0));
    assert_eq!(out.count(Provenance::InjectedOnTimeout), n_segments);
    assert_eq!(out.timeouts().len(), n_segments);
    let pairs = realized_pairs(&plan, &out.sequence, &counter);
    for p in &pairs.0 {
        if p.granularity != Granularity::Paragraph {
            assert_eq!(p.realized, 0);
        }
    }
}

#[test]
fn forced_items_survive_any_model_and_provenance_reconciles() {
    let docs = corpus();
    let v = vocab(&docs);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (k, doc) in docs.iter().enumerate().take(25) {
        let plan_tree = select_spans(&build_tree(doc).unwrap(), 0.3, &mut rng);
        for layout in [Layout::Back, Layout::Both] {
            let plan = serialize_generation(&plan_tree, layout).unwrap();
            let mut model = NoiseModel::new(v.len(), k as u64);
            let params = DecodeParams { seed: k as u64, ..Default::default() };
            let out = execute_plan(&mut model, &v, &plan, layout, None, &params, &mut NoTrace).unwrap();
            assert_eq!(out.sequence.len(), plan.len());
            assert_eq!(out.provenance.len(), plan.len());
            for (i, (a, b)) in plan.iter().zip(out.sequence.iter()).enumerate() {
                assert_eq!(a.role, b.role);
                match (a.role, &a.item) {
                    (Role::Condition, _) => {
                        assert_eq!(a, b, "item {i}");
                        assert_eq!(out.provenance[i], Provenance::Forced);
                    }
                    (Role::Predict, Item::Token(t)) => {
                        assert_eq!(b.item.token(), Some(*t));
                    }
                    (Role::Predict, Item::Text(_)) => assert_eq!(out.provenance[i], Provenance::Sampled),
                }
            }
            let conditions = plan.iter().filter(|s| s.role == Role::Condition).count();
            let texts = plan.iter().filter(|s| s.role == Role::Predict && s.item.text().is_some()).count();
            assert_eq!(out.segments.len(), texts);
            assert!(out.count(Provenance::Forced) >= conditions);
            assert_eq!(
                out.count(Provenance::Forced) + out.count(Provenance::Sampled) + out.count(Provenance::InjectedOnTimeout),
                plan.len()
            );
        }
    }
}

#[test]
fn decoding_is_deterministic_per_seed() {
    let docs = corpus();
    let v = vocab(&docs);
    let plan_tree = select_spans(&build_tree(&docs[4]).unwrap(), 0.5, &mut ChaCha8Rng::seed_from_u64(1));
    let plan = serialize_generation(&plan_tree, Layout::Back).unwrap();
    let run = |seed| {
        let mut model = NoiseModel::new(v.len(), 77);
        let params = DecodeParams { seed, ..Default::default() };
        execute_plan(&mut model, &v, &plan, Layout::Back, None, &params, &mut NoTrace).unwrap().sequence
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn trace_covers_every_fed_id() {
    let docs = corpus();
    let v = vocab(&docs);
    let plan_tree = select_spans(&build_tree(&docs[2]).unwrap(), 0.5, &mut ChaCha8Rng::seed_from_u64(3));
    let plan = serialize_generation(&plan_tree, Layout::Back).unwrap();
    let mut events: Vec<TraceEvent> = Vec::new();
    let out = execute_plan(&mut OracleModel::new(&v), &v, &plan, Layout::Back, None, &DecodeParams::default(), &mut events).unwrap();
    assert_eq!(events.len(), out.ids.len());
    assert!(events.iter().enumerate().all(|(i, e)| e.step == i && e.id == out.ids[i]));
    // The oracle's sampled choices are always its top-ranked id.
    assert!(events.iter().filter(|e| e.provenance == Provenance::Sampled).all(|e| e.logit_rank == 0));
    let line = events[0].to_json_line();
    assert!(line.contains("\"provenance\":\"forced\"") && line.contains("<LYR_START>"), "{line}");
}

#[test]
fn context_overflow_is_reported() {
    let docs = corpus();
    let v = vocab(&docs);
    let plan =
        serialize_generation(&select_spans(&build_tree(&docs[0]).unwrap(), 1.0, &mut ChaCha8Rng::seed_from_u64(0)), Layout::Back).unwrap();
    let mut oracle = OracleModel::new(&v).with_context_len(6);
    match execute_plan(&mut oracle, &v, &plan, Layout::Back, None, &DecodeParams::default(), &mut NoTrace) {
        Err(DecodeError::BudgetExhausted { limit: 6 }) => {}
        other => panic!("{other:?}"),
    }
    // Front stops quietly at the window instead.
    let front =
        serialize_generation(&select_spans(&build_tree(&docs[0]).unwrap(), 1.0, &mut ChaCha8Rng::seed_from_u64(0)), Layout::Front).unwrap();
    let prompt = front.iter().take_while(|s| s.role == Role::Condition).count();
    let mut oracle = OracleModel::new(&v).with_context_len(prompt + 4);
    let out = execute_plan(&mut oracle, &v, &front, Layout::Front, None, &DecodeParams::default(), &mut NoTrace).unwrap();
    assert_eq!(out.ids.len(), prompt + 3);
}

#[test]
fn baseline_sees_only_past_context() {
    let docs = corpus();
    let v = vocab(&docs);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    for doc in docs.iter().take(20) {
        let masked = select_masks(&build_tree(doc).unwrap(), 0.3, &mut rng);
        let Ok((context, answer)) = serialize_infilling(&masked, InfillFlags::default()) else { continue };
        let grans = masked_granularities(&masked);
        let params = DecodeParams::default();
        let full = execute_infill(&mut OracleModel::new(&v), &v, &context, &answer, &grans, None, &params, &mut NoTrace).unwrap();
        let base = execute_baseline(&mut OracleModel::new(&v), &v, &masked, None, &params, &mut NoTrace).unwrap();
        assert_eq!(full.segments.len(), base.segments.len());
        // Full-context infilling sees the whole context before its first
        // segment; the baseline window stops inside the first masked paragraph.
        let context_ids = v.encode(&context.items()).len();
        assert!(full.segments[0].visible > context_ids);
        assert!(base.segments[0].visible < full.segments[0].visible);
        let window = v.decode(&base.ids[..base.segments[0].visible - 1]).unwrap();
        let forms = window.iter().filter(|i| matches!(i.token(), Some(ControlToken::Form(_)))).count();
        assert_eq!(forms, masked.targets()[0].0 + 1);
        checked += 1;
    }
    assert!(checked > 5);
}

#[test]
fn transformer_session_runs_a_plan() {
    let docs = corpus();
    let v = vocab(&docs);
    let cfg =
        LmConfig { layers: 1, heads: 2, model_dim: 16, ff_dim: 32, context_len: 512, embed_dim: 8, ..LmConfig::new(v.len(), slot_id(&v)) };
    let model: Model<f32> = Model::new(cfg).unwrap();
    let plan =
        serialize_generation(&select_spans(&build_tree(&docs[0]).unwrap(), 0.2, &mut ChaCha8Rng::seed_from_u64(0)), Layout::Back).unwrap();
    let emb = vec![0.25f32; 8];
    let params = DecodeParams { max_tokens_per_segment: Some(6), ..Default::default() };
    let a = execute_plan(&mut TransformerSession::new(&model), &v, &plan, Layout::Back, Some(&emb), &params, &mut NoTrace).unwrap();
    let b = execute_plan(&mut TransformerSession::new(&model), &v, &plan, Layout::Back, Some(&emb), &params, &mut NoTrace).unwrap();
    assert_eq!(a, b);
    assert!(a.segments.iter().all(|s| s.tokens <= 6));
    let front =
        serialize_generation(&select_spans(&build_tree(&docs[0]).unwrap(), 0.2, &mut ChaCha8Rng::seed_from_u64(0)), Layout::Front).unwrap();
    let f = execute_plan(&mut TransformerSession::new(&model), &v, &front, Layout::Front, None, &params, &mut NoTrace).unwrap();
    assert!(f.ids.len() < 512);
    assert!(f.sequence.iter().any(|s| s.item.token() == Some(ControlToken::LyrStart)));
}
