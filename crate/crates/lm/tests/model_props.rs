use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use syllaform_lm::model::{LmConfig, Model, SeqInput, SeqTargets};
use syllaform_lm::{checkpoint, perplexity_eval, train, Example, TrainConfig};

fn config(dim: usize, vocab: usize) -> LmConfig {
    LmConfig {
        layers: 2,
        heads: 2,
        model_dim: dim,
        ff_dim: 2 * dim,
        context_len: 24,
        vocab_size: vocab,
        embed_dim: 8,
        slot_id: 0,
        dropout: 0.0,
        seed: 11,
    }
}

fn embedding(seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn loss(model: &Model<f64>, batch: &[SeqTargets]) -> f64 {
    let mut g = vec![0.0; model.param_count()];
    model.loss_and_grad(batch, None, &mut g).unwrap().0
}

#[test]
fn gradients_match_finite_differences() {
    let mut model: Model<f64> = Model::new(config(32, 20)).unwrap();
    // lift biases and gains off their initial values so their gradients are generic
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in model.params.iter_mut() {
        *p += rng.gen_range(-0.05..0.05);
    }
    let e1 = embedding(1);
    let ids1 = [0u32, 4, 9, 13, 2, 7, 19, 3];
    let p1 = [false, false, true, true, false, true, true, true];
    let ids2 = [0u32, 5, 5, 11, 1];
    let p2 = [false, true, true, false, true];
    let batch = [
        SeqTargets { input: SeqInput { ids: &ids1, embedding: Some(&e1) }, predict: &p1 },
        SeqTargets { input: SeqInput { ids: &ids2, embedding: None }, predict: &p2 },
    ];
    let mut grad = vec![0.0; model.param_count()];
    model.loss_and_grad(&batch, None, &mut grad).unwrap();

    // sample parameters from every tensor so no block of the backward pass goes unchecked
    let l = model.layout.clone();
    let mut groups = vec![
        l.tok_emb.clone(),
        l.pos_emb.start..l.pos_emb.start + 8 * 32,
        l.sem_w.clone(),
        l.sem_b.clone(),
        l.lnf_g.clone(),
        l.lnf_b.clone(),
    ];
    for lp in &l.layers {
        groups.extend([lp.ln1_g.clone(), lp.ln1_b.clone(), lp.w_qkv.clone(), lp.b_qkv.clone(), lp.w_o.clone(), lp.b_o.clone()]);
        groups.extend([lp.ln2_g.clone(), lp.ln2_b.clone(), lp.w_1.clone(), lp.b_1.clone(), lp.w_2.clone(), lp.b_2.clone()]);
    }
    let h = 1e-5;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for (gi, r) in groups.iter().enumerate() {
        for _ in 0..2 {
            let i = rng.gen_range(r.clone());
            let orig = model.params[i];
            model.params[i] = orig + h;
            let up = loss(&model, &batch);
            model.params[i] = orig - h;
            let down = loss(&model, &batch);
            model.params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel <= 1e-3, "group {gi} index {i}: analytic {analytic:e} numeric {numeric:e} rel {rel:e}");
            checked += 1;
        }
    }
    assert!(checked >= 20);
    println!("checked {checked} parameters, worst relative error {worst:e}");
}

#[test]
fn causal_masking() {
    let model: Model<f32> = Model::new(config(16, 20)).unwrap();
    let v = 20;
    let a = [0u32, 3, 4, 5, 6, 7];
    for t in 1..a.len() {
        let mut b = a;
        b[t] = 19;
        let la = model.forward(&a, None).unwrap();
        let lb = model.forward(&b, None).unwrap();
        assert_eq!(la[..t * v], lb[..t * v], "perturbing position {t} changed earlier logits");
        assert_ne!(la[t * v..], lb[t * v..]);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let model: Model<f32> = Model::new(config(16, 20)).unwrap();
    let ids = [0u32, 3, 4, 5, 6, 7, 8];
    for layer in 0..2 {
        for head in 0..2 {
            let p = model.attention_probs(&ids, None, layer, head).unwrap();
            let t = ids.len();
            for i in 0..t {
                let row = &p[i * t..(i + 1) * t];
                let s: f32 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "row {i} sums to {s}");
                assert!(row[i + 1..].iter().all(|&x| x == 0.0));
            }
        }
    }
}

#[test]
fn semantic_slot_is_live() {
    let model: Model<f32> = Model::new(config(16, 20)).unwrap();
    let ids = [0u32, 3, 4, 5];
    let a = model.forward(&ids, Some(&embedding(1))).unwrap();
    let b = model.forward(&ids, Some(&embedding(2))).unwrap();
    assert_ne!(a[20..], b[20..]);
}

#[test]
fn condition_positions_contribute_no_gradient() {
    let model: Model<f64> = Model::new(config(16, 20)).unwrap();
    let p = [false, true, true, false];
    let mut g1 = vec![0.0; model.param_count()];
    let mut g2 = vec![0.0; model.param_count()];
    // the last token is a condition: no loss on it and nothing attends to it
    model.loss_and_grad(&[SeqTargets { input: SeqInput { ids: &[0, 3, 4, 5], embedding: None }, predict: &p }], None, &mut g1).unwrap();
    model.loss_and_grad(&[SeqTargets { input: SeqInput { ids: &[0, 3, 4, 17], embedding: None }, predict: &p }], None, &mut g2).unwrap();
    assert_eq!(g1, g2);

    let none = [false; 4];
    let mut g = vec![0.0; model.param_count()];
    let (l, n) = model
        .loss_and_grad(&[SeqTargets { input: SeqInput { ids: &[0, 3, 4, 5], embedding: None }, predict: &none }], None, &mut g)
        .unwrap();
    assert_eq!((l, n), (0.0, 0));
    assert!(g.iter().all(|&x| x == 0.0));
}

fn example(ids: Vec<u32>, predict_from: usize) -> Example {
    let predict = (0..ids.len()).map(|i| i >= predict_from).collect();
    Example { ids, predict, embedding: Some(embedding(9)) }
}

#[test]
fn memorizes_one_example() {
    let mut model: Model<f32> = Model::new(config(32, 20)).unwrap();
    let data = vec![example(vec![0, 3, 8, 1, 9, 12, 4, 4, 15], 2)];
    let tc = TrainConfig { epochs: 200, batch: 1, lr: 3e-3, warmup_steps: 10, ..Default::default() };
    let curve = train(&mut model, &data, &tc, &mut |_, _| {}).unwrap();
    assert!(curve.last().unwrap() < &(curve[0] * 0.1), "{:?}", &curve[..3]);
}

#[test]
fn no_targets_leaves_parameters_unchanged() {
    let mut model: Model<f32> = Model::new(config(16, 20)).unwrap();
    let before = model.params.clone();
    let data = vec![Example { ids: vec![0, 3, 4, 5], predict: vec![false; 4], embedding: None }];
    let curve = train(&mut model, &data, &TrainConfig { epochs: 3, ..Default::default() }, &mut |_, _| {}).unwrap();
    assert_eq!(curve, vec![0.0; 3]);
    assert_eq!(model.params, before);
}

#[test]
fn training_is_deterministic() {
    let data: Vec<Example> = (0..6).map(|k| example(vec![0, 1 + k, 2 + k, 3 + k, 4, 5], 1)).collect();
    let mut cfg = config(16, 20);
    cfg.dropout = 0.1;
    let tc = TrainConfig { epochs: 3, batch: 2, lr: 1e-3, warmup_steps: 2, ..Default::default() };
    let run = || {
        let mut m: Model<f32> = Model::new(cfg.clone()).unwrap();
        let curve = train(&mut m, &data, &tc, &mut |_, _| {}).unwrap();
        (curve, m.params)
    };
    let (c1, p1) = run();
    let (c2, p2) = run();
    assert_eq!(c1, c2);
    assert_eq!(p1, p2);
}

#[test]
fn uniform_model_perplexity_is_vocab_size() {
    let model: Model<f64> = Model::zeroed(config(16, 20)).unwrap();
    let data: Vec<Example> = (0..5).map(|k| example(vec![0, 1 + k, 2, 18, 4], 1)).collect();
    let ppl = perplexity_eval(&model, &data, 20).unwrap();
    assert!((ppl - 20.0).abs() < 1e-9, "{ppl}");
    // ids at or above the text limit are specials and excluded
    let specials = vec![example(vec![0, 15, 16], 1)];
    assert!(perplexity_eval(&model, &specials, 15).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let model: Model<f32> = Model::new(config(16, 20)).unwrap();
    let mut buf = Vec::new();
    checkpoint::write(&mut buf, &model, "abc").unwrap();
    let (back, header) = checkpoint::read(&mut buf.as_slice()).unwrap();
    assert_eq!(back.params, model.params);
    assert_eq!(back.config, model.config);
    assert_eq!(header.vocab_hash, "abc");
    buf[0] = b'X';
    assert!(checkpoint::read(&mut buf.as_slice()).is_err());
    assert!(checkpoint::read(&mut &buf[..30]).is_err());
}
