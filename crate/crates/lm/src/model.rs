//! Pre-norm decoder-only transformer with hand-written backward pass.
//!
//! All parameters live in one flat vector; [`ParamLayout`] maps names to
//! ranges. The output head is tied to the token embedding. Position 0 of
//! every sequence is the semantic slot: when an embedding is supplied, its
//! projection replaces the token embedding there.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::float::{matmul, Float, Mat};
use crate::LmError;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    /// Width of semantic embeddings fed to the slot at position 0.
    pub embed_dim: usize,
    /// Token id occupying the semantic slot.
    pub slot_id: u32,
    pub dropout: f64,
    pub seed: u64,
}

impl LmConfig {
    /// Desk-scale defaults: 4 layers, 4 heads, width 256.
    pub fn new(vocab_size: usize, slot_id: u32) -> Self {
        Self {
            layers: 4,
            heads: 4,
            model_dim: 256,
            ff_dim: 1024,
            context_len: 1024,
            vocab_size,
            embed_dim: syllaform_core::embed::DEFAULT_EMBED_DIM,
            slot_id,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidConfig(m.to_string()));
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ff_dim == 0 {
            return bad("layers, heads, model_dim and ff_dim must be positive");
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad("model_dim must be divisible by heads");
        }
        if self.context_len == 0 || self.vocab_size == 0 || self.embed_dim == 0 {
            return bad("context_len, vocab_size and embed_dim must be positive");
        }
        if self.slot_id as usize >= self.vocab_size {
            return bad("slot_id outside the vocabulary");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_1: Range<usize>,
    pub b_1: Range<usize>,
    pub w_2: Range<usize>,
    pub b_2: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub sem_w: Range<usize>,
    pub sem_b: Range<usize>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(c: &LmConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (d, f) = (c.model_dim, c.ff_dim);
        let tok_emb = take(c.vocab_size * d);
        let pos_emb = take(c.context_len * d);
        let sem_w = take(c.embed_dim * d);
        let sem_b = take(d);
        let layers = (0..c.layers)
            .map(|_| LayerParams {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_1: take(d * f),
                b_1: take(f),
                w_2: take(f * d),
                b_2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        ParamLayout { tok_emb, pos_emb, sem_w, sem_b, layers, lnf_g, lnf_b, total: at }
    }

    /// Ranges of weight matrices and embeddings (decayed by the optimizer).
    pub fn matrices(&self) -> Vec<Range<usize>> {
        let mut out = vec![self.tok_emb.clone(), self.pos_emb.clone(), self.sem_w.clone()];
        for l in &self.layers {
            out.extend([l.w_qkv.clone(), l.w_o.clone(), l.w_1.clone(), l.w_2.clone()]);
        }
        out
    }
}

/// One sequence to run: ids with the slot id first, plus an optional
/// semantic embedding for that slot.
#[derive(Debug, Clone, Copy)]
pub struct SeqInput<'a> {
    pub ids: &'a [u32],
    pub embedding: Option<&'a [f32]>,
}

/// Per-sequence loss targets: `predict[i]` marks `ids[i]` as a target of
/// the logits at position `i - 1`.
#[derive(Debug, Clone, Copy)]
pub struct SeqTargets<'a> {
    pub input: SeqInput<'a>,
    pub predict: &'a [bool],
}

#[derive(Debug, Clone)]
pub struct Model<T: Float = f32> {
    pub config: LmConfig,
    pub layout: ParamLayout,
    pub params: Vec<T>,
}

struct LayerActs<T> {
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    a1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<Vec<T>>,
    ctx: Vec<T>,
    drop1: Option<Vec<T>>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    a2: Vec<T>,
    h: Vec<T>,
    g: Vec<T>,
    drop2: Option<Vec<T>>,
}

struct Acts<T> {
    spans: Vec<Range<usize>>,
    drop0: Option<Vec<T>>,
    layers: Vec<LayerActs<T>>,
    xhatf: Vec<T>,
    rstdf: Vec<T>,
    xf: Vec<T>,
    logits: Vec<T>,
}

fn ln_forward<T: Float>(x: &[T], g: &[T], b: &[T], d: usize, xhat: &mut [T], rstd: &mut [T], out: &mut [T]) {
    let inv_d = T::c(1.0 / d as f64);
    let eps = T::c(LN_EPS);
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let xh = &mut xhat[r * d..(r + 1) * d];
        let o = &mut out[r * d..(r + 1) * d];
        for i in 0..d {
            xh[i] = (row[i] - mean) * rs;
            o[i] = xh[i] * g[i] + b[i];
        }
    }
}

/// Adds the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
fn ln_backward<T: Float>(dy: &[T], xhat: &[T], rstd: &[T], g: &[T], d: usize, dg: &mut [T], db: &mut [T], dx: &mut [T]) {
    let inv_d = T::c(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for (r, dyr) in dy.chunks_exact(d).enumerate() {
        let xh = &xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            dxr[i] += rstd[r] * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

fn add_bias<T: Float>(y: &mut [T], b: &[T]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn bias_grad<T: Float>(dy: &[T], db: &mut [T]) {
    for row in dy.chunks_exact(db.len()) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
}

fn gelu<T: Float>(x: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let k = T::c(0.044715);
    let half = T::c(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).act_tanh())
}

fn gelu_grad<T: Float>(x: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let k = T::c(0.044715);
    let half = T::c(0.5);
    let t = (c * (x + k * x * x * x)).act_tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::c(3.0) * k * x * x)
}

fn dropout_mask<T: Float>(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::c(1.0 / (1.0 - p));
    (0..n).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect()
}

fn apply_mask<T: Float>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

/// Numerically stable softmax in place over `row`.
pub fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl<T: Float> Model<T> {
    /// Random initialization: N(0, 0.02) weights, residual output
    /// projections scaled by `1/sqrt(2·layers)`, zero biases, unit gains.
    pub fn new(config: LmConfig) -> Result<Self, LmError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let resid = 1.0 / (2.0 * config.layers as f64).sqrt();
        let mut fill = |r: &Range<usize>, scale: f64, params: &mut [T]| {
            for p in &mut params[r.clone()] {
                *p = T::c(normal.sample(&mut rng) * scale);
            }
        };
        fill(&layout.tok_emb, 1.0, &mut params);
        fill(&layout.pos_emb, 0.5, &mut params);
        fill(&layout.sem_w, 1.0, &mut params);
        for l in &layout.layers {
            fill(&l.w_qkv, 1.0, &mut params);
            fill(&l.w_o, resid, &mut params);
            fill(&l.w_1, 1.0, &mut params);
            fill(&l.w_2, resid, &mut params);
        }
        for l in &layout.layers {
            params[l.ln1_g.clone()].iter_mut().for_each(|p| *p = T::one());
            params[l.ln2_g.clone()].iter_mut().for_each(|p| *p = T::one());
        }
        params[layout.lnf_g.clone()].iter_mut().for_each(|p| *p = T::one());
        Ok(Self { config, layout, params })
    }

    /// Model with every parameter zero; its logits are uniform.
    pub fn zeroed(config: LmConfig) -> Result<Self, LmError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let params = vec![T::zero(); layout.total];
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: LmConfig, params: Vec<T>) -> Result<Self, LmError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(LmError::InvalidConfig(format!("expected {} parameters, found {}", layout.total, params.len())));
        }
        Ok(Self { config, layout, params })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    fn p(&self, r: &Range<usize>) -> &[T] {
        &self.params[r.clone()]
    }

    fn check_input(&self, s: &SeqInput) -> Result<(), LmError> {
        let c = &self.config;
        if s.ids.is_empty() {
            return Err(LmError::EmptySequence);
        }
        if s.ids.len() > c.context_len {
            return Err(LmError::ContextOverflow { len: s.ids.len(), max: c.context_len });
        }
        if let Some(&id) = s.ids.iter().find(|&&id| id as usize >= c.vocab_size) {
            return Err(LmError::UnknownId(id));
        }
        if let Some(e) = s.embedding {
            if e.len() != c.embed_dim {
                return Err(LmError::EmbeddingDim { got: e.len(), want: c.embed_dim });
            }
        }
        Ok(())
    }

    fn embed_rows(&self, seqs: &[SeqInput], x: &mut [T]) {
        let d = self.config.model_dim;
        let tok = self.p(&self.layout.tok_emb);
        let pos = self.p(&self.layout.pos_emb);
        let mut r = 0;
        for s in seqs {
            for (t, &id) in s.ids.iter().enumerate() {
                let row = &mut x[r * d..(r + 1) * d];
                let pe = &pos[t * d..(t + 1) * d];
                match (t, s.embedding) {
                    (0, Some(e)) => self.slot_row(e, row),
                    _ => row.copy_from_slice(&tok[id as usize * d..(id as usize + 1) * d]),
                }
                for (v, &p) in row.iter_mut().zip(pe) {
                    *v += p;
                }
                r += 1;
            }
        }
    }

    fn slot_row(&self, e: &[f32], row: &mut [T]) {
        let d = self.config.model_dim;
        let w = self.p(&self.layout.sem_w);
        row.copy_from_slice(self.p(&self.layout.sem_b));
        for (i, &ei) in e.iter().enumerate() {
            if ei == 0.0 {
                continue;
            }
            let ei = T::c(ei as f64);
            for (v, &wv) in row.iter_mut().zip(&w[i * d..(i + 1) * d]) {
                *v += ei * wv;
            }
        }
    }

    fn attention_forward(&self, qkv: &[T], spans: &[Range<usize>], ctx: &mut [T], probs: &mut Vec<Vec<T>>) {
        let c = &self.config;
        let (d, hd) = (c.model_dim, c.head_dim());
        let scale = T::c(1.0 / (hd as f64).sqrt());
        for span in spans {
            let (o, t) = (span.start, span.len());
            for h in 0..c.heads {
                let q = &qkv[o * 3 * d + h * hd..];
                let k = &qkv[o * 3 * d + d + h * hd..];
                let v = &qkv[o * 3 * d + 2 * d + h * hd..];
                let mut p = vec![T::zero(); t * t];
                matmul(t, hd, t, Mat::n(q, 3 * d), Mat::t(k, 3 * d), &mut p, t, false);
                for i in 0..t {
                    let row = &mut p[i * t..(i + 1) * t];
                    for x in row[..=i].iter_mut() {
                        *x *= scale;
                    }
                    softmax_in_place(&mut row[..=i]);
                    row[i + 1..].iter_mut().for_each(|x| *x = T::zero());
                }
                matmul(t, t, hd, Mat::n(&p, t), Mat::n(v, 3 * d), &mut ctx[o * d + h * hd..], d, false);
                probs.push(p);
            }
        }
    }

    fn forward_acts(&self, seqs: &[SeqInput], mut rng: Option<&mut ChaCha8Rng>) -> Result<Acts<T>, LmError> {
        for s in seqs {
            self.check_input(s)?;
        }
        let c = &self.config;
        let (d, f, v) = (c.model_dim, c.ff_dim, c.vocab_size);
        let mut spans = Vec::with_capacity(seqs.len());
        let mut n = 0;
        for s in seqs {
            spans.push(n..n + s.ids.len());
            n += s.ids.len();
        }
        let p_drop = if rng.is_some() { c.dropout } else { 0.0 };
        let mut mask = |len: usize| -> Option<Vec<T>> {
            match rng.as_deref_mut() {
                Some(r) if p_drop > 0.0 => Some(dropout_mask(len, p_drop, r)),
                _ => None,
            }
        };

        let mut x = vec![T::zero(); n * d];
        self.embed_rows(seqs, &mut x);
        let drop0 = mask(n * d);
        apply_mask(&mut x, &drop0);

        let mut layers = Vec::with_capacity(c.layers);
        for lp in &self.layout.layers {
            let mut xhat1 = vec![T::zero(); n * d];
            let mut rstd1 = vec![T::zero(); n];
            let mut a1 = vec![T::zero(); n * d];
            ln_forward(&x, self.p(&lp.ln1_g), self.p(&lp.ln1_b), d, &mut xhat1, &mut rstd1, &mut a1);
            let mut qkv = vec![T::zero(); n * 3 * d];
            matmul(n, d, 3 * d, Mat::n(&a1, d), Mat::n(self.p(&lp.w_qkv), 3 * d), &mut qkv, 3 * d, false);
            add_bias(&mut qkv, self.p(&lp.b_qkv));
            let mut ctx = vec![T::zero(); n * d];
            let mut probs = Vec::with_capacity(seqs.len() * c.heads);
            self.attention_forward(&qkv, &spans, &mut ctx, &mut probs);
            let mut proj = vec![T::zero(); n * d];
            matmul(n, d, d, Mat::n(&ctx, d), Mat::n(self.p(&lp.w_o), d), &mut proj, d, false);
            add_bias(&mut proj, self.p(&lp.b_o));
            let drop1 = mask(n * d);
            apply_mask(&mut proj, &drop1);
            for (xv, pv) in x.iter_mut().zip(&proj) {
                *xv += *pv;
            }

            let mut xhat2 = vec![T::zero(); n * d];
            let mut rstd2 = vec![T::zero(); n];
            let mut a2 = vec![T::zero(); n * d];
            ln_forward(&x, self.p(&lp.ln2_g), self.p(&lp.ln2_b), d, &mut xhat2, &mut rstd2, &mut a2);
            let mut h = vec![T::zero(); n * f];
            matmul(n, d, f, Mat::n(&a2, d), Mat::n(self.p(&lp.w_1), f), &mut h, f, false);
            add_bias(&mut h, self.p(&lp.b_1));
            let g: Vec<T> = h.iter().map(|&u| gelu(u)).collect();
            let mut out = proj;
            matmul(n, f, d, Mat::n(&g, f), Mat::n(self.p(&lp.w_2), d), &mut out, d, false);
            add_bias(&mut out, self.p(&lp.b_2));
            let drop2 = mask(n * d);
            apply_mask(&mut out, &drop2);
            for (xv, ov) in x.iter_mut().zip(&out) {
                *xv += *ov;
            }
            layers.push(LayerActs { xhat1, rstd1, a1, qkv, probs, ctx, drop1, xhat2, rstd2, a2, h, g, drop2 });
        }

        let mut xhatf = vec![T::zero(); n * d];
        let mut rstdf = vec![T::zero(); n];
        let mut xf = vec![T::zero(); n * d];
        ln_forward(&x, self.p(&self.layout.lnf_g), self.p(&self.layout.lnf_b), d, &mut xhatf, &mut rstdf, &mut xf);
        let mut logits = vec![T::zero(); n * v];
        matmul(n, d, v, Mat::n(&xf, d), Mat::t(self.p(&self.layout.tok_emb), d), &mut logits, v, false);
        Ok(Acts { spans, drop0, layers, xhatf, rstdf, xf, logits })
    }

    /// Logits for every position, row-major `len × vocab_size`.
    pub fn forward(&self, ids: &[u32], embedding: Option<&[f32]>) -> Result<Vec<T>, LmError> {
        Ok(self.forward_acts(&[SeqInput { ids, embedding }], None)?.logits)
    }

    /// Logits for several sequences at once, packed in input order.
    pub fn forward_batch(&self, seqs: &[SeqInput]) -> Result<Vec<T>, LmError> {
        Ok(self.forward_acts(seqs, None)?.logits)
    }

    /// Attention weights of one layer and head for a single sequence,
    /// row-major `len × len`.
    pub fn attention_probs(&self, ids: &[u32], embedding: Option<&[f32]>, layer: usize, head: usize) -> Result<Vec<T>, LmError> {
        let mut acts = self.forward_acts(&[SeqInput { ids, embedding }], None)?;
        Ok(std::mem::take(&mut acts.layers[layer].probs[head]))
    }

    /// Mean next-token cross-entropy over all flagged targets in the batch
    /// and its gradient, accumulated into `grad`. Passing `rng` enables
    /// dropout. Returns `(mean loss, number of targets)`; with no targets
    /// the loss is 0 and `grad` is left untouched.
    pub fn loss_and_grad(&self, batch: &[SeqTargets], rng: Option<&mut ChaCha8Rng>, grad: &mut [T]) -> Result<(f64, usize), LmError> {
        assert_eq!(grad.len(), self.params.len());
        let count: usize = batch.iter().map(|s| s.predict.iter().skip(1).filter(|&&p| p).count()).sum();
        if count == 0 {
            return Ok((0.0, 0));
        }
        let inputs: Vec<SeqInput> = batch.iter().map(|s| s.input).collect();
        let mut acts = self.forward_acts(&inputs, rng)?;
        let v = self.config.vocab_size;
        let inv = T::c(1.0 / count as f64);
        let mut loss = 0.0f64;
        for (s, span) in batch.iter().zip(&acts.spans) {
            for t in 0..span.len() {
                let row = &mut acts.logits[(span.start + t) * v..(span.start + t + 1) * v];
                let target = (t + 1 < span.len() && s.predict[t + 1]).then(|| s.input.ids[t + 1] as usize);
                match target {
                    Some(y) => {
                        softmax_in_place(row);
                        loss -= row[y].to_f64().unwrap().max(f64::MIN_POSITIVE).ln();
                        row[y] -= T::one();
                        row.iter_mut().for_each(|x| *x *= inv);
                    }
                    None => row.iter_mut().for_each(|x| *x = T::zero()),
                }
            }
        }
        self.backward(&inputs, acts, grad);
        Ok((loss / count as f64, count))
    }

    /// Backward pass; `acts.logits` holds dLoss/dlogits.
    fn backward(&self, seqs: &[SeqInput], acts: Acts<T>, grad: &mut [T]) {
        let c = &self.config;
        let l = &self.layout;
        let (d, f, v) = (c.model_dim, c.ff_dim, c.vocab_size);
        let n = acts.spans.last().map_or(0, |s| s.end);
        let dlogits = &acts.logits;

        let mut dxf = vec![T::zero(); n * d];
        matmul(n, v, d, Mat::n(dlogits, v), Mat::n(self.p(&l.tok_emb), d), &mut dxf, d, false);
        matmul(v, n, d, Mat::t(dlogits, v), Mat::n(&acts.xf, d), &mut grad[l.tok_emb.clone()], d, true);

        let mut dx = vec![T::zero(); n * d];
        {
            let (dg, db) = two_mut(grad, &l.lnf_g, &l.lnf_b);
            ln_backward(&dxf, &acts.xhatf, &acts.rstdf, self.p(&l.lnf_g), d, dg, db, &mut dx);
        }
        drop(dxf);

        for (lp, la) in l.layers.iter().zip(&acts.layers).rev() {
            // MLP branch
            let mut dout = dx.clone();
            apply_mask(&mut dout, &la.drop2);
            matmul(f, n, d, Mat::t(&la.g, f), Mat::n(&dout, d), &mut grad[lp.w_2.clone()], d, true);
            bias_grad(&dout, &mut grad[lp.b_2.clone()]);
            let mut dh = vec![T::zero(); n * f];
            matmul(n, d, f, Mat::n(&dout, d), Mat::t(self.p(&lp.w_2), d), &mut dh, f, false);
            for (g, &hv) in dh.iter_mut().zip(&la.h) {
                *g *= gelu_grad(hv);
            }
            matmul(d, n, f, Mat::t(&la.a2, d), Mat::n(&dh, f), &mut grad[lp.w_1.clone()], f, true);
            bias_grad(&dh, &mut grad[lp.b_1.clone()]);
            let mut da2 = dout;
            matmul(n, f, d, Mat::n(&dh, f), Mat::t(self.p(&lp.w_1), f), &mut da2, d, false);
            drop(dh);
            {
                let (dg, db) = two_mut(grad, &lp.ln2_g, &lp.ln2_b);
                ln_backward(&da2, &la.xhat2, &la.rstd2, self.p(&lp.ln2_g), d, dg, db, &mut dx);
            }

            // attention branch
            let mut dproj = da2;
            dproj.copy_from_slice(&dx);
            apply_mask(&mut dproj, &la.drop1);
            matmul(d, n, d, Mat::t(&la.ctx, d), Mat::n(&dproj, d), &mut grad[lp.w_o.clone()], d, true);
            bias_grad(&dproj, &mut grad[lp.b_o.clone()]);
            let mut dctx = vec![T::zero(); n * d];
            matmul(n, d, d, Mat::n(&dproj, d), Mat::t(self.p(&lp.w_o), d), &mut dctx, d, false);
            let mut dqkv = vec![T::zero(); n * 3 * d];
            self.attention_backward(&la.qkv, &la.probs, &acts.spans, &dctx, &mut dqkv);
            matmul(d, n, 3 * d, Mat::t(&la.a1, d), Mat::n(&dqkv, 3 * d), &mut grad[lp.w_qkv.clone()], 3 * d, true);
            bias_grad(&dqkv, &mut grad[lp.b_qkv.clone()]);
            let mut da1 = dctx;
            matmul(n, 3 * d, d, Mat::n(&dqkv, 3 * d), Mat::t(self.p(&lp.w_qkv), 3 * d), &mut da1, d, false);
            {
                let (dg, db) = two_mut(grad, &lp.ln1_g, &lp.ln1_b);
                ln_backward(&da1, &la.xhat1, &la.rstd1, self.p(&lp.ln1_g), d, dg, db, &mut dx);
            }
        }

        apply_mask(&mut dx, &acts.drop0);
        let mut r = 0;
        for s in seqs {
            for (t, &id) in s.ids.iter().enumerate() {
                let drow = &dx[r * d..(r + 1) * d];
                let pos = &mut grad[l.pos_emb.start + t * d..l.pos_emb.start + (t + 1) * d];
                for (g, &dv) in pos.iter_mut().zip(drow) {
                    *g += dv;
                }
                match (t, s.embedding) {
                    (0, Some(e)) => {
                        for (i, &ei) in e.iter().enumerate() {
                            if ei == 0.0 {
                                continue;
                            }
                            let ei = T::c(ei as f64);
                            let w = &mut grad[l.sem_w.start + i * d..l.sem_w.start + (i + 1) * d];
                            for (g, &dv) in w.iter_mut().zip(drow) {
                                *g += ei * dv;
                            }
                        }
                        let b = &mut grad[l.sem_b.clone()];
                        for (g, &dv) in b.iter_mut().zip(drow) {
                            *g += dv;
                        }
                    }
                    _ => {
                        let start = l.tok_emb.start + id as usize * d;
                        for (g, &dv) in grad[start..start + d].iter_mut().zip(drow) {
                            *g += dv;
                        }
                    }
                }
                r += 1;
            }
        }
    }

    fn attention_backward(&self, qkv: &[T], probs: &[Vec<T>], spans: &[Range<usize>], dctx: &[T], dqkv: &mut [T]) {
        let c = &self.config;
        let (d, hd) = (c.model_dim, c.head_dim());
        let scale = T::c(1.0 / (hd as f64).sqrt());
        let mut pi = 0;
        for span in spans {
            let (o, t) = (span.start, span.len());
            for h in 0..c.heads {
                let p = &probs[pi];
                pi += 1;
                let qo = o * 3 * d + h * hd;
                let ko = qo + d;
                let vo = qo + 2 * d;
                let dc = &dctx[o * d + h * hd..];
                let mut dp = vec![T::zero(); t * t];
                matmul(t, hd, t, Mat::n(dc, d), Mat::t(&qkv[vo..], 3 * d), &mut dp, t, false);
                matmul(t, t, hd, Mat::t(p, t), Mat::n(dc, d), &mut dqkv[vo..], 3 * d, true);
                for i in 0..t {
                    let prow = &p[i * t..(i + 1) * t];
                    let drow = &mut dp[i * t..(i + 1) * t];
                    let dot: T = (0..=i).map(|j| prow[j] * drow[j]).sum();
                    for j in 0..t {
                        drow[j] = if j <= i { prow[j] * (drow[j] - dot) * scale } else { T::zero() };
                    }
                }
                matmul(t, t, hd, Mat::n(&dp, t), Mat::n(&qkv[ko..], 3 * d), &mut dqkv[qo..], 3 * d, true);
                matmul(t, t, hd, Mat::t(&dp, t), Mat::n(&qkv[qo..], 3 * d), &mut dqkv[ko..], 3 * d, true);
            }
        }
    }

    /// Starts an incremental decoding cache.
    pub fn cache(&self) -> KvCache<T> {
        KvCache { k: vec![Vec::new(); self.config.layers], v: vec![Vec::new(); self.config.layers], len: 0 }
    }

    /// Appends one position to `cache` and returns its logits. The first
    /// position may be [`StepInput::Slot`].
    pub fn step(&self, cache: &mut KvCache<T>, input: StepInput) -> Result<Vec<T>, LmError> {
        let c = &self.config;
        let (d, f, hd) = (c.model_dim, c.ff_dim, c.head_dim());
        let t = cache.len;
        if t >= c.context_len {
            return Err(LmError::ContextOverflow { len: t + 1, max: c.context_len });
        }
        let mut x = vec![T::zero(); d];
        match input {
            StepInput::Token(id) => {
                if id as usize >= c.vocab_size {
                    return Err(LmError::UnknownId(id));
                }
                x.copy_from_slice(&self.p(&self.layout.tok_emb)[id as usize * d..(id as usize + 1) * d]);
            }
            StepInput::Slot(e) => {
                if t != 0 {
                    return Err(LmError::InvalidConfig("the semantic slot must come first".into()));
                }
                if e.len() != c.embed_dim {
                    return Err(LmError::EmbeddingDim { got: e.len(), want: c.embed_dim });
                }
                self.slot_row(e, &mut x);
            }
        }
        for (v, &p) in x.iter_mut().zip(&self.p(&self.layout.pos_emb)[t * d..(t + 1) * d]) {
            *v += p;
        }
        let scale = T::c(1.0 / (hd as f64).sqrt());
        let mut xhat = vec![T::zero(); d];
        let mut rstd = [T::zero()];
        let mut a = vec![T::zero(); d];
        for (li, lp) in self.layout.layers.iter().enumerate() {
            ln_forward(&x, self.p(&lp.ln1_g), self.p(&lp.ln1_b), d, &mut xhat, &mut rstd, &mut a);
            let mut qkv = vec![T::zero(); 3 * d];
            matmul(1, d, 3 * d, Mat::n(&a, d), Mat::n(self.p(&lp.w_qkv), 3 * d), &mut qkv, 3 * d, false);
            add_bias(&mut qkv, self.p(&lp.b_qkv));
            cache.k[li].extend_from_slice(&qkv[d..2 * d]);
            cache.v[li].extend_from_slice(&qkv[2 * d..]);
            let (ks, vs) = (&cache.k[li], &cache.v[li]);
            let mut ctx = vec![T::zero(); d];
            let mut scores = vec![T::zero(); t + 1];
            for h in 0..c.heads {
                let q = &qkv[h * hd..(h + 1) * hd];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &ks[j * d + h * hd..j * d + (h + 1) * hd];
                    *s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                }
                softmax_in_place(&mut scores);
                let out = &mut ctx[h * hd..(h + 1) * hd];
                for (j, &w) in scores.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&vs[j * d + h * hd..j * d + (h + 1) * hd]) {
                        *o += w * vv;
                    }
                }
            }
            let mut proj = vec![T::zero(); d];
            matmul(1, d, d, Mat::n(&ctx, d), Mat::n(self.p(&lp.w_o), d), &mut proj, d, false);
            add_bias(&mut proj, self.p(&lp.b_o));
            for (xv, pv) in x.iter_mut().zip(&proj) {
                *xv += *pv;
            }
            ln_forward(&x, self.p(&lp.ln2_g), self.p(&lp.ln2_b), d, &mut xhat, &mut rstd, &mut a);
            let mut h = vec![T::zero(); f];
            matmul(1, d, f, Mat::n(&a, d), Mat::n(self.p(&lp.w_1), f), &mut h, f, false);
            add_bias(&mut h, self.p(&lp.b_1));
            h.iter_mut().for_each(|u| *u = gelu(*u));
            matmul(1, f, d, Mat::n(&h, f), Mat::n(self.p(&lp.w_2), d), &mut proj, d, false);
            add_bias(&mut proj, self.p(&lp.b_2));
            for (xv, pv) in x.iter_mut().zip(&proj) {
                *xv += *pv;
            }
        }
        ln_forward(&x, self.p(&self.layout.lnf_g), self.p(&self.layout.lnf_b), d, &mut xhat, &mut rstd, &mut a);
        let mut logits = vec![T::zero(); c.vocab_size];
        matmul(1, d, c.vocab_size, Mat::n(&a, d), Mat::t(self.p(&self.layout.tok_emb), d), &mut logits, c.vocab_size, false);
        cache.len += 1;
        Ok(logits)
    }
}

fn two_mut<'a, T>(v: &'a mut [T], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (lo, hi) = v.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

#[derive(Debug, Clone, Copy)]
pub enum StepInput<'a> {
    Token(u32),
    /// Semantic embedding for the slot at position 0.
    Slot(&'a [f32]),
}

#[derive(Debug, Clone)]
pub struct KvCache<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    len: usize,
}

impl<T> KvCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(vocab: usize) -> LmConfig {
        LmConfig {
            layers: 2,
            heads: 2,
            model_dim: 16,
            ff_dim: 32,
            context_len: 32,
            vocab_size: vocab,
            embed_dim: 8,
            slot_id: 0,
            dropout: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(10);
        assert!(c.validate().is_ok());
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny(10);
        c.slot_id = 10;
        assert!(c.validate().is_err());
        assert!(LmConfig::new(900, 0).validate().is_ok());
    }

    #[test]
    fn shapes_and_errors() {
        let m: Model<f32> = Model::new(tiny(10)).unwrap();
        let logits = m.forward(&[3], None).unwrap();
        assert_eq!(logits.len(), 10);
        assert!(logits.iter().all(|x| x.is_finite()));
        assert!(matches!(m.forward(&[0; 33], None), Err(LmError::ContextOverflow { .. })));
        assert!(matches!(m.forward(&[11], None), Err(LmError::UnknownId(11))));
        assert!(matches!(m.forward(&[0, 1], Some(&[0.0; 3])), Err(LmError::EmbeddingDim { .. })));
    }

    #[test]
    fn cached_steps_match_full_forward() {
        let m: Model<f64> = Model::new(tiny(12)).unwrap();
        let ids = [0u32, 5, 7, 1, 11, 2];
        let e: Vec<f32> = (0..8).map(|i| (i as f32 * 0.3).cos()).collect();
        let full = m.forward(&ids, Some(&e)).unwrap();
        let mut cache = m.cache();
        for (t, &id) in ids.iter().enumerate() {
            let input = if t == 0 { StepInput::Slot(&e) } else { StepInput::Token(id) };
            let row = m.step(&mut cache, input).unwrap();
            for (a, b) in row.iter().zip(&full[t * 12..(t + 1) * 12]) {
                assert!((a - b).abs() < 1e-10, "position {t}");
            }
        }
        assert_eq!(cache.len(), ids.len());
    }

    #[test]
    fn zeroed_model_is_uniform() {
        let m: Model<f64> = Model::zeroed(tiny(7)).unwrap();
        let logits = m.forward(&[0, 1, 2], None).unwrap();
        assert!(logits.iter().all(|&x| x == 0.0));
    }
}
