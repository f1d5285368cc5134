use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::model::{Model, SeqTargets};
use crate::LmError;

/// AdamW with global-norm clipping and linear warmup to a constant rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 8,
            lr: 5e-5,
            warmup_steps: 500,
            weight_decay: 0.01,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub seconds: f64,
}

struct AdamW {
    m: Vec<f32>,
    v: Vec<f32>,
    decay: Vec<bool>,
    t: i32,
}

impl AdamW {
    fn new(model: &Model<f32>) -> Self {
        let n = model.param_count();
        let mut decay = vec![false; n];
        for r in model.layout.matrices() {
            decay[r].iter_mut().for_each(|d| *d = true);
        }
        Self { m: vec![0.0; n], v: vec![0.0; n], decay, t: 0 }
    }

    fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f64, tc: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (tc.beta1 as f32, tc.beta2 as f32);
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        let lr = lr as f32;
        let wd = (lr as f64 * tc.weight_decay) as f32;
        let eps = tc.eps as f32;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            if self.decay[i] {
                params[i] -= wd * params[i];
            }
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Next-token training over `Predict` positions. Calls `on_epoch` after
/// every epoch and returns the per-epoch mean batch loss.
pub fn train(
    model: &mut Model<f32>,
    data: &[Example],
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats, &Model<f32>),
) -> Result<Vec<f64>, LmError> {
    if data.is_empty() {
        return Err(LmError::EmptyDataset);
    }
    if tc.batch == 0 {
        return Err(LmError::InvalidConfig("batch must be positive".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_d409);
    let mut opt = AdamW::new(model);
    let mut grad = vec![0.0f32; model.param_count()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(tc.epochs);
    let mut step = 0usize;
    for epoch in 0..tc.epochs {
        let start = Instant::now();
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tc.batch) {
            let batch: Vec<SeqTargets> = chunk.iter().map(|&i| data[i].targets()).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let (loss, count) = model.loss_and_grad(&batch, Some(&mut drop_rng), &mut grad)?;
            if count == 0 {
                continue;
            }
            if !loss.is_finite() {
                return Err(LmError::DivergenceDetected { step });
            }
            let norm = grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(LmError::DivergenceDetected { step });
            }
            if tc.grad_clip > 0.0 && norm > tc.grad_clip {
                let s = (tc.grad_clip / norm) as f32;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            opt.step(&mut model.params, &grad, tc.lr_at(step), tc);
            step += 1;
            loss_sum += loss;
            batches += 1;
        }
        let mean_loss = if batches == 0 { 0.0 } else { loss_sum / batches as f64 };
        curve.push(mean_loss);
        let stats = EpochStats { epoch: epoch + 1, mean_loss, steps: step, seconds: start.elapsed().as_secs_f64() };
        on_epoch(&stats, model);
    }
    Ok(curve)
}
