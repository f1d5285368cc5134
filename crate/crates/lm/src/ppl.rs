use crate::data::Example;
use crate::float::Float;
use crate::model::{softmax_in_place, Model, SeqInput};
use crate::LmError;

/// Mean after discarding the largest `floor(n·trim)` values.
pub fn trimmed_mean(values: &[f64], trim: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let drop = (v.len() as f64 * trim).floor() as usize;
    let kept = &v[..v.len() - drop.min(v.len() - 1)];
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Per-example perplexity over predicted text tokens (ids below
/// `text_limit`); `None` when the example has none.
pub fn example_perplexities<T: Float>(model: &Model<T>, data: &[Example], text_limit: u32) -> Result<Vec<Option<f64>>, LmError> {
    let v = model.config.vocab_size;
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(16) {
        let inputs: Vec<SeqInput> = chunk.iter().map(Example::input).collect();
        let mut logits = model.forward_batch(&inputs)?;
        let mut row0 = 0;
        for ex in chunk {
            let mut nll = 0.0;
            let mut n = 0usize;
            for t in 1..ex.ids.len() {
                let y = ex.ids[t];
                if !ex.predict[t] || y >= text_limit {
                    continue;
                }
                let row = &mut logits[(row0 + t - 1) * v..(row0 + t) * v];
                softmax_in_place(row);
                nll -= row[y as usize].to_f64().unwrap().max(f64::MIN_POSITIVE).ln();
                n += 1;
            }
            out.push((n > 0).then(|| (nll / n as f64).exp()));
            row0 += ex.ids.len();
        }
    }
    Ok(out)
}

/// Trimmed mean (top 1% discarded) of per-example perplexities.
pub fn perplexity_eval<T: Float>(model: &Model<T>, data: &[Example], text_limit: u32) -> Result<f64, LmError> {
    let ppls: Vec<f64> = example_perplexities(model, data, text_limit)?.into_iter().flatten().collect();
    trimmed_mean(&ppls, 0.01).ok_or(LmError::EmptyEval)
}
