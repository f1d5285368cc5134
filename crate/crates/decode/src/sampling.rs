use rand::Rng;

use crate::{DecodeError, DecodeParams};

/// Draws the next id from `logits` with the full policy: repetition
/// penalty, temperature, top-k, then top-p.
///
/// Ids at or above `special_base` are control tokens and never penalized.
pub fn sample_next<R: Rng + ?Sized>(logits: &[f32], params: &DecodeParams, history: &[u32], special_base: u32, rng: &mut R) -> u32 {
    sample_masked(logits, params, history, special_base, |_| true, rng).expect("unmasked sampling always has a candidate")
}

/// [`sample_next`] restricted to ids for which `allowed` holds.
pub fn sample_masked<R: Rng + ?Sized>(
    logits: &[f32],
    params: &DecodeParams,
    history: &[u32],
    special_base: u32,
    allowed: impl Fn(u32) -> bool,
    rng: &mut R,
) -> Result<u32, DecodeError> {
    let mut seen = vec![false; logits.len()];
    for &id in history {
        if id < special_base && (id as usize) < seen.len() {
            seen[id as usize] = true;
        }
    }
    let mut cand: Vec<(u32, f64)> = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i as u32))
        .map(|(i, &l)| {
            let mut l = l as f64;
            if seen[i] {
                l = if l > 0.0 { l / params.repetition_penalty } else { l * params.repetition_penalty };
            }
            (i as u32, l / params.temperature)
        })
        .collect();
    if cand.is_empty() {
        return Err(DecodeError::NoAllowedToken);
    }
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cand.truncate(params.top_k);

    let max = cand[0].1;
    let weights: Vec<f64> = cand.iter().map(|&(_, l)| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut keep = 0;
    let mut cum = 0.0;
    for w in &weights {
        cum += w / total;
        keep += 1;
        if cum >= params.top_p {
            break;
        }
    }
    let kept = &weights[..keep];
    let mass: f64 = kept.iter().sum();
    let mut u = rng.gen::<f64>() * mass;
    for (i, &w) in kept.iter().enumerate() {
        if u < w {
            return Ok(cand[i].0);
        }
        u -= w;
    }
    Ok(cand[keep - 1].0)
}

/// Zero-based rank of `id` among `logits` (0 = largest).
pub fn logit_rank(logits: &[f32], id: u32) -> usize {
    let v = logits[id as usize];
    logits.iter().enumerate().filter(|&(i, &l)| l > v || (l == v && (i as u32) < id)).count()
}
