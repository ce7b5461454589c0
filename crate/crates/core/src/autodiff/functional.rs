//! Plain-vector helpers shared by the tape and by callers that only need
//! values.

use crate::error::{Error, Result};

const BCE_CLAMP: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax over the first `valid` logits; the remaining entries are exactly 0.
pub fn masked_softmax(logits: &[f64], valid: usize) -> Result<Vec<f64>> {
    if valid == 0 || valid > logits.len() {
        return Err(Error::Contract(format!(
            "masked softmax with {valid} valid of {} logits",
            logits.len()
        )));
    }
    let active = &logits[..valid];
    let max = active.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = active.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs.resize(logits.len(), 0.0);
    Ok(probs)
}

/// Binary cross-entropy of a probability `score` against a 0/1 label. Scores
/// on the boundary are pulled `1e-12` inside.
pub fn bce_loss(score: f64, label: bool) -> f64 {
    let clamped = score.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    if clamped != score {
        log::warn!("bce_loss: score {score} clamped to {clamped}");
    }
    if label {
        -clamped.ln()
    } else {
        -(1.0 - clamped).ln()
    }
}
