//! Per-sample losses on plain slices. Training evaluates the same formulas
//! batched on the autodiff graph; these scalar versions serve inspection
//! and testing.

use crate::numerics::{dot, LOG_CLAMP_PROB};

/// `sum_j -s_j * log f_j`, with `f_j` clamped below at `LOG_CLAMP_PROB`.
pub fn classification_loss(f: &[f64], s: &[f64]) -> f64 {
    f.iter()
        .zip(s)
        .filter(|(_, &sj)| sj != 0.0)
        .map(|(&fj, &sj)| -sj * fj.max(LOG_CLAMP_PROB).ln())
        .sum()
}

/// Contrastive loss of one anchor `q`: the mean over positives of
/// `-log(exp(q.k+/tau) / sum_{k' in pool} exp(q.k'/tau))`. The pool is the
/// anchor's view and includes the positives. No positives gives zero.
pub fn contrastive_loss(q: &[f64], positives: &[&[f64]], pool: &[&[f64]], tau: f64) -> f64 {
    if positives.is_empty() {
        return 0.0;
    }
    let logits: Vec<f64> = pool.iter().map(|k| dot(q, k) / tau).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let pos: f64 = positives.iter().map(|k| dot(q, k) / tau).sum();
    lse - pos / positives.len() as f64
}
