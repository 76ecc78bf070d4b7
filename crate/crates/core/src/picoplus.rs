//! Robust training when the true label may be missing from the candidates.
//!
//! At the start of every epoch the examples whose embedding sits closest to
//! their predicted prototype are declared clean and trained exactly as in
//! [`crate::pico`]. The rest contribute through unrestricted-label
//! contrastive positives, nearest-neighbor positives, prototype-guessed
//! soft labels and mixup.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::datagen::Dataset;
use crate::error::{PllError, Result};
use crate::networks::predict_within;
use crate::numerics::{dot, Tensor};
use crate::pico::{
    classification_loss, embed_dataset, run_epoch, CleanStats, EpochReport, LoopConfig,
    PicoConfig, PlusBatch, PrototypeBank, TrainState,
};

/// How clean examples are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CleanSelection {
    /// Similarity between the embedding and its predicted-class prototype.
    Distance,
    /// Lowest cross-entropy against the current pseudo-target.
    SmallLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicoPlusConfig {
    /// Fraction of examples selected as clean.
    pub delta: f64,
    /// Neighbors used as positives for noisy anchors.
    pub k: usize,
    /// Shape of the symmetric Beta distribution for mixup coefficients.
    pub beta_shape: f64,
    pub alpha: f64,
    pub beta: f64,
    pub warmup_epochs: usize,
    pub knn_enable_epoch: usize,
    pub mixup: bool,
    pub selection: CleanSelection,
}

impl Default for PicoPlusConfig {
    fn default() -> Self {
        PicoPlusConfig {
            delta: 0.8,
            k: 5,
            beta_shape: 4.0,
            alpha: 2.0,
            beta: 0.1,
            warmup_epochs: 5,
            knn_enable_epoch: 10,
            mixup: true,
            selection: CleanSelection::Distance,
        }
    }
}

impl PicoPlusConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            out.push(format!("delta must lie in (0, 1], got {}", self.delta));
        }
        if self.k == 0 {
            out.push("k must be >= 1".to_string());
        }
        if !(self.beta_shape > 0.0) {
            out.push(format!("beta_shape must be > 0, got {}", self.beta_shape));
        }
        if !(self.alpha >= 0.0) {
            out.push(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0) {
            out.push(format!("beta must be >= 0, got {}", self.beta));
        }
        out
    }
}

/// Partition of the training set into clean and noisy examples.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanSplit {
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
    /// Scores strictly above this value are clean.
    pub threshold: f64,
}

impl CleanSplit {
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.clean {
            m[i] = true;
        }
        m
    }

    /// Fraction selected, precision and recall with respect to "true label
    /// is among the candidates".
    pub fn stats(&self, data: &Dataset) -> CleanStats {
        let n = data.len().max(1) as f64;
        let genuine = data.examples.iter().filter(|e| e.truth_in_candidates()).count();
        let hits = self
            .clean
            .iter()
            .filter(|&&i| data.examples[i].truth_in_candidates())
            .count();
        CleanStats {
            fraction: self.clean.len() as f64 / n,
            precision: if self.clean.is_empty() {
                0.0
            } else {
                hits as f64 / self.clean.len() as f64
            },
            recall: if genuine == 0 {
                0.0
            } else {
                hits as f64 / genuine as f64
            },
        }
    }
}

/// Keeps the examples whose score exceeds the `(1 - delta)` quantile.
/// With `m = n - round(delta * n)` the threshold is the `m`-th smallest
/// score, so exactly `round(delta * n)` examples are clean absent ties.
pub fn select_clean(scores: &[f64], delta: f64) -> Result<CleanSplit> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(PllError::InvalidArgument(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(PllError::NonFinite("clean-selection score".into()));
    }
    let n = scores.len();
    let keep = (delta * n as f64).round() as usize;
    let m = n - keep.min(n);
    let threshold = if m == 0 {
        f64::NEG_INFINITY
    } else {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted[m - 1]
    };
    let (clean, noisy) = (0..n).partition(|&i| scores[i] > threshold);
    Ok(CleanSplit {
        clean,
        noisy,
        threshold,
    })
}

/// Per-example cleanliness scores from an unaugmented pass: higher means
/// more likely clean.
pub fn clean_scores(
    st: &TrainState,
    data: &Dataset,
    selection: CleanSelection,
) -> Result<Vec<f64>> {
    let (emb, probs) = embed_dataset(&st.model, data)?;
    Ok(data
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| match selection {
            CleanSelection::Distance => {
                let label = predict_within(probs.row(i), &e.candidates);
                dot(emb.row(i), st.bank.get(label))
            }
            CleanSelection::SmallLoss => -classification_loss(probs.row(i), st.targets.get(i)),
        })
        .collect())
}

/// Softmax of `q . mu_j / tau` over all classes.
pub fn guess_labels(q: &[f64], bank: &PrototypeBank, tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = bank.similarities(q).iter().map(|s| s / tau).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Partner permutation and one Beta(shape, shape) coefficient per pair.
pub fn draw_mixup<R: Rng + ?Sized>(
    b: usize,
    shape: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let dist = Beta::new(shape, shape)
        .map_err(|e| PllError::InvalidArgument(format!("mixup Beta({shape}, {shape}): {e}")))?;
    let mut perm: Vec<usize> = (0..b).collect();
    perm.shuffle(rng);
    let sigmas = (0..b).map(|_| dist.sample(rng)).collect();
    Ok((perm, sigmas))
}

/// Row `r` of the result is `sigma_r * row_r + (1 - sigma_r) * row_{perm[r]}`
/// for both inputs and targets.
pub fn mixup_batch(
    x: &Tensor,
    targets: &Tensor,
    perm: &[usize],
    sigmas: &[f64],
) -> Result<(Tensor, Tensor)> {
    let b = x.rows();
    if targets.rows() != b || perm.len() != b || sigmas.len() != b || perm.iter().any(|&p| p >= b) {
        return Err(PllError::Shape(format!(
            "mixup: {b} inputs, {} targets, {} partners, {} coefficients",
            targets.rows(),
            perm.len(),
            sigmas.len()
        )));
    }
    let mix = |t: &Tensor| {
        let mut out = Tensor::zeros(t.shape());
        for r in 0..b {
            let (s, p) = (sigmas[r], perm[r]);
            for ((o, a), c) in out.row_mut(r).iter_mut().zip(t.row(r)).zip(t.row(p)) {
                *o = s * a + (1.0 - s) * c;
            }
        }
        out
    };
    Ok((mix(x), mix(targets)))
}

/// One PiCO+ epoch. Before `warmup_epochs` this is a plain warm-up epoch
/// on uniform targets.
pub fn picoplus_epoch(
    st: &mut TrainState,
    data: &Dataset,
    pico: &PicoConfig,
    plus: &PicoPlusConfig,
    lcfg: &LoopConfig,
    epoch: usize,
) -> Result<EpochReport> {
    if epoch < plus.warmup_epochs {
        let (losses, lr, phi) = run_epoch(st, data, pico, lcfg, epoch, true, None)?;
        return Ok(EpochReport {
            epoch,
            lr,
            phi,
            losses,
            pseudo_accuracy: st.targets.accuracy(data),
            mmc: st.targets.mean_max_confidence(),
            clean: None,
        });
    }
    let split = select_clean(&clean_scores(st, data, plus.selection)?, plus.delta)?;
    let mask = split.mask(data.len());
    let batch = PlusBatch {
        cfg: plus,
        clean: &mask,
        knn_active: epoch >= plus.knn_enable_epoch,
    };
    let (losses, lr, phi) = run_epoch(st, data, pico, lcfg, epoch, false, Some(batch))?;
    Ok(EpochReport {
        epoch,
        lr,
        phi,
        losses,
        pseudo_accuracy: st.targets.accuracy(data),
        mmc: st.targets.mean_max_confidence(),
        clean: Some(split.stats(data)),
    })
}
