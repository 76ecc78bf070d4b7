//! Pseudo-targets and prototype-driven label disambiguation.

use crate::datagen::{CandidateSet, Dataset};
use crate::networks::argmax;
use crate::numerics::Tensor;

use super::prototypes::PrototypeBank;

/// How pseudo-targets are refreshed from the prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetPolicy {
    /// Moving average toward the one-hot nearest candidate prototype.
    Pico,
    /// Jump straight to the nearest candidate prototype.
    OneHotPrototype,
    /// Softmax of prototype similarities over the candidates.
    SoftPrototypeProbs,
    /// Moving average toward the soft prototype probabilities.
    MaSoftPrototypeProbs,
    /// Keep the uniform distribution over candidates.
    Uniform,
}

impl TargetPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            TargetPolicy::Pico => "pico",
            TargetPolicy::OneHotPrototype => "onehot_prototype",
            TargetPolicy::SoftPrototypeProbs => "soft_prototype",
            TargetPolicy::MaSoftPrototypeProbs => "ma_soft_prototype",
            TargetPolicy::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pico" => TargetPolicy::Pico,
            "onehot_prototype" => TargetPolicy::OneHotPrototype,
            "soft_prototype" => TargetPolicy::SoftPrototypeProbs,
            "ma_soft_prototype" => TargetPolicy::MaSoftPrototypeProbs,
            "uniform" => TargetPolicy::Uniform,
            _ => return None,
        })
    }
}

/// Uniform distribution over the candidates.
pub fn uniform_target(candidates: &CandidateSet, classes: usize) -> Vec<f64> {
    let mut s = vec![0.0; classes];
    let w = 1.0 / candidates.len() as f64;
    for j in candidates.iter() {
        s[j] = w;
    }
    s
}

/// One-hot at the candidate whose prototype is most similar to `q`.
pub fn nearest_prototype_onehot(q: &[f64], bank: &PrototypeBank, candidates: &CandidateSet) -> Vec<f64> {
    let sims = bank.similarities(q);
    let best = crate::networks::predict_within(&sims, candidates);
    let mut z = vec![0.0; bank.classes()];
    z[best] = 1.0;
    z
}

/// Softmax of `q . mu_j / tau` over the candidates, zero elsewhere.
pub fn soft_prototype_probs(
    q: &[f64],
    bank: &PrototypeBank,
    candidates: &CandidateSet,
    tau: f64,
) -> Vec<f64> {
    let sims = bank.similarities(q);
    let max = candidates
        .iter()
        .map(|j| sims[j] / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut s = vec![0.0; bank.classes()];
    let mut total = 0.0;
    for j in candidates.iter() {
        let e = (sims[j] / tau - max).exp();
        s[j] = e;
        total += e;
    }
    s.iter_mut().for_each(|v| *v /= total);
    s
}

/// Refreshes one pseudo-target according to `policy`.
pub fn disambiguate(
    s: &[f64],
    q: &[f64],
    bank: &PrototypeBank,
    candidates: &CandidateSet,
    phi: f64,
    tau: f64,
    policy: TargetPolicy,
) -> Vec<f64> {
    let mix = |target: Vec<f64>| -> Vec<f64> {
        s.iter()
            .zip(&target)
            .map(|(a, b)| phi * a + (1.0 - phi) * b)
            .collect()
    };
    match policy {
        TargetPolicy::Pico => mix(nearest_prototype_onehot(q, bank, candidates)),
        TargetPolicy::OneHotPrototype => nearest_prototype_onehot(q, bank, candidates),
        TargetPolicy::SoftPrototypeProbs => soft_prototype_probs(q, bank, candidates, tau),
        TargetPolicy::MaSoftPrototypeProbs => mix(soft_prototype_probs(q, bank, candidates, tau)),
        TargetPolicy::Uniform => uniform_target(candidates, bank.classes()),
    }
}

/// Per-example pseudo-targets, one simplex row per training example.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoTargets {
    rows: Tensor,
}

impl PseudoTargets {
    pub fn uniform(data: &Dataset) -> Self {
        let c = data.classes;
        let mut rows = Tensor::zeros(&[data.len(), c]);
        for (i, e) in data.examples.iter().enumerate() {
            rows.row_mut(i).copy_from_slice(&uniform_target(&e.candidates, c));
        }
        PseudoTargets { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn set(&mut self, i: usize, s: &[f64]) {
        self.rows.row_mut(i).copy_from_slice(s);
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.rows
    }

    /// Fraction of examples whose pseudo-target argmax is the hidden truth.
    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .examples
            .iter()
            .enumerate()
            .filter(|(i, e)| argmax(self.get(*i)) == e.hidden_true_label)
            .count();
        hits as f64 / data.len() as f64
    }

    /// Mean over examples of `max_j s_j`.
    pub fn mean_max_confidence(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let total: f64 = (0..self.len())
            .map(|i| self.get(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .sum();
        total / self.len() as f64
    }
}
