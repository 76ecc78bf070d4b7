//! Checks on the clustering view of contrastive alignment.
//!
//! For unit embeddings grouped by predicted label, the summed pairwise
//! distance inside each cluster, the summed distance to the cluster mean and
//! `sum_j n_j (1 - |mu_j|^2)` are the same quantity. The module computes all
//! three, the two size-weighted mean-norm statistics `R1` and `R2`,
//! von Mises-Fisher concentration approximations, E-step posteriors and the
//! parameter-dependent part of the mixture log-likelihood.

mod verify;

pub use verify::{run_verification, CheckResult, Fault, VerifyOptions, VerifyReport};

use crate::datagen::CandidateSet;
use crate::error::{PllError, Result};
use crate::networks::predict_within;
use crate::numerics::{dot, norm};

/// Tolerance on `|g(x)| = 1` for inputs to the alignment computations.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Unit embeddings partitioned by label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    embeddings: Vec<Vec<f64>>,
    labels: Vec<usize>,
    clusters: usize,
}

impl ClusterAssignment {
    pub fn new(embeddings: Vec<Vec<f64>>, labels: Vec<usize>, clusters: usize) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(PllError::Shape(format!(
                "{} embeddings but {} labels",
                embeddings.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= clusters) {
            return Err(PllError::InvalidArgument(format!(
                "label {l} out of range for {clusters} clusters"
            )));
        }
        if let Some(d) = embeddings.first().map(Vec::len) {
            if embeddings.iter().any(|e| e.len() != d) {
                return Err(PllError::Shape("embeddings differ in width".into()));
            }
        }
        Ok(ClusterAssignment {
            embeddings,
            labels,
            clusters,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.clusters];
        for &l in &self.labels {
            n[l] += 1;
        }
        n
    }

    pub fn members(&self, j: usize) -> impl Iterator<Item = &[f64]> + '_ {
        self.labels
            .iter()
            .zip(&self.embeddings)
            .filter(move |(&l, _)| l == j)
            .map(|(_, e)| e.as_slice())
    }

    /// Euclidean mean of each cluster; zero for empty clusters.
    pub fn means(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let sizes = self.sizes();
        let mut mu = vec![vec![0.0; d]; self.clusters];
        for (l, e) in self.labels.iter().zip(&self.embeddings) {
            mu[*l].iter_mut().zip(e).for_each(|(m, v)| *m += v);
        }
        for (m, &n) in mu.iter_mut().zip(&sizes) {
            if n > 0 {
                m.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        mu
    }

    /// Mean direction of each cluster; `None` when the mean vanishes.
    pub fn directions(&self) -> Vec<Option<Vec<f64>>> {
        self.means()
            .into_iter()
            .map(|m| {
                let n = norm(&m);
                (n > 0.0).then(|| m.iter().map(|v| v / n).collect())
            })
            .collect()
    }

    fn ensure_unit(&self) -> Result<()> {
        for (i, e) in self.embeddings.iter().enumerate() {
            let n = norm(e);
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(PllError::DegenerateEmbedding { row: i, norm: n });
            }
        }
        Ok(())
    }
}

/// The alignment term evaluated three ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    /// `sum_j (1 / (2 n_j)) sum_{x, x' in S_j} |g(x) - g(x')|^2`
    pub pairwise: f64,
    /// `sum_j sum_{x in S_j} |g(x) - mu_j|^2`
    pub centered: f64,
    /// `sum_j n_j (1 - |mu_j|^2)`
    pub closed_form: f64,
}

impl Alignment {
    /// Largest disagreement between the three forms.
    pub fn spread(&self) -> f64 {
        let v = [self.pairwise, self.centered, self.closed_form];
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

pub fn alignment_two_ways(a: &ClusterAssignment) -> Result<Alignment> {
    a.ensure_unit()?;
    let sizes = a.sizes();
    let means = a.means();
    let mut out = Alignment {
        pairwise: 0.0,
        centered: 0.0,
        closed_form: 0.0,
    };
    for j in 0..a.clusters() {
        let nj = sizes[j];
        if nj == 0 {
            continue;
        }
        let members: Vec<&[f64]> = a.members(j).collect();
        let mut pair = 0.0;
        for x in &members {
            for y in &members {
                pair += x.iter().zip(*y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
            }
        }
        out.pairwise += pair / (2.0 * nj as f64);
        out.centered += members
            .iter()
            .map(|x| x.iter().zip(&means[j]).map(|(u, m)| (u - m) * (u - m)).sum::<f64>())
            .sum::<f64>();
        out.closed_form += nj as f64 * (1.0 - dot(&means[j], &means[j]));
    }
    Ok(out)
}

/// Pairwise form normalized by `n_j - 1` instead of `n_j`, which is what
/// the contrastive loss sees when self-pairs are excluded. Singleton
/// clusters contribute nothing.
pub fn pairwise_without_self(a: &ClusterAssignment) -> f64 {
    let sizes = a.sizes();
    (0..a.clusters())
        .filter(|&j| sizes[j] > 1)
        .map(|j| {
            let members: Vec<&[f64]> = a.members(j).collect();
            let mut pair = 0.0;
            for x in &members {
                for y in &members {
                    pair += x.iter().zip(*y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
                }
            }
            pair / (2.0 * (sizes[j] - 1) as f64)
        })
        .sum()
}

/// `R1 = sum_j (n_j / n) |mu_j|^2` and `R2 = sum_j (n_j / n) |mu_j|`.
pub fn r1_r2(a: &ClusterAssignment) -> (f64, f64) {
    let n = a.len().max(1) as f64;
    let sizes = a.sizes();
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    for (m, &nj) in a.means().iter().zip(&sizes) {
        let w = nj as f64 / n;
        let len = norm(m);
        r1 += w * len * len;
        r2 += w * len;
    }
    (r1, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaRegime {
    Large,
    Small,
}

/// Approximate vMF concentration from the mean resultant length.
pub fn vmf_kappa(mu_norm: f64, d: usize, regime: KappaRegime) -> Result<f64> {
    if !(0.0..=1.0).contains(&mu_norm) || d == 0 {
        return Err(PllError::InvalidArgument(format!(
            "vmf_kappa: |mu|={mu_norm}, d={d}"
        )));
    }
    let d = d as f64;
    match regime {
        KappaRegime::Large => {
            if mu_norm >= 1.0 {
                return Err(PllError::InvalidArgument(
                    "concentration diverges at |mu| = 1".into(),
                ));
            }
            Ok((d - 1.0) / (2.0 * (1.0 - mu_norm)))
        }
        KappaRegime::Small => {
            let r2 = mu_norm * mu_norm;
            let c1 = d / (d + 2.0);
            let c2 = d * d * (d + 8.0) / ((d + 2.0) * (d + 2.0) * (d + 4.0));
            Ok(d * mu_norm * (1.0 + c1 * r2 + c2 * r2 * r2))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorForm {
    Soft,
    Hard,
}

/// Class posterior restricted to the candidates. The soft form renormalizes
/// `f` over `Y` (uniform if it has no mass there); the hard form is one-hot
/// at the within-candidate argmax.
pub fn em_posterior(f: &[f64], candidates: &CandidateSet, form: PosteriorForm) -> Result<Vec<f64>> {
    if candidates.is_empty() || candidates.max_label().is_some_and(|m| m >= f.len()) {
        return Err(PllError::InvalidArgument(
            "candidate set empty or wider than the distribution".into(),
        ));
    }
    let mut pi = vec![0.0; f.len()];
    match form {
        PosteriorForm::Hard => pi[predict_within(f, candidates)] = 1.0,
        PosteriorForm::Soft => {
            let mass: f64 = candidates.iter().map(|j| f[j]).sum();
            for j in candidates.iter() {
                pi[j] = if mass > 0.0 {
                    f[j] / mass
                } else {
                    1.0 / candidates.len() as f64
                };
            }
        }
    }
    Ok(pi)
}

/// `kappa * (1/n) sum_i sum_y pi_i^y mu_bar_y . g(x_i)`, the part of the
/// average mixture log-likelihood that depends on the embeddings. The
/// normalizer `log c_d(kappa)` and the candidate-set term are constant at
/// fixed `kappa` and dropped. Clusters whose mean vanishes have no
/// direction and contribute zero.
pub fn expected_log_likelihood(
    embeddings: &[Vec<f64>],
    posteriors: &[Vec<f64>],
    directions: &[Option<Vec<f64>>],
    kappa: f64,
) -> Result<f64> {
    if embeddings.len() != posteriors.len() {
        return Err(PllError::Shape("one posterior per embedding required".into()));
    }
    let n = embeddings.len().max(1) as f64;
    let mut total = 0.0;
    for (g, pi) in embeddings.iter().zip(posteriors) {
        for (y, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            if let Some(Some(dir)) = directions.get(y) {
                total += p * dot(dir, g);
            }
        }
    }
    Ok(kappa * total / n)
}

/// The likelihood above under the assignment's own hard labels and mean
/// directions. Equals `kappa * R2`.
pub fn brute_force_log_likelihood(a: &ClusterAssignment, kappa: f64) -> Result<f64> {
    let posteriors: Vec<Vec<f64>> = a
        .labels()
        .iter()
        .map(|&l| {
            let mut p = vec![0.0; a.clusters()];
            p[l] = 1.0;
            p
        })
        .collect();
    expected_log_likelihood(a.embeddings(), &posteriors, &a.directions(), kappa)
}
