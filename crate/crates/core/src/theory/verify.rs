use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::datagen::CandidateSet;
use crate::networks::predict_within;
use crate::numerics::norm;

use super::{
    alignment_two_ways, brute_force_log_likelihood, em_posterior, pairwise_without_self, r1_r2,
    vmf_kappa, ClusterAssignment, KappaRegime, PosteriorForm,
};

/// Deliberate corruption used to confirm the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scale one embedding of every alignment instance by 1.01.
    PerturbEmbeddingNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub instances: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            instances: 1000,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<28} residual={:.3e} tol={:.1e}  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.residual,
                c.tolerance,
                c.detail
            )?;
        }
        Ok(())
    }
}

fn check(name: &str, residual: f64, tolerance: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: residual <= tolerance,
        residual,
        tolerance,
        detail,
    }
}

fn unit_vector<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random unit embeddings with random labels; `n <= 100`, `d <= 16`.
fn random_assignment<R: Rng>(rng: &mut R) -> ClusterAssignment {
    let n = rng.gen_range(1..=100);
    let d = rng.gen_range(1..=16);
    let c = rng.gen_range(1..=6);
    let embeddings = (0..n).map(|_| unit_vector(d, rng)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..c)).collect();
    ClusterAssignment::new(embeddings, labels, c).expect("consistent instance")
}

/// Embeddings concentrated around `c` random directions, noise level `s`.
fn clustered_assignment<R: Rng>(c: usize, per: usize, d: usize, s: f64, rng: &mut R) -> ClusterAssignment {
    let centers: Vec<Vec<f64>> = (0..c).map(|_| unit_vector(d, rng)).collect();
    let mut embeddings = Vec::new();
    let mut labels = Vec::new();
    for (j, ctr) in centers.iter().enumerate() {
        for _ in 0..per {
            let v: Vec<f64> = ctr
                .iter()
                .map(|m| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let n = norm(&v);
            embeddings.push(v.into_iter().map(|x| x / n).collect());
            labels.push(j);
        }
    }
    ClusterAssignment::new(embeddings, labels, c).expect("consistent instance")
}

/// Runs every property suite.
pub fn run_verification(opts: &VerifyOptions) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();

    // alignment identity
    let mut worst = 0.0f64;
    let mut failure = None;
    let mut gap = 0.0f64;
    for _ in 0..opts.instances {
        let mut a = random_assignment(&mut rng);
        if opts.fault == Some(Fault::PerturbEmbeddingNorm) {
            let mut emb = a.embeddings().to_vec();
            emb[0].iter_mut().for_each(|v| *v *= 1.01);
            a = ClusterAssignment::new(emb, a.labels().to_vec(), a.clusters()).expect("same shape");
        }
        match alignment_two_ways(&a) {
            Ok(al) => {
                worst = worst.max(al.spread());
                gap = gap.max((pairwise_without_self(&a) - al.centered).abs());
            }
            Err(e) => {
                failure.get_or_insert(e.to_string());
                worst = f64::INFINITY;
            }
        }
    }
    checks.push(check(
        "alignment_identity",
        worst,
        1e-10,
        failure.unwrap_or_else(|| format!("{} instances", opts.instances)),
    ));
    checks.push(CheckResult {
        name: "self_pair_approximation_gap".into(),
        passed: true,
        residual: gap,
        tolerance: f64::INFINITY,
        detail: "max |pairwise over n_j-1 - centered|, reported only".into(),
    });

    // R bounds
    let mut violation = 0.0f64;
    let mut equality_breach = 0.0f64;
    for _ in 0..opts.instances {
        let a = random_assignment(&mut rng);
        let (r1, r2) = r1_r2(&a);
        violation = violation
            .max(r2 * r2 - r1)
            .max(r1 - r2)
            .max(r2 - 1.0);
        if (r2 - r1).abs() < 1e-12 {
            for m in a.means() {
                let l = norm(&m);
                equality_breach = equality_breach.max(l * (1.0 - l) - 1e-6);
            }
        }
    }
    checks.push(check(
        "r_bounds",
        violation.max(equality_breach).max(0.0),
        1e-12,
        "R2^2 <= R1 <= R2 <= 1".into(),
    ));

    let h = 3f64.sqrt() / 2.0;
    let example = ClusterAssignment::new(
        vec![vec![1.0, 0.0], vec![-0.5, h], vec![0.0, 1.0], vec![0.0, 1.0]],
        vec![0, 0, 1, 1],
        2,
    )
    .expect("fixed instance");
    let (r1, r2) = r1_r2(&example);
    checks.push(check(
        "r_worked_example",
        (r1 - 0.625).abs().max((r2 - 0.75).abs()),
        1e-12,
        format!("R1={r1} R2={r2}"),
    ));

    // covariance is affine in R1
    let mut affine = 0.0f64;
    for _ in 0..100 {
        let a = random_assignment(&mut rng);
        if let Ok(al) = alignment_two_ways(&a) {
            let (r1, _) = r1_r2(&a);
            affine = affine.max((al.closed_form - a.len() as f64 * (1.0 - r1)).abs());
        }
    }
    checks.push(check(
        "covariance_affine_in_r1",
        affine,
        1e-9,
        "sum n_j(1-|mu_j|^2) = n(1-R1)".into(),
    ));

    // concentration approximations
    let large = vmf_kappa(0.9, 3, KappaRegime::Large).unwrap_or(f64::NAN);
    let small0 = vmf_kappa(0.0, 3, KappaRegime::Small).unwrap_or(f64::NAN);
    let mut monotone = 0.0f64;
    for regime in [KappaRegime::Large, KappaRegime::Small] {
        for d in [2, 3, 16, 128] {
            let grid: Vec<f64> = (0..100)
                .map(|i| vmf_kappa(i as f64 / 100.0, d, regime).unwrap_or(f64::NAN))
                .collect();
            for w in grid.windows(2) {
                if !(w[1] > w[0]) {
                    monotone = f64::INFINITY;
                }
            }
        }
    }
    checks.push(check(
        "kappa_approximations",
        (large - 10.0).abs().max(small0.abs()).max(monotone),
        1e-12,
        format!("large(0.9, d=3)={large}, small(0)={small0}, increasing on grid"),
    ));

    // E-step posterior
    let mut post = 0.0f64;
    let y = CandidateSet::from_labels([1, 2]);
    match em_posterior(&[0.6, 0.3, 0.1], &y, PosteriorForm::Soft) {
        Ok(p) => post = post.max((p[1] - 0.75).abs()).max((p[2] - 0.25).abs()).max(p[0]),
        Err(_) => post = f64::INFINITY,
    }
    for _ in 0..100 {
        let c = rng.gen_range(2..=8);
        let raw: Vec<f64> = (0..c).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let f: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let mut cand = CandidateSet::empty();
        while cand.is_empty() {
            for j in 0..c {
                if rng.gen_bool(0.5) {
                    cand.insert(j);
                }
            }
        }
        let hard = em_posterior(&f, &cand, PosteriorForm::Hard).unwrap_or_default();
        let expect = predict_within(&f, &cand);
        if hard.get(expect) != Some(&1.0) || hard.iter().sum::<f64>() != 1.0 {
            post = f64::INFINITY;
        }
        let soft = em_posterior(&f, &cand, PosteriorForm::Soft).unwrap_or_default();
        post = post.max((soft.iter().sum::<f64>() - 1.0).abs());
        if (0..c).any(|j| !cand.contains(j) && soft[j] != 0.0) {
            post = f64::INFINITY;
        }
        // one-hot inside Y: both forms coincide
        let mut onehot = vec![0.0; c];
        onehot[expect] = 1.0;
        let s1 = em_posterior(&onehot, &cand, PosteriorForm::Soft).unwrap_or_default();
        let h1 = em_posterior(&onehot, &cand, PosteriorForm::Hard).unwrap_or_default();
        if s1 != h1 {
            post = f64::INFINITY;
        }
    }
    checks.push(check(
        "em_posterior",
        post,
        1e-12,
        "soft renormalization, hard = within-set argmax".into(),
    ));

    // likelihood and R2
    let mut ll_res = 0.0f64;
    for _ in 0..20 {
        let base = clustered_assignment(3, 10, 8, 0.5, &mut rng);
        let mut shuffled = base.labels().to_vec();
        let k = rng.gen_range(1..=15);
        let mut idx: Vec<usize> = (0..shuffled.len()).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(k) {
            shuffled[i] = rng.gen_range(0..3);
        }
        let alt = ClusterAssignment::new(base.embeddings().to_vec(), shuffled, 3).expect("same shape");
        let kappa = 4.0;
        let (ll_a, ll_b) = (
            brute_force_log_likelihood(&base, kappa).unwrap_or(f64::NAN),
            brute_force_log_likelihood(&alt, kappa).unwrap_or(f64::NAN),
        );
        let (r_a, r_b) = (r1_r2(&base).1, r1_r2(&alt).1);
        ll_res = ll_res.max((ll_a - kappa * r_a).abs()).max((ll_b - kappa * r_b).abs());
        if (ll_a > ll_b) != (r_a > r_b) && (r_a - r_b).abs() > 1e-12 {
            ll_res = f64::INFINITY;
        }
    }
    let single = ClusterAssignment::new(vec![vec![0.0, 1.0, 0.0]; 5], vec![0; 5], 1).expect("fixed");
    ll_res = ll_res.max((brute_force_log_likelihood(&single, 3.0).unwrap_or(f64::NAN) - 3.0).abs());
    let mut prev = f64::INFINITY;
    for s in [0.05, 0.2, 0.5, 1.0, 2.0] {
        let mut sweep_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xfeed);
        let r2 = r1_r2(&clustered_assignment(3, 40, 8, s, &mut sweep_rng)).1;
        if !(r2 < prev) {
            ll_res = f64::INFINITY;
        }
        prev = r2;
    }
    checks.push(check(
        "likelihood_tracks_r2",
        ll_res,
        1e-10,
        "relabeling argmax, identical cluster, noise sweep".into(),
    ));

    VerifyReport { checks }
}
