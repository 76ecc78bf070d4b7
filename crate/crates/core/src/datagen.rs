//! Synthetic feature-vector datasets and their partial-label corruptions.
//!
//! Clean data comes from isotropic Gaussian blobs around class means on the
//! unit sphere. Candidate sets are then produced by flipping negative labels
//! (uniformly, through a per-class inclusion matrix, or within superclasses),
//! and noisy partial labels drop the true label with probability `eta`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PllError, Result};

/// Largest class count a [`CandidateSet`] can hold.
pub const MAX_CLASSES: usize = 128;

/// Regeneration attempts for an empty noisy candidate set.
pub const MAX_REGENERATIONS: usize = 1000;

/// Set of class indices below [`MAX_CLASSES`], stored as a bitmask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CandidateSet(u128);

impl CandidateSet {
    pub fn empty() -> Self {
        CandidateSet(0)
    }

    pub fn singleton(label: usize) -> Self {
        let mut s = Self::empty();
        s.insert(label);
        s
    }

    pub fn full(classes: usize) -> Self {
        assert!(classes <= MAX_CLASSES);
        if classes == MAX_CLASSES {
            CandidateSet(u128::MAX)
        } else {
            CandidateSet((1u128 << classes) - 1)
        }
    }

    pub fn from_labels<I: IntoIterator<Item = usize>>(labels: I) -> Self {
        let mut s = Self::empty();
        for l in labels {
            s.insert(l);
        }
        s
    }

    pub fn insert(&mut self, label: usize) {
        assert!(label < MAX_CLASSES, "label {label} out of range");
        self.0 |= 1u128 << label;
    }

    pub fn remove(&mut self, label: usize) {
        if label < MAX_CLASSES {
            self.0 &= !(1u128 << label);
        }
    }

    pub fn contains(&self, label: usize) -> bool {
        label < MAX_CLASSES && self.0 & (1u128 << label) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    /// Members in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let bits = self.0;
        (0..MAX_CLASSES).filter(move |&j| bits & (1u128 << j) != 0)
    }

    pub fn max_label(&self) -> Option<usize> {
        (self.0 != 0).then(|| 127 - self.0.leading_zeros() as usize)
    }

    /// `|A ∩ B| / |A ∪ B|`, zero when both are empty.
    pub fn jaccard(&self, other: &CandidateSet) -> f64 {
        let union = (self.0 | other.0).count_ones();
        if union == 0 {
            return 0.0;
        }
        (self.0 & other.0).count_ones() as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub true_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialExample {
    pub features: Vec<f64>,
    pub candidates: CandidateSet,
    /// Ground truth, consulted only by evaluation code.
    pub hidden_true_label: usize,
}

impl PartialExample {
    pub fn truth_in_candidates(&self) -> bool {
        self.candidates.contains(self.hidden_true_label)
    }
}

/// A partial-label dataset together with its dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub dim: usize,
    pub examples: Vec<PartialExample>,
}

impl Dataset {
    pub fn new(classes: usize, dim: usize, examples: Vec<PartialExample>) -> Result<Self> {
        if classes == 0 || classes > MAX_CLASSES {
            return Err(PllError::InvalidArgument(format!(
                "class count {classes} outside 1..={MAX_CLASSES}"
            )));
        }
        for (i, e) in examples.iter().enumerate() {
            if e.features.len() != dim {
                return Err(PllError::Shape(format!(
                    "example {i} has {} features, expected {dim}",
                    e.features.len()
                )));
            }
            if e.candidates.is_empty() || e.candidates.max_label().unwrap_or(0) >= classes {
                return Err(PllError::InvalidArgument(format!(
                    "example {i} has an invalid candidate set"
                )));
            }
            if e.hidden_true_label >= classes {
                return Err(PllError::InvalidArgument(format!(
                    "example {i} has true label {} >= {classes}",
                    e.hidden_true_label
                )));
            }
        }
        Ok(Dataset {
            classes,
            dim,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Wraps clean labeled data as singleton candidate sets.
    pub fn supervised(classes: usize, dim: usize, data: &[LabeledExample]) -> Result<Self> {
        let examples = data
            .iter()
            .map(|e| PartialExample {
                features: e.features.clone(),
                candidates: CandidateSet::singleton(e.true_label),
                hidden_true_label: e.true_label,
            })
            .collect();
        Dataset::new(classes, dim, examples)
    }

    pub fn stats(&self) -> AmbiguityStats {
        let n = self.examples.len().max(1) as f64;
        let mean_candidates =
            self.examples.iter().map(|e| e.candidates.len() as f64).sum::<f64>() / n;
        let noisy = self.examples.iter().filter(|e| !e.truth_in_candidates()).count();
        AmbiguityStats {
            n: self.examples.len(),
            mean_candidates,
            noisy_fraction: noisy as f64 / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityStats {
    pub n: usize,
    pub mean_candidates: f64,
    pub noisy_fraction: f64,
}

/// Per-class inclusion probabilities for negative labels; the diagonal is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipMatrix {
    rows: Vec<Vec<f64>>,
}

impl FlipMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = rows.len();
        for (y, r) in rows.iter().enumerate() {
            if r.len() != c {
                return Err(PllError::InvalidArgument(format!(
                    "flip matrix row {y} has {} entries, expected {c}",
                    r.len()
                )));
            }
            if r[y] != 1.0 {
                return Err(PllError::InvalidArgument(format!(
                    "flip matrix diagonal entry {y} is {}, must be 1",
                    r[y]
                )));
            }
            if r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(PllError::InvalidArgument(format!(
                    "flip matrix row {y} has an entry outside [0, 1]"
                )));
            }
        }
        Ok(FlipMatrix { rows })
    }

    /// Banded matrix: row `y` puts `band[k-1]` on class `(y + k) mod C`.
    pub fn banded(classes: usize, band: &[f64]) -> Result<Self> {
        let mut rows = vec![vec![0.0; classes]; classes];
        for (y, row) in rows.iter_mut().enumerate() {
            row[y] = 1.0;
            for (k, &p) in band.iter().enumerate() {
                let j = (y + k + 1) % classes;
                if j != y {
                    row[j] = p;
                }
            }
        }
        FlipMatrix::new(rows)
    }

    /// Each class pairs with its successor at probability 0.5.
    pub fn successor_preset(classes: usize) -> Result<Self> {
        Self::banded(classes, &[0.5])
    }

    /// Decaying band 0.9, 0.7, 0.5, 0.3, 0.1 over the next five classes.
    pub fn decaying_preset(classes: usize) -> Result<Self> {
        Self::banded(classes, &[0.9, 0.7, 0.5, 0.3, 0.1])
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, y: usize, j: usize) -> f64 {
        self.rows[y][j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlipSpec {
    Uniform { q: f64 },
    Matrix(FlipMatrix),
    Hierarchical { groups: Vec<Vec<usize>>, q: f64 },
}

impl FlipSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self {
            FlipSpec::Uniform { q } => check_prob("q", *q),
            FlipSpec::Matrix(m) => {
                if m.classes() != classes {
                    return Err(PllError::InvalidArgument(format!(
                        "flip matrix is {}x{0}, dataset has {classes} classes",
                        m.classes()
                    )));
                }
                Ok(())
            }
            FlipSpec::Hierarchical { groups, q } => {
                check_prob("q", *q)?;
                let mut seen = vec![false; classes];
                for g in groups {
                    for &c in g {
                        if c >= classes || seen[c] {
                            return Err(PllError::InvalidArgument(format!(
                                "superclass partition repeats or overflows class {c}"
                            )));
                        }
                        seen[c] = true;
                    }
                }
                if seen.iter().any(|s| !s) {
                    return Err(PllError::InvalidArgument(
                        "superclass partition does not cover every class".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Contiguous superclasses of `size` classes each (the last may be short).
    pub fn hierarchical_contiguous(classes: usize, size: usize, q: f64) -> Self {
        let groups = (0..classes)
            .collect::<Vec<_>>()
            .chunks(size.max(1))
            .map(<[usize]>::to_vec)
            .collect();
        FlipSpec::Hierarchical { groups, q }
    }

    /// Probability that negative label `j` joins the candidates of an
    /// example whose true label is `y`.
    pub fn inclusion(&self, y: usize, j: usize) -> f64 {
        if y == j {
            return 1.0;
        }
        match self {
            FlipSpec::Uniform { q } => *q,
            FlipSpec::Matrix(m) => m.get(y, j),
            FlipSpec::Hierarchical { groups, q } => {
                let same = groups.iter().any(|g| g.contains(&y) && g.contains(&j));
                if same {
                    *q
                } else {
                    0.0
                }
            }
        }
    }

    fn draw_negatives<R: Rng + ?Sized>(&self, y: usize, classes: usize, rng: &mut R) -> CandidateSet {
        let mut s = CandidateSet::empty();
        for j in (0..classes).filter(|&j| j != y) {
            if rng.gen::<f64>() < self.inclusion(y, j) {
                s.insert(j);
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub eta: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(PllError::InvalidArgument(format!(
                "eta must lie in [0, 1), got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Strength of the feature-space distortions used for the query and key views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub noise_sigma_query: f64,
    pub noise_sigma_key: f64,
    pub mask_prob_query: f64,
    pub mask_prob_key: f64,
}

impl AugmentSpec {
    pub fn none() -> Self {
        AugmentSpec {
            noise_sigma_query: 0.0,
            noise_sigma_key: 0.0,
            mask_prob_query: 0.0,
            mask_prob_key: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("mask_prob_query", self.mask_prob_query)?;
        check_prob("mask_prob_key", self.mask_prob_key)?;
        if !(self.noise_sigma_query >= 0.0) || !(self.noise_sigma_key >= 0.0) {
            return Err(PllError::InvalidArgument("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(PllError::InvalidArgument(format!(
            "{name} must lie in [0, 1], got {p}"
        )));
    }
    Ok(())
}

/// Class means on the unit sphere; samples are drawn around them.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlobs {
    pub means: Vec<Vec<f64>>,
    pub spread: f64,
}

impl GaussianBlobs {
    pub fn new(classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        if classes < 2 || dim < 2 || !(spread >= 0.0) {
            return Err(PllError::InvalidArgument(format!(
                "blobs need C >= 2, d_in >= 2, spread >= 0 (got {classes}, {dim}, {spread})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = (0..classes)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = crate::numerics::norm(&v);
                if n > 1e-8 {
                    break v.into_iter().map(|x| x / n).collect();
                }
            })
            .collect();
        Ok(GaussianBlobs { means, spread })
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `n` examples, label `i mod C` for the i-th, so classes differ in size by at most one.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<LabeledExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = self.classes();
        (0..n)
            .map(|i| {
                let y = i % c;
                let features = self.means[y]
                    .iter()
                    .map(|m| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + self.spread * z
                    })
                    .collect();
                LabeledExample {
                    features,
                    true_label: y,
                }
            })
            .collect()
    }
}

/// Balanced Gaussian blobs with class means on the unit sphere.
pub fn make_gaussian_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    if n < classes {
        return Err(PllError::InvalidArgument(format!(
            "need n >= C, got n={n}, C={classes}"
        )));
    }
    let blobs = GaussianBlobs::new(classes, dim, spread, seed)?;
    Ok(blobs.sample(n, seed.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Standard partial labels: the truth is always a candidate and each
/// negative joins independently with its inclusion probability.
pub fn apply_flip(
    data: &[LabeledExample],
    classes: usize,
    spec: &FlipSpec,
    seed: u64,
) -> Result<Vec<PartialExample>> {
    spec.validate(classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    data.iter()
        .map(|e| {
            if e.true_label >= classes {
                return Err(PllError::InvalidArgument(format!(
                    "true label {} >= {classes}",
                    e.true_label
                )));
            }
            let mut candidates = spec.draw_negatives(e.true_label, classes, &mut rng);
            candidates.insert(e.true_label);
            Ok(PartialExample {
                features: e.features.clone(),
                candidates,
                hidden_true_label: e.true_label,
            })
        })
        .collect()
}

/// Noisy partial labels. With probability `eta` an example's candidate set
/// is redrawn from the negatives alone, regenerating until non-empty; when
/// no negative can ever be drawn a single uniformly chosen wrong label is used.
pub fn apply_noise(
    data: &[PartialExample],
    originals: &[LabeledExample],
    classes: usize,
    spec: NoiseSpec,
    flip: &FlipSpec,
    seed: u64,
) -> Result<Vec<PartialExample>> {
    spec.validate()?;
    flip.validate(classes)?;
    if data.len() != originals.len() {
        return Err(PllError::InvalidArgument(format!(
            "apply_noise: {} partial vs {} labeled examples",
            data.len(),
            originals.len()
        )));
    }
    if classes < 2 && spec.eta > 0.0 {
        return Err(PllError::InvalidArgument(
            "noisy candidates need at least two classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    data.iter()
        .zip(originals)
        .map(|(p, o)| {
            if rng.gen::<f64>() >= spec.eta {
                return Ok(p.clone());
            }
            let y = o.true_label;
            let reachable = (0..classes).any(|j| j != y && flip.inclusion(y, j) > 0.0);
            let candidates = if reachable {
                let mut drawn = None;
                for _ in 0..MAX_REGENERATIONS {
                    let s = flip.draw_negatives(y, classes, &mut rng);
                    if !s.is_empty() {
                        drawn = Some(s);
                        break;
                    }
                }
                drawn.ok_or(PllError::RegenerationExhausted(MAX_REGENERATIONS))?
            } else {
                let wrong: Vec<usize> = (0..classes).filter(|&j| j != y).collect();
                CandidateSet::singleton(*wrong.choose(&mut rng).expect("C >= 2"))
            };
            Ok(PartialExample {
                features: p.features.clone(),
                candidates,
                hidden_true_label: y,
            })
        })
        .collect()
}

fn distort<R: Rng + ?Sized>(x: &[f64], sigma: f64, mask_prob: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let noisy = if sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                v + sigma * z
            } else {
                v
            };
            if mask_prob > 0.0 && rng.gen::<f64>() < mask_prob {
                0.0
            } else {
                noisy
            }
        })
        .collect()
}

/// Query and key views drawn from a caller-owned generator.
pub fn two_views_with<R: Rng + ?Sized>(
    x: &[f64],
    spec: &AugmentSpec,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let q = distort(x, spec.noise_sigma_query, spec.mask_prob_query, rng);
    let k = distort(x, spec.noise_sigma_key, spec.mask_prob_key, rng);
    (q, k)
}

pub fn two_views(x: &[f64], spec: &AugmentSpec, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    two_views_with(x, spec, &mut rng)
}

/// Renders a dataset in the `pll v1` text format.
pub fn dataset_to_text(data: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "pll v1 n={} d={} C={}",
        data.examples.len(),
        data.dim,
        data.classes
    );
    for e in &data.examples {
        let feats: Vec<String> = e.features.iter().map(|v| format!("{v:?}")).collect();
        let cands: Vec<String> = e.candidates.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(
            out,
            "{} | {} | {}",
            feats.join(","),
            cands.join(";"),
            e.hidden_true_label
        );
    }
    out
}

/// Parses the `pll v1` text format. `origin` only labels error messages.
pub fn dataset_from_text(text: &str, origin: &str) -> Result<Dataset> {
    let err = |line: usize, msg: String| PllError::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("pll") || parts.next() != Some("v1") {
        return Err(err(1, format!("bad header {header:?}")));
    }
    let mut field = |key: &str| -> Result<usize> {
        let tok = parts
            .next()
            .ok_or_else(|| err(1, format!("header missing {key}=")))?;
        tok.strip_prefix(key)
            .and_then(|v| v.strip_prefix('='))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(1, format!("expected {key}=<int>, got {tok:?}")))
    };
    let n = field("n")?;
    let dim = field("d")?;
    let classes = field("C")?;
    if classes == 0 || classes > MAX_CLASSES {
        return Err(err(1, format!("C={classes} outside 1..={MAX_CLASSES}")));
    }
    let mut examples = Vec::with_capacity(n);
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('|').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(err(lineno, "expected `features | candidates | label`".into()));
        }
        let features = cols[0]
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(lineno, format!("bad feature: {e}")))?;
        if features.len() != dim {
            return Err(err(
                lineno,
                format!("{} features, header says d={dim}", features.len()),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(err(lineno, "non-finite feature".into()));
        }
        let mut candidates = CandidateSet::empty();
        for tok in cols[1].split(';').map(str::trim).filter(|t| !t.is_empty()) {
            let c: usize = tok
                .parse()
                .map_err(|_| err(lineno, format!("bad candidate {tok:?}")))?;
            if c >= classes {
                return Err(err(lineno, format!("candidate {c} >= C={classes}")));
            }
            candidates.insert(c);
        }
        if candidates.is_empty() {
            return Err(err(lineno, "empty candidate list".into()));
        }
        let y: usize = cols[2]
            .parse()
            .map_err(|_| err(lineno, format!("bad label {:?}", cols[2])))?;
        if y >= classes {
            return Err(err(lineno, format!("label {y} >= C={classes}")));
        }
        examples.push(PartialExample {
            features,
            candidates,
            hidden_true_label: y,
        });
    }
    if examples.len() != n {
        return Err(err(1, format!("header says n={n}, found {} rows", examples.len())));
    }
    Ok(Dataset {
        classes,
        dim,
        examples,
    })
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    std::fs::write(path, dataset_to_text(data))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    dataset_from_text(&text, &path.display().to_string())
}
