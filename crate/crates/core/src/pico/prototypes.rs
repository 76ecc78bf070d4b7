use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{PllError, Result};
use crate::numerics::{dot, norm, Tensor, NORM_EPSILON};

/// How prototypes follow the query embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrototypeMode {
    /// Per-example moving average after every prediction.
    MovingAverage,
    /// Mean of all query embeddings per predicted class, once per epoch.
    Recompute,
}

/// One unit-norm prototype per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    mu: Tensor,
}

impl PrototypeBank {
    /// Random unit directions.
    pub fn random<R: Rng + ?Sized>(classes: usize, dim: usize, rng: &mut R) -> Self {
        let mut mu = Tensor::zeros(&[classes, dim]);
        for c in 0..classes {
            loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = norm(&v);
                if n > 1e-8 {
                    mu.row_mut(c)
                        .iter_mut()
                        .zip(&v)
                        .for_each(|(m, x)| *m = x / n);
                    break;
                }
            }
        }
        PrototypeBank { mu }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (c, r) in rows.iter().enumerate() {
            if (norm(r) - 1.0).abs() > 1e-9 {
                return Err(PllError::InvalidArgument(format!(
                    "prototype {c} is not unit norm"
                )));
            }
        }
        Ok(PrototypeBank {
            mu: Tensor::from_rows(&rows)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn get(&self, c: usize) -> &[f64] {
        self.mu.row(c)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.mu
    }

    /// `q . mu_c` for every class.
    pub fn similarities(&self, q: &[f64]) -> Vec<f64> {
        (0..self.classes()).map(|c| dot(q, self.get(c))).collect()
    }

    /// `mu_c <- normalize(gamma * mu_c + (1 - gamma) * q)`. A zero sum
    /// leaves the prototype untouched.
    pub fn update(&mut self, class: usize, q: &[f64], gamma: f64) {
        let row = self.mu.row_mut(class);
        let mixed: Vec<f64> = row
            .iter()
            .zip(q)
            .map(|(m, x)| gamma * m + (1.0 - gamma) * x)
            .collect();
        let n = norm(&mixed);
        if n >= NORM_EPSILON {
            row.iter_mut().zip(&mixed).for_each(|(m, v)| *m = v / n);
        }
    }

    /// Replaces each prototype with the normalized mean of the embeddings
    /// predicted as that class. Classes with no members (or a zero mean)
    /// keep their previous prototype.
    pub fn recompute(&mut self, embeddings: &Tensor, labels: &[usize]) {
        let (c, d) = (self.classes(), self.dim());
        let mut sums = vec![vec![0.0; d]; c];
        let mut counts = vec![0usize; c];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            sums[l]
                .iter_mut()
                .zip(embeddings.row(i))
                .for_each(|(s, v)| *s += v);
        }
        for (class, sum) in sums.iter().enumerate() {
            if counts[class] == 0 {
                continue;
            }
            let n = norm(sum);
            if n >= NORM_EPSILON {
                self.mu
                    .row_mut(class)
                    .iter_mut()
                    .zip(sum)
                    .for_each(|(m, s)| *m = s / n);
            }
        }
    }
}
