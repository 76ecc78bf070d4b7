#![allow(dead_code)]

use pll_core::numerics::{ContrastTerm, Graph, Tensor, Var};
use pll_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A scalar function of several tensor inputs, recorded on a fresh graph.
pub type Build = fn(&mut Graph, &[Var], &Aux) -> Result<Var>;

/// Fixed (non-differentiated) data a case needs, drawn once per point.
pub struct Aux {
    pub readout: Vec<Tensor>,
    pub targets: Tensor,
}

pub struct GradCase {
    pub name: &'static str,
    pub build: Build,
    pub draw: fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Aux),
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Entries bounded away from zero so ReLU kinks are never straddled.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn simplex_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = rand_tensor(rng, &[rows, cols], 0.05, 1.0);
    for r in 0..rows {
        let s: f64 = t.row(r).iter().sum();
        t.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    t
}

/// Reduces a matrix to a scalar with fixed random weights: `-sum R * v`.
fn readout(g: &mut Graph, v: Var, r: &Tensor) -> Result<Var> {
    let rows = g.value(v).rows();
    g.soft_cross_entropy(v, r.clone(), (0..rows).collect(), 1.0)
}

fn aux(rng: &mut ChaCha8Rng, shapes: &[&[usize]]) -> Aux {
    Aux {
        readout: shapes.iter().map(|s| rand_tensor(rng, s, -1.0, 1.0)).collect(),
        targets: Tensor::zeros(&[1, 1]),
    }
}

pub fn cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "affine",
            build: |g, v, a| {
                let y = g.affine(v[0], v[1], v[2])?;
                readout(g, y, &a.readout[0])
            },
            draw: |rng| {
                let x = rand_tensor(rng, &[3, 4], -1.0, 1.0);
                let w = rand_tensor(rng, &[4, 5], -1.0, 1.0);
                let b = rand_tensor(rng, &[5], -1.0, 1.0);
                (vec![x, w, b], aux(rng, &[&[3, 5]]))
            },
        },
        GradCase {
            name: "relu",
            build: |g, v, a| {
                let y = g.relu(v[0])?;
                readout(g, y, &a.readout[0])
            },
            draw: |rng| (vec![off_zero(rng, &[3, 5])], aux(rng, &[&[3, 5]])),
        },
        GradCase {
            name: "log_softmax",
            build: |g, v, a| {
                let y = g.log_softmax(v[0])?;
                readout(g, y, &a.readout[0])
            },
            draw: |rng| (vec![rand_tensor(rng, &[3, 5], -2.0, 2.0)], aux(rng, &[&[3, 5]])),
        },
        GradCase {
            name: "l2_normalize",
            build: |g, v, a| {
                let y = g.l2_normalize(v[0])?;
                readout(g, y, &a.readout[0])
            },
            draw: |rng| (vec![off_zero(rng, &[3, 5])], aux(rng, &[&[3, 5]])),
        },
        GradCase {
            name: "concat_rows",
            build: |g, v, a| {
                let y = g.concat_rows(&[v[0], v[1]])?;
                readout(g, y, &a.readout[0])
            },
            draw: |rng| {
                let x = rand_tensor(rng, &[2, 3], -1.0, 1.0);
                let y = rand_tensor(rng, &[3, 3], -1.0, 1.0);
                (vec![x, y], aux(rng, &[&[5, 3]]))
            },
        },
        GradCase {
            name: "soft_cross_entropy",
            build: |g, v, a| {
                let lp = g.log_softmax(v[0])?;
                g.soft_cross_entropy(lp, a.targets.clone(), vec![0, 2, 3], 3.0)
            },
            draw: |rng| {
                let x = rand_tensor(rng, &[4, 5], -2.0, 2.0);
                let mut a = aux(rng, &[]);
                a.targets = simplex_rows(rng, 4, 5);
                (vec![x], a)
            },
        },
        GradCase {
            name: "contrastive",
            build: |g, v, _| {
                let terms = vec![
                    ContrastTerm {
                        anchor: 0,
                        exclude: Some(0),
                        positives: vec![1, 4],
                    },
                    ContrastTerm {
                        anchor: 1,
                        exclude: Some(1),
                        positives: vec![],
                    },
                    ContrastTerm {
                        anchor: 2,
                        exclude: None,
                        positives: vec![2, 3, 5],
                    },
                ];
                let q = g.l2_normalize(v[0])?;
                let k = g.l2_normalize(v[1])?;
                let pool = g.concat_rows(&[q, k])?;
                g.contrastive(q, pool, terms, 0.5, 3.0)
            },
            draw: |rng| {
                let q = off_zero(rng, &[3, 4]);
                let k = off_zero(rng, &[3, 4]);
                (vec![q, k], aux(rng, &[]))
            },
        },
        GradCase {
            name: "weighted_sum",
            build: |g, v, a| {
                let s1 = readout(g, v[0], &a.readout[0])?;
                let lp = g.log_softmax(v[1])?;
                let s2 = readout(g, lp, &a.readout[1])?;
                g.weighted_sum(&[(s1, 0.7), (s2, -1.3)])
            },
            draw: |rng| {
                let x = rand_tensor(rng, &[2, 3], -1.0, 1.0);
                let y = rand_tensor(rng, &[2, 4], -1.0, 1.0);
                (vec![x, y], aux(rng, &[&[2, 3], &[2, 4]]))
            },
        },
    ]
}

fn evaluate(case: &GradCase, inputs: &[Tensor], a: &Aux) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (case.build)(&mut g, &vars, a).unwrap();
    g.value(out).item()
}

/// Largest relative error `|analytic - numeric| / max(|analytic|, |numeric|)`
/// (Euclidean norms per input) of one case at one random point.
pub fn relative_error(case: &GradCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inputs, a) = (case.draw)(&mut rng);

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(i, t.clone()))
        .collect();
    let out = (case.build)(&mut g, &vars, &a).unwrap();
    let grads = g.backward(out).unwrap();

    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut diff = 0.0;
        let mut an = 0.0;
        let mut nu = 0.0;
        for k in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            let numeric = (evaluate(case, &plus, &a) - evaluate(case, &minus, &a)) / (2.0 * h);
            let av = analytic.data()[k];
            diff += (av - numeric).powi(2);
            an += av * av;
            nu += numeric * numeric;
        }
        let scale = an.sqrt().max(nu.sqrt());
        if scale > 1e-10 {
            worst = worst.max(diff.sqrt() / scale);
        } else {
            worst = worst.max(diff.sqrt());
        }
    }
    worst
}
