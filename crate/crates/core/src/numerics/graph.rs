//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape once from the last node to the first, so each recorded
//! operation has its adjoint applied exactly once.

use super::optim::Parameter;
use super::tensor::{gemm, Tensor};
use crate::error::{PllError, Result};

/// Smallest norm accepted by [`Graph::l2_normalize`].
pub const NORM_EPSILON: f64 = 1e-12;

/// Probabilities below this are clamped inside cross-entropy.
pub const LOG_CLAMP_PROB: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One anchor's share of a contrastive loss: the anchor row, the pool row
/// holding the anchor itself (excluded from the denominator), and the pool
/// rows treated as positives.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastTerm {
    pub anchor: usize,
    pub exclude: Option<usize>,
    pub positives: Vec<usize>,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    LogSoftmax(Var),
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    SoftCrossEntropy {
        logp: Var,
        targets: Tensor,
        rows: Vec<usize>,
        denom: f64,
    },
    Contrastive {
        anchors: Var,
        pool: Var,
        terms: Vec<ContrastTerm>,
        logits: Tensor,
        tau: f64,
        denom: f64,
    },
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(PllError::NonFinite(format!("{} output", op_name(&op))));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to parameter slot `id`; gradients flow back to it.
    pub fn param(&mut self, id: usize, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `y = x W + b` with `x: n x a`, `W: a x b`, `b: b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 || xv.cols() != wv.shape()[0] || bv.len() != wv.shape()[1] {
            return Err(PllError::Shape(format!(
                "affine: x {:?}, W {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let (n, a, out) = (xv.rows(), xv.cols(), wv.shape()[1]);
        let mut y = Vec::with_capacity(n * out);
        for _ in 0..n {
            y.extend_from_slice(bv.data());
        }
        gemm(n, a, out, 1.0, xv.data(), false, wv.data(), false, 1.0, &mut y);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::new(vec![n, out], y)?, Op::Affine { x, w, b }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if c == 0 {
            return Err(PllError::Shape("log_softmax over zero columns".into()));
        }
        let mut out = Vec::with_capacity(xv.len());
        for i in 0..xv.rows() {
            out.extend(log_softmax_row(xv.row(i)));
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x);
        self.push(t, Op::LogSoftmax(x), rg)
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut norms = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for i in 0..xv.rows() {
            let r = xv.row(i);
            let nrm = super::tensor::norm(r);
            if !(nrm >= NORM_EPSILON) {
                return Err(PllError::DegenerateEmbedding { row: i, norm: nrm });
            }
            norms.push(nrm);
            out.extend(r.iter().map(|v| v / nrm));
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x);
        self.push(t, Op::L2Normalize { x, norms }, rg)
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |p| self.value(*p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(PllError::Shape(format!(
                    "concat_rows: {} columns vs {}",
                    v.cols(),
                    cols
                )));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// `(1/denom) * sum_{r in rows} sum_j -t[r,j] * log p[r,j]`, with the
    /// log clamped below at `ln(LOG_CLAMP_PROB)`.
    pub fn soft_cross_entropy(
        &mut self,
        logp: Var,
        targets: Tensor,
        rows: Vec<usize>,
        denom: f64,
    ) -> Result<Var> {
        let lv = self.value(logp);
        if targets.shape() != lv.shape() {
            return Err(PllError::Shape(format!(
                "cross-entropy targets {:?} vs log-probs {:?}",
                targets.shape(),
                lv.shape()
            )));
        }
        if rows.iter().any(|&r| r >= lv.rows()) || !(denom > 0.0) {
            return Err(PllError::InvalidArgument(
                "cross-entropy row selection out of range".into(),
            ));
        }
        let floor = LOG_CLAMP_PROB.ln();
        let mut total = 0.0;
        for &r in &rows {
            for (t, l) in targets.row(r).iter().zip(lv.row(r)) {
                if *t != 0.0 {
                    total -= t * l.max(floor);
                }
            }
        }
        let rg = self.rg(logp);
        self.push(
            Tensor::scalar(total / denom),
            Op::SoftCrossEntropy {
                logp,
                targets,
                rows,
                denom,
            },
            rg,
        )
    }

    /// Sum over `terms` of
    /// `-(1/|P|) sum_{p in P} log( exp(a.p/tau) / sum_{j != exclude} exp(a.j/tau) )`,
    /// divided by `denom`. Terms with no positives contribute zero.
    pub fn contrastive(
        &mut self,
        anchors: Var,
        pool: Var,
        terms: Vec<ContrastTerm>,
        tau: f64,
        denom: f64,
    ) -> Result<Var> {
        if !(tau > 0.0) || !(denom > 0.0) {
            return Err(PllError::InvalidArgument(format!(
                "contrastive: tau={tau}, denom={denom}"
            )));
        }
        let (av, pv) = (self.value(anchors), self.value(pool));
        if av.cols() != pv.cols() {
            return Err(PllError::Shape(format!(
                "contrastive: anchors {:?} vs pool {:?}",
                av.shape(),
                pv.shape()
            )));
        }
        let (n, d, m) = (av.rows(), av.cols(), pv.rows());
        for t in &terms {
            let bad_pos = t.positives.iter().any(|&p| p >= m || Some(p) == t.exclude);
            if t.anchor >= n || t.exclude.is_some_and(|e| e >= m) || bad_pos {
                return Err(PllError::InvalidArgument(format!(
                    "contrastive term out of range: {t:?}"
                )));
            }
        }
        let mut logits = vec![0.0; n * m];
        gemm(n, d, m, 1.0 / tau, av.data(), false, pv.data(), true, 0.0, &mut logits);
        let logits = Tensor::new(vec![n, m], logits)?;
        let mut total = 0.0;
        for t in &terms {
            if t.positives.is_empty() {
                continue;
            }
            let row = logits.row(t.anchor);
            let lse = masked_logsumexp(row, t.exclude);
            let pos: f64 = t.positives.iter().map(|&p| row[p]).sum();
            total += lse - pos / t.positives.len() as f64;
        }
        let rg = self.rg(anchors) || self.rg(pool);
        self.push(
            Tensor::scalar(total / denom),
            Op::Contrastive {
                anchors,
                pool,
                terms,
                logits,
                tau,
                denom,
            },
            rg,
        )
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, parts: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for (v, w) in parts {
            let t = self.value(*v);
            if t.len() != 1 {
                return Err(PllError::Shape(format!(
                    "weighted_sum over non-scalar {:?}",
                    t.shape()
                )));
            }
            total += w * t.item();
        }
        let rg = parts.iter().any(|(v, _)| self.rg(*v));
        self.push(Tensor::scalar(total), Op::WeightedSum(parts.to_vec()), rg)
    }

    /// Propagates adjoints from the scalar `loss` back to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(PllError::Shape("backward from a non-scalar node".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut visited = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            visited.push(idx);
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(PllError::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        Ok(Gradients { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        match op {
            Op::Constant | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, a, o) = (xv.rows(), xv.cols(), wv.shape()[1]);
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * a];
                    gemm(n, o, a, 1.0, g.data(), false, wv.data(), true, 0.0, &mut dx);
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; a * o];
                    gemm(a, n, o, 1.0, xv.data(), true, g.data(), false, 0.0, &mut dw);
                    self.accumulate(grads, *w, Tensor::new(vec![a, o], dw)?);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; o];
                    for i in 0..n {
                        for (acc, v) in db.iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    self.accumulate(grads, *b, Tensor::new(shape, db)?);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d)?);
            }
            Op::LogSoftmax(x) => {
                let mut d = Vec::with_capacity(out.len());
                for i in 0..out.rows() {
                    let gs: f64 = g.row(i).iter().sum();
                    d.extend(
                        out.row(i)
                            .iter()
                            .zip(g.row(i))
                            .map(|(&l, &gi)| gi - l.exp() * gs),
                    );
                }
                self.accumulate(grads, *x, Tensor::new(out.shape().to_vec(), d)?);
            }
            Op::L2Normalize { x, norms } => {
                let mut d = Vec::with_capacity(out.len());
                for (i, nrm) in norms.iter().enumerate() {
                    let y = out.row(i);
                    let gy = g.row(i);
                    let proj = super::tensor::dot(y, gy);
                    d.extend(y.iter().zip(gy).map(|(&yi, &gi)| (gi - yi * proj) / nrm));
                }
                self.accumulate(grads, *x, Tensor::new(out.shape().to_vec(), d)?);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let len = pv.len();
                    if self.rg(*p) {
                        let slice = g.data()[offset..offset + len].to_vec();
                        self.accumulate(grads, *p, Tensor::new(pv.shape().to_vec(), slice)?);
                    }
                    offset += len;
                }
            }
            Op::SoftCrossEntropy {
                logp,
                targets,
                rows,
                denom,
            } => {
                let lv = self.value(*logp);
                let floor = LOG_CLAMP_PROB.ln();
                let scale = g.item() / denom;
                let mut d = Tensor::zeros(lv.shape());
                for &r in rows {
                    let lr = lv.row(r);
                    let tr = targets.row(r);
                    let dr = d.row_mut(r);
                    for j in 0..tr.len() {
                        if tr[j] != 0.0 && lr[j] > floor {
                            dr[j] -= scale * tr[j];
                        }
                    }
                }
                self.accumulate(grads, *logp, d);
            }
            Op::Contrastive {
                anchors,
                pool,
                terms,
                logits,
                tau,
                denom,
            } => {
                let (av, pv) = (self.value(*anchors), self.value(*pool));
                let (n, d, m) = (av.rows(), av.cols(), pv.rows());
                let scale = g.item() / denom;
                let mut dl = vec![0.0; n * m];
                for t in terms {
                    if t.positives.is_empty() {
                        continue;
                    }
                    let row = logits.row(t.anchor);
                    let lse = masked_logsumexp(row, t.exclude);
                    let drow = &mut dl[t.anchor * m..(t.anchor + 1) * m];
                    for j in 0..m {
                        if Some(j) != t.exclude {
                            drow[j] += scale * (row[j] - lse).exp();
                        }
                    }
                    let w = scale / t.positives.len() as f64;
                    for &p in &t.positives {
                        drow[p] -= w;
                    }
                }
                if self.rg(*anchors) {
                    let mut da = vec![0.0; n * d];
                    gemm(n, m, d, 1.0 / tau, &dl, false, pv.data(), false, 0.0, &mut da);
                    self.accumulate(grads, *anchors, Tensor::new(av.shape().to_vec(), da)?);
                }
                if self.rg(*pool) {
                    let mut dp = vec![0.0; m * d];
                    gemm(m, n, d, 1.0 / tau, &dl, true, av.data(), false, 0.0, &mut dp);
                    self.accumulate(grads, *pool, Tensor::new(pv.shape().to_vec(), dp)?);
                }
            }
            Op::WeightedSum(parts) => {
                for (v, w) in parts {
                    let shape = self.value(*v).shape().to_vec();
                    self.accumulate(grads, *v, Tensor::filled(&shape, w * g.item()));
                }
            }
        }
        Ok(())
    }
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Node indices in the order their adjoints were applied.
    pub fn visited(&self) -> &[usize] {
        &self.visited
    }

    /// Adds parameter-leaf gradients into the matching parameter slots.
    pub fn accumulate_into(&self, graph: &Graph, params: &mut [Parameter]) -> Result<()> {
        for (node, g) in graph.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                let p = params.get_mut(*id).ok_or_else(|| {
                    PllError::InvalidArgument(format!("parameter slot {id} out of range"))
                })?;
                if p.grad.shape() != g.shape() {
                    return Err(PllError::Shape(format!(
                        "gradient {:?} for parameter {:?}",
                        g.shape(),
                        p.grad.shape()
                    )));
                }
                p.grad.add_assign(g);
            }
        }
        Ok(())
    }
}

pub fn log_softmax_row(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(move |v| v - lse)
}

fn masked_logsumexp(row: &[f64], exclude: Option<usize>) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if Some(j) != exclude && v > max {
            max = v;
        }
    }
    let s: f64 = row
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != exclude)
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + s.ln()
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param(_) => "parameter",
        Op::Affine { .. } => "affine",
        Op::Relu(_) => "relu",
        Op::LogSoftmax(_) => "log_softmax",
        Op::L2Normalize { .. } => "l2_normalize",
        Op::ConcatRows(_) => "concat_rows",
        Op::SoftCrossEntropy { .. } => "soft_cross_entropy",
        Op::Contrastive { .. } => "contrastive",
        Op::WeightedSum(_) => "weighted_sum",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn vec1(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity_like() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[&[1.0, 0.0]]));
        let w = g.constant(mat(&[&[2.0, 0.0], &[0.0, 3.0]]));
        let b = g.constant(vec1(&[0.0, 0.0]));
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 0.0]);
    }

    #[test]
    fn affine_zero_input_passes_bias() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[&[0.0, 0.0]]));
        let w = g.constant(mat(&[&[0.3, -1.0], &[7.0, 2.5]]));
        let b = g.constant(vec1(&[1.0, 2.0]));
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[&[1.0, 0.0, 0.0]]));
        let w = g.constant(mat(&[&[2.0, 0.0], &[0.0, 3.0]]));
        let b = g.constant(vec1(&[0.0, 0.0]));
        assert!(matches!(g.affine(x, w, b), Err(PllError::Shape(_))));
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.constant(vec1(&[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let x = g.constant(vec1(&[-1.0, -0.5, -3.0]));
        let y = g.relu(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_softmax_symmetric_and_stable() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[&[0.0, 0.0], &[1000.0, 0.0]]));
        let y = g.log_softmax(x).unwrap();
        let v = g.value(y);
        assert_abs_diff_eq!(v.row(0)[0], 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v.row(0)[1], 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v.row(1)[0], 0.0, epsilon = 1e-15);
        assert_eq!(v.row(1)[1], -1000.0);
    }

    #[test]
    fn l2_normalize_values_and_errors() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[&[3.0, 4.0], &[0.6, 0.8]]));
        let y = g.l2_normalize(x).unwrap();
        let v = g.value(y);
        assert_abs_diff_eq!(v.row(0)[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(v.row(0)[1], 0.8, epsilon = 1e-15);
        assert_eq!(v.row(1), &[0.6, 0.8]);
        let z = g.constant(mat(&[&[1.0, 0.0], &[1e-13, 0.0]]));
        assert!(matches!(
            g.l2_normalize(z),
            Err(PllError::DegenerateEmbedding { row: 1, .. })
        ));
    }

    #[test]
    fn contrastive_two_element_pool() {
        // q.k+ = 1, q.k- = -1, tau = 1
        let mut g = Graph::new();
        let q = g.constant(mat(&[&[1.0, 0.0]]));
        let pool = g.constant(mat(&[&[1.0, 0.0], &[1.0, 0.0], &[-1.0, 0.0]]));
        let term = ContrastTerm {
            anchor: 0,
            exclude: Some(0),
            positives: vec![1],
        };
        let l = g.contrastive(q, pool, vec![term], 1.0, 1.0).unwrap();
        let e = 1f64.exp();
        let expected = -(e / (e + 1.0 / e)).ln();
        assert_abs_diff_eq!(g.value(l).item(), expected, epsilon = 1e-14);
    }

    #[test]
    fn contrastive_empty_positive_set_is_zero() {
        let mut g = Graph::new();
        let q = g.constant(mat(&[&[1.0, 0.0]]));
        let pool = g.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let term = ContrastTerm {
            anchor: 0,
            exclude: Some(0),
            positives: vec![],
        };
        let l = g.contrastive(q, pool, vec![term], 0.07, 1.0).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn contrastive_rejects_self_as_positive() {
        let mut g = Graph::new();
        let q = g.constant(mat(&[&[1.0, 0.0]]));
        let pool = g.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let term = ContrastTerm {
            anchor: 0,
            exclude: Some(0),
            positives: vec![0],
        };
        assert!(g.contrastive(q, pool, vec![term], 0.07, 1.0).is_err());
    }

    #[test]
    fn backward_visits_each_node_once_in_reverse() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[&[0.5, -0.2]]));
        let w = g.param(0, mat(&[&[1.0, 2.0], &[0.5, -1.0]]));
        let b = g.param(1, vec1(&[0.1, 0.1]));
        let h = g.affine(x, w, b).unwrap();
        let r = g.relu(h).unwrap();
        let lp = g.log_softmax(r).unwrap();
        let loss = g
            .soft_cross_entropy(lp, mat(&[&[1.0, 0.0]]), vec![0], 1.0)
            .unwrap();
        let grads = g.backward(loss).unwrap();
        let visited = grads.visited();
        let mut sorted = visited.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(visited, sorted.as_slice());
        sorted.dedup();
        assert_eq!(sorted.len(), visited.len());
        // the constant input receives no adjoint
        assert_eq!(visited.len(), g.len() - 1);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let mut g = Graph::new();
        let lp = g.constant(mat(&[&[0.0, f64::MIN / 2.0]]));
        let l = g
            .soft_cross_entropy(lp, mat(&[&[0.5, 0.5]]), vec![0], 1.0)
            .unwrap();
        assert_abs_diff_eq!(g.value(l).item(), -0.5 * LOG_CLAMP_PROB.ln(), epsilon = 1e-12);
    }
}
