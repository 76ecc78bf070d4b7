//! Query encoder, classifier and momentum key encoder.
//!
//! A shared MLP backbone feeds two heads: a linear softmax classifier and a
//! two-layer projection head whose output is L2-normalized. The key encoder
//! is a shadow copy of backbone and projection head that only moves through
//! [`ModelState::momentum_update`].

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::CandidateSet;
use crate::error::{PllError, Result};
use crate::numerics::{Graph, Parameter, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub d_in: usize,
    pub hidden: Vec<usize>,
    pub d_emb: usize,
    pub classes: usize,
}

impl EncoderConfig {
    pub fn new(d_in: usize, classes: usize) -> Self {
        EncoderConfig {
            d_in,
            hidden: vec![64, 64],
            d_emb: 128,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0
            || self.d_emb == 0
            || self.classes == 0
            || self.hidden.is_empty()
            || self.hidden.contains(&0)
        {
            return Err(PllError::InvalidArgument(format!(
                "encoder dimensions must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn feature_width(&self) -> usize {
        *self.hidden.last().expect("validated non-empty")
    }

    /// `(fan_in, fan_out)` of every linear layer in parameter order:
    /// backbone, projection head, classifier head.
    fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.d_in;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        let f = self.feature_width();
        dims.push((f, f));
        dims.push((f, self.d_emb));
        dims.push((f, self.classes));
        dims
    }
}

/// Query/classifier parameters plus the key encoder's shadow copy.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    config: EncoderConfig,
    params: Vec<Parameter>,
    key: Vec<Tensor>,
}

/// Graph handles for one set of weights.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    backbone_layers: usize,
}

impl ModelState {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (fan_in, fan_out) in config.layers() {
            params.push(Parameter::uniform(&[fan_in, fan_out], fan_in, &mut rng));
            params.push(Parameter::uniform(&[fan_out], fan_in, &mut rng));
        }
        let key = params[..config.key_param_count()]
            .iter()
            .map(|p| p.value.clone())
            .collect();
        Ok(ModelState {
            config,
            params,
            key,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn key_params(&self) -> &[Tensor] {
        &self.key
    }

    /// Binds the trainable weights as differentiable leaves.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| g.param(i, p.value.clone()))
            .collect();
        Bound {
            vars,
            backbone_layers: self.config.hidden.len(),
        }
    }

    fn bind_const(&self, g: &mut Graph) -> Bound {
        let vars = self.params.iter().map(|p| g.constant(p.value.clone())).collect();
        Bound {
            vars,
            backbone_layers: self.config.hidden.len(),
        }
    }

    fn bind_key(&self, g: &mut Graph) -> Bound {
        let vars = self.key.iter().map(|t| g.constant(t.clone())).collect();
        Bound {
            vars,
            backbone_layers: self.config.hidden.len(),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.config.d_in {
            return Err(PllError::Shape(format!(
                "input {:?}, encoder expects d_in={}",
                x.shape(),
                self.config.d_in
            )));
        }
        Ok(())
    }

    /// Query forward pass without recording gradients: unit embeddings and
    /// class probabilities, one row per input row.
    pub fn forward_query(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let b = self.bind_const(&mut g);
        let xv = g.constant(x.clone());
        let h = b.backbone(&mut g, xv)?;
        let emb = b.embed(&mut g, h)?;
        let logp = b.classify(&mut g, h)?;
        Ok((g.value(emb).clone(), exp_tensor(g.value(logp))))
    }

    /// Class probabilities only.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let b = self.bind_const(&mut g);
        let xv = g.constant(x.clone());
        let h = b.backbone(&mut g, xv)?;
        let logp = b.classify(&mut g, h)?;
        Ok(exp_tensor(g.value(logp)))
    }

    /// Key-encoder embeddings; nothing here is differentiable.
    pub fn forward_key(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let b = self.bind_key(&mut g);
        let xv = g.constant(x.clone());
        let h = b.backbone(&mut g, xv)?;
        let emb = b.embed(&mut g, h)?;
        Ok(g.value(emb).clone())
    }

    /// `key <- m * key + (1 - m) * query`, elementwise.
    pub fn momentum_update(&mut self, m: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&m) {
            return Err(PllError::InvalidArgument(format!(
                "key momentum must lie in [0, 1], got {m}"
            )));
        }
        for (k, p) in self.key.iter_mut().zip(&self.params) {
            for (kv, qv) in k.data_mut().iter_mut().zip(p.value.data()) {
                *kv = m * *kv + (1.0 - m) * qv;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Text checkpoint: config line followed by every array, values printed
    /// in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::from("pll-checkpoint v1\n");
        let hidden: Vec<String> = self.config.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(
            out,
            "d_in={} hidden={} d_emb={} classes={}",
            self.config.d_in,
            hidden.join(","),
            self.config.d_emb,
            self.config.classes
        );
        let mut emit = |tag: &str, i: usize, t: &Tensor| {
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{tag} {i} {}", shape.join("x"));
            let _ = writeln!(out, "{}", vals.join(" "));
        };
        for (i, p) in self.params.iter().enumerate() {
            emit("value", i, &p.value);
            emit("momentum", i, &p.momentum_buffer);
        }
        for (i, k) in self.key.iter().enumerate() {
            emit("key", i, k);
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| PllError::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&"pll-checkpoint v1") {
            return Err(err(1, "not a pll-checkpoint v1 file".into()));
        }
        let cfg_line = lines.get(1).ok_or_else(|| err(2, "missing config".into()))?;
        let mut d_in = None;
        let mut hidden = None;
        let mut d_emb = None;
        let mut classes = None;
        for tok in cfg_line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| err(2, format!("bad token {tok:?}")))?;
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(2, format!("bad number {s:?}")));
            match k {
                "d_in" => d_in = Some(num(v)?),
                "d_emb" => d_emb = Some(num(v)?),
                "classes" => classes = Some(num(v)?),
                "hidden" => {
                    hidden = Some(v.split(',').map(num).collect::<Result<Vec<_>>>()?);
                }
                _ => return Err(err(2, format!("unknown key {k:?}"))),
            }
        }
        let config = EncoderConfig {
            d_in: d_in.ok_or_else(|| err(2, "missing d_in".into()))?,
            hidden: hidden.ok_or_else(|| err(2, "missing hidden".into()))?,
            d_emb: d_emb.ok_or_else(|| err(2, "missing d_emb".into()))?,
            classes: classes.ok_or_else(|| err(2, "missing classes".into()))?,
        };
        let mut model = ModelState::new(config, 0)?;
        let mut filled = 0usize;
        let mut i = 2;
        while i < lines.len() {
            let head: Vec<&str> = lines[i].split_whitespace().collect();
            if head.is_empty() {
                i += 1;
                continue;
            }
            if head.len() != 3 {
                return Err(err(i + 1, format!("bad array header {:?}", lines[i])));
            }
            let idx: usize = head[1]
                .parse()
                .map_err(|_| err(i + 1, "bad array index".into()))?;
            let vals = lines
                .get(i + 1)
                .ok_or_else(|| err(i + 2, "missing values".into()))?
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(i + 2, format!("bad value: {e}")))?;
            let target = match head[0] {
                "value" => model.params.get_mut(idx).map(|p| &mut p.value),
                "momentum" => model.params.get_mut(idx).map(|p| &mut p.momentum_buffer),
                "key" => model.key.get_mut(idx),
                other => return Err(err(i + 1, format!("unknown array kind {other:?}"))),
            }
            .ok_or_else(|| err(i + 1, format!("array index {idx} out of range")))?;
            let shape: Vec<String> = target.shape().iter().map(|d| d.to_string()).collect();
            if head[2] != shape.join("x") || vals.len() != target.len() {
                return Err(err(
                    i + 1,
                    format!("array {} {idx} does not match shape {}", head[0], shape.join("x")),
                ));
            }
            target.data_mut().copy_from_slice(&vals);
            filled += 1;
            i += 2;
        }
        let expected = model.params.len() * 2 + model.key.len();
        if filled != expected {
            return Err(err(lines.len(), format!("{filled} arrays, expected {expected}")));
        }
        Ok(model)
    }
}

impl EncoderConfig {
    fn key_param_count(&self) -> usize {
        2 * (self.hidden.len() + 2)
    }
}

impl Bound {
    fn layer(&self, i: usize) -> (Var, Var) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }

    /// Shared feature extractor: affine + ReLU per hidden layer.
    pub fn backbone(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..self.backbone_layers {
            let (w, b) = self.layer(l);
            let a = g.affine(h, w, b)?;
            h = g.relu(a)?;
        }
        Ok(h)
    }

    /// Projection head and normalization: unit embeddings.
    pub fn embed(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let (w1, b1) = self.layer(self.backbone_layers);
        let (w2, b2) = self.layer(self.backbone_layers + 1);
        let a = g.affine(h, w1, b1)?;
        let r = g.relu(a)?;
        let z = g.affine(r, w2, b2)?;
        g.l2_normalize(z)
    }

    /// Classifier head: log class probabilities.
    pub fn classify(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let (w, b) = self.layer(self.backbone_layers + 2);
        let logits = g.affine(h, w, b)?;
        g.log_softmax(logits)
    }
}

fn exp_tensor(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|v| v.exp()).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Argmax of `f` restricted to `candidates`; ties go to the smallest index.
pub fn predict_within(f: &[f64], candidates: &CandidateSet) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for j in candidates.iter().take_while(|&j| j < f.len()) {
        if best.map_or(true, |(_, v)| f[j] > v) {
            best = Some((j, f[j]));
        }
    }
    best.map(|(j, _)| j)
        .or_else(|| candidates.iter().next())
        .expect("candidate set is non-empty")
}

/// Unrestricted argmax with smallest-index tie-breaking.
pub fn argmax(f: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in f.iter().enumerate() {
        if v > f[best] {
            best = j;
        }
    }
    best
}
