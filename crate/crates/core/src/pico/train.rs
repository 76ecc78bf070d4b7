use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{two_views_with, AugmentSpec, Dataset};
use crate::error::{PllError, Result};
use crate::networks::{argmax, predict_within, EncoderConfig, ModelState};
use crate::numerics::{cosine_lr, sgd_momentum_step, ContrastTerm, Graph, Tensor, Var};
use crate::picoplus::{draw_mixup, guess_labels, mixup_batch, PicoPlusConfig};

use super::prototypes::{PrototypeBank, PrototypeMode};
use super::queue::{
    knn_positive_set, noisy_positive_set, select_positives, AnchorInfo, EmbeddingQueue, Pool,
    PoolMeta, PositiveStrategy, QueueEntry,
};
use super::targets::{disambiguate, PseudoTargets, TargetPolicy};

/// Method hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PicoConfig {
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub phi_start: f64,
    pub phi_end: f64,
    pub warmup_epochs: usize,
    pub positives: PositiveStrategy,
    pub policy: TargetPolicy,
    pub prototype_mode: PrototypeMode,
}

impl Default for PicoConfig {
    fn default() -> Self {
        PicoConfig {
            tau: 0.07,
            lambda: 0.5,
            gamma: 0.99,
            phi_start: 0.95,
            phi_end: 0.8,
            warmup_epochs: 1,
            positives: PositiveStrategy::Default,
            policy: TargetPolicy::Pico,
            prototype_mode: PrototypeMode::MovingAverage,
        }
    }
}

impl PicoConfig {
    /// Linear ramp from `phi_start` at epoch 0 to `phi_end` at `total`.
    pub fn phi(&self, epoch: usize, total: usize) -> f64 {
        if total == 0 {
            return self.phi_start;
        }
        let t = epoch.min(total) as f64 / total as f64;
        self.phi_start + (self.phi_end - self.phi_start) * t
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tau > 0.0) {
            out.push(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) {
            out.push(format!("lambda must be >= 0, got {}", self.lambda));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("phi_start", self.phi_start),
            ("phi_end", self.phi_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        match self.positives {
            PositiveStrategy::Filter { rho, .. } if !(0.0..=1.0).contains(&rho) => {
                out.push(format!("filter rho must lie in [0, 1], got {rho}"));
            }
            PositiveStrategy::Threshold { delta_conf, .. } if !(0.0..=1.0).contains(&delta_conf) => {
                out.push(format!("delta_conf must lie in [0, 1], got {delta_conf}"));
            }
            _ => {}
        }
        out
    }
}

/// Optimization and bookkeeping shared by both trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub sgd_momentum: f64,
    pub key_momentum: f64,
    pub queue_size: usize,
    pub augment: AugmentSpec,
}

impl LoopConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.batch_size == 0 {
            out.push("batch_size must be >= 1".to_string());
        }
        if !(self.base_lr > 0.0) {
            out.push(format!("lr must be > 0, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            out.push(format!("sgd_momentum must lie in [0, 1), got {}", self.sgd_momentum));
        }
        if !(0.0..=1.0).contains(&self.key_momentum) {
            out.push(format!("key_momentum must lie in [0, 1], got {}", self.key_momentum));
        }
        if let Err(e) = self.augment.validate() {
            out.push(e.to_string());
        }
        out
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: ModelState,
    pub targets: PseudoTargets,
    pub bank: PrototypeBank,
    pub queue: EmbeddingQueue,
    rng: ChaCha8Rng,
}

impl TrainState {
    /// Fresh state: seeded weights, uniform pseudo-targets, random unit
    /// prototypes and an empty queue.
    pub fn new(data: &Dataset, encoder: EncoderConfig, queue_size: usize, seed: u64) -> Result<Self> {
        if encoder.d_in != data.dim || encoder.classes != data.classes {
            return Err(PllError::Shape(format!(
                "encoder {}x{} does not fit data with dim {} and {} classes",
                encoder.d_in, encoder.classes, data.dim, data.classes
            )));
        }
        let d_emb = encoder.d_emb;
        let model = ModelState::new(encoder, seed)?;
        let mut proto_rng = ChaCha8Rng::seed_from_u64(seed);
        proto_rng.set_stream(1);
        let bank = PrototypeBank::random(data.classes, d_emb, &mut proto_rng);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Ok(TrainState {
            model,
            targets: PseudoTargets::uniform(data),
            bank,
            queue: EmbeddingQueue::new(queue_size),
            rng,
        })
    }
}

/// Epoch-mean loss terms. Terms a method does not use stay zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLosses {
    pub l_cls: f64,
    pub l_cont: f64,
    pub l_clean: f64,
    pub l_mix: f64,
    pub l_ncont: f64,
    pub l_knn: f64,
    pub l_ncls: f64,
    pub l_total: f64,
}

impl BatchLosses {
    fn add_scaled(&mut self, o: &BatchLosses, w: f64) {
        self.l_cls += w * o.l_cls;
        self.l_cont += w * o.l_cont;
        self.l_clean += w * o.l_clean;
        self.l_mix += w * o.l_mix;
        self.l_ncont += w * o.l_ncont;
        self.l_knn += w * o.l_knn;
        self.l_ncls += w * o.l_ncls;
        self.l_total += w * o.l_total;
    }
}

/// Clean-selection diagnostics, measured against the hidden labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanStats {
    pub fraction: f64,
    pub precision: f64,
    pub recall: f64,
}

/// What one epoch produced, before test-set evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub phi: f64,
    pub losses: BatchLosses,
    pub pseudo_accuracy: f64,
    pub mmc: f64,
    pub clean: Option<CleanStats>,
}

pub(crate) struct PlusBatch<'a> {
    pub cfg: &'a PicoPlusConfig,
    pub clean: &'a [bool],
    pub knn_active: bool,
}

pub(crate) struct StepCtx<'a> {
    pub pico: &'a PicoConfig,
    pub lcfg: &'a LoopConfig,
    pub epoch: usize,
    pub lr: f64,
    pub phi: f64,
    pub warmup: bool,
    pub plus: Option<PlusBatch<'a>>,
}

/// Embeddings and class probabilities for every example, no augmentation.
pub fn embed_dataset(model: &ModelState, data: &Dataset) -> Result<(Tensor, Tensor)> {
    const CHUNK: usize = 512;
    let (d_emb, c) = (model.config().d_emb, model.config().classes);
    let mut emb = Vec::with_capacity(data.len() * d_emb);
    let mut probs = Vec::with_capacity(data.len() * c);
    for chunk in data.examples.chunks(CHUNK) {
        let mut x = Vec::with_capacity(chunk.len() * data.dim);
        for e in chunk {
            x.extend_from_slice(&e.features);
        }
        let (q, f) = model.forward_query(&Tensor::new(vec![chunk.len(), data.dim], x)?)?;
        emb.extend_from_slice(q.data());
        probs.extend_from_slice(f.data());
    }
    Ok((
        Tensor::new(vec![data.len(), d_emb], emb)?,
        Tensor::new(vec![data.len(), c], probs)?,
    ))
}

fn exp_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|r| t.row(r).iter().map(|v| v.exp()).collect())
        .collect()
}

/// One optimization step on the examples `idx`.
pub(crate) fn train_batch(
    st: &mut TrainState,
    data: &Dataset,
    idx: &[usize],
    ctx: &StepCtx,
) -> Result<BatchLosses> {
    let b = idx.len();
    let (d_in, classes) = (data.dim, data.classes);
    let pico = ctx.pico;

    let mut xq = Vec::with_capacity(b * d_in);
    let mut xk = Vec::with_capacity(b * d_in);
    for &i in idx {
        let (q, k) = two_views_with(&data.examples[i].features, &ctx.lcfg.augment, &mut st.rng);
        xq.extend_from_slice(&q);
        xk.extend_from_slice(&k);
    }
    let xq = Tensor::new(vec![b, d_in], xq)?;
    let xk = Tensor::new(vec![b, d_in], xk)?;

    let mut g = Graph::new();
    let bound = st.model.bind(&mut g);
    let xv = g.constant(xq.clone());
    let h = bound.backbone(&mut g, xv)?;
    let emb = bound.embed(&mut g, h)?;
    let logp = bound.classify(&mut g, h)?;
    let keys = st.model.forward_key(&xk)?;
    let q_vals = g.value(emb).clone();
    let probs = exp_rows(g.value(logp));

    let is_clean = |i: usize| ctx.plus.as_ref().map_or(true, |p| p.clean[i]);
    let meta: Vec<PoolMeta> = (0..b)
        .map(|r| {
            let ex = &data.examples[idx[r]];
            let label = predict_within(&probs[r], &ex.candidates);
            let clean = is_clean(idx[r]);
            PoolMeta {
                label,
                full_label: if clean { label } else { argmax(&probs[r]) },
                clean,
                candidates: ex.candidates,
                example: idx[r],
            }
        })
        .collect();
    let clean_rows: Vec<usize> = (0..b).filter(|&r| meta[r].clean).collect();
    let noisy_rows: Vec<usize> = (0..b).filter(|&r| !meta[r].clean).collect();

    if pico.prototype_mode == PrototypeMode::MovingAverage {
        for &r in &clean_rows {
            st.bank.update(meta[r].label, q_vals.row(r), pico.gamma);
        }
    }

    let lambda = if ctx.warmup { 0.0 } else { pico.lambda };
    let plus_cfg = ctx.plus.as_ref().map(|p| p.cfg);
    let beta = plus_cfg.map_or(0.0, |c| c.beta);
    let needs_pool = lambda > 0.0 || beta > 0.0;

    let pool = Pool::build(&meta, &st.queue);
    let pool_var = if needs_pool {
        let kv = g.constant(keys.clone());
        let mut parts = vec![emb, kv];
        if let Some(qm) = Pool::queue_matrix(&st.queue, q_vals.cols()) {
            parts.push(g.constant(qm));
        }
        Some(g.concat_rows(&parts)?)
    } else {
        None
    };

    if !ctx.warmup {
        for r in 0..b {
            let i = idx[r];
            let s = disambiguate(
                st.targets.get(i),
                q_vals.row(r),
                &st.bank,
                &data.examples[i].candidates,
                ctx.phi,
                pico.tau,
                pico.policy,
            );
            st.targets.set(i, &s);
        }
    }

    let mut targets = Tensor::zeros(&[b, classes]);
    for r in 0..b {
        targets.row_mut(r).copy_from_slice(st.targets.get(idx[r]));
    }

    let mut out = BatchLosses::default();
    let mut clean_parts: Vec<(Var, f64)> = Vec::new();
    if !clean_rows.is_empty() {
        let n_clean = clean_rows.len() as f64;
        let cls = g.soft_cross_entropy(logp, targets.clone(), clean_rows.clone(), n_clean)?;
        out.l_cls = g.value(cls).item();
        clean_parts.push((cls, 1.0));
        if lambda > 0.0 {
            let terms = clean_rows
                .iter()
                .map(|&r| ContrastTerm {
                    anchor: r,
                    exclude: Some(r),
                    positives: select_positives(
                        AnchorInfo {
                            index: r,
                            max_prob: probs[r].iter().cloned().fold(0.0, f64::max),
                        },
                        &pool,
                        pico.positives,
                        ctx.epoch,
                        ctx.plus.is_some(),
                    ),
                })
                .collect();
            let pool_var = pool_var.expect("pool built when lambda > 0");
            let cont = g.contrastive(emb, pool_var, terms, pico.tau, n_clean)?;
            out.l_cont = g.value(cont).item();
            clean_parts.push((cont, lambda));
        }
    }

    let total = match ctx.plus.as_ref() {
        None => {
            if clean_parts.is_empty() {
                return Err(PllError::InvalidArgument("empty batch".into()));
            }
            let total = g.weighted_sum(&clean_parts)?;
            out.l_clean = g.value(total).item();
            total
        }
        Some(plus) => {
            let cfg = plus.cfg;
            let mut parts: Vec<(Var, f64)> = Vec::new();
            if !clean_parts.is_empty() {
                let l_clean = g.weighted_sum(&clean_parts)?;
                out.l_clean = g.value(l_clean).item();
                if cfg.alpha > 0.0 {
                    parts.push((l_clean, cfg.alpha));
                }
            }
            let guessed: Vec<Option<Vec<f64>>> = (0..b)
                .map(|r| (!meta[r].clean).then(|| guess_labels(q_vals.row(r), &st.bank, pico.tau)))
                .collect();
            if beta > 0.0 {
                let pool_var = pool_var.expect("pool built when beta > 0");
                let terms = (0..b)
                    .map(|r| ContrastTerm {
                        anchor: r,
                        exclude: Some(r),
                        positives: noisy_positive_set(r, &pool),
                    })
                    .collect();
                let ncont = g.contrastive(emb, pool_var, terms, pico.tau, b as f64)?;
                out.l_ncont = g.value(ncont).item();
                parts.push((ncont, beta));

                if !noisy_rows.is_empty() {
                    let n_noisy = noisy_rows.len() as f64;
                    if plus.knn_active {
                        let pool_vals = g.value(pool_var).clone();
                        let terms = noisy_rows
                            .iter()
                            .map(|&r| ContrastTerm {
                                anchor: r,
                                exclude: Some(r),
                                positives: knn_positive_set(q_vals.row(r), &pool_vals, Some(r), cfg.k),
                            })
                            .collect();
                        let knn = g.contrastive(emb, pool_var, terms, pico.tau, n_noisy)?;
                        out.l_knn = g.value(knn).item();
                        parts.push((knn, beta));
                    }
                    let mut guess_t = Tensor::zeros(&[b, classes]);
                    for &r in &noisy_rows {
                        guess_t
                            .row_mut(r)
                            .copy_from_slice(guessed[r].as_ref().expect("noisy row"));
                    }
                    let ncls = g.soft_cross_entropy(logp, guess_t, noisy_rows.clone(), n_noisy)?;
                    out.l_ncls = g.value(ncls).item();
                    parts.push((ncls, beta));
                }
            }
            if cfg.mixup {
                let mut s_hat = targets.clone();
                for &r in &noisy_rows {
                    s_hat
                        .row_mut(r)
                        .copy_from_slice(guessed[r].as_ref().expect("noisy row"));
                }
                let (perm, sigmas) = draw_mixup(b, cfg.beta_shape, &mut st.rng)?;
                let (xm, sm) = mixup_batch(&xq, &s_hat, &perm, &sigmas)?;
                let xmv = g.constant(xm);
                let hm = bound.backbone(&mut g, xmv)?;
                let logp_m = bound.classify(&mut g, hm)?;
                let mix = g.soft_cross_entropy(logp_m, sm, (0..b).collect(), b as f64)?;
                out.l_mix = g.value(mix).item();
                parts.insert(0, (mix, 1.0));
            }
            if parts.is_empty() {
                return Err(PllError::InvalidArgument(
                    "every loss term is disabled or empty for this batch".into(),
                ));
            }
            g.weighted_sum(&parts)?
        }
    };
    out.l_total = g.value(total).item();
    check_decomposition(&out, lambda, plus_cfg)?;

    let grads = g.backward(total)?;
    grads.accumulate_into(&g, st.model.params_mut())?;
    sgd_momentum_step(st.model.params_mut(), ctx.lr, ctx.lcfg.sgd_momentum)?;
    st.model.momentum_update(ctx.lcfg.key_momentum)?;
    for r in 0..b {
        st.queue.push(QueueEntry {
            embedding: keys.row(r).to_vec(),
            meta: meta[r],
        });
    }
    Ok(out)
}

/// Recomputes the total from the reported parts and insists on exact
/// agreement.
fn check_decomposition(l: &BatchLosses, lambda: f64, plus: Option<&PicoPlusConfig>) -> Result<()> {
    let clean = if lambda > 0.0 { l.l_cls + lambda * l.l_cont } else { l.l_cls };
    if clean != l.l_clean {
        return Err(PllError::Verification(format!(
            "clean loss {} != L_cls + lambda * L_cont = {clean}",
            l.l_clean
        )));
    }
    let expected = match plus {
        None => clean,
        Some(c) => {
            let mut t = 0.0;
            if c.mixup {
                t += l.l_mix;
            }
            if c.alpha > 0.0 {
                t += c.alpha * l.l_clean;
            }
            if c.beta > 0.0 {
                t += c.beta * l.l_ncont;
                t += c.beta * l.l_knn;
                t += c.beta * l.l_ncls;
            }
            t
        }
    };
    let tol = 1e-12 * expected.abs().max(1.0);
    if (expected - l.l_total).abs() > tol {
        return Err(PllError::Verification(format!(
            "total loss {} != weighted parts {expected}",
            l.l_total
        )));
    }
    Ok(())
}

/// Shuffles the data, runs every batch and averages the losses.
pub(crate) fn run_epoch(
    st: &mut TrainState,
    data: &Dataset,
    pico: &PicoConfig,
    lcfg: &LoopConfig,
    epoch: usize,
    warmup: bool,
    plus: Option<PlusBatch>,
) -> Result<(BatchLosses, f64, f64)> {
    let lr = cosine_lr(epoch, lcfg.epochs, lcfg.base_lr);
    let phi = pico.phi(epoch, lcfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut st.rng);
    let clean_mask = plus.as_ref().map(|p| p.clean);
    let ctx = StepCtx {
        pico,
        lcfg,
        epoch,
        lr,
        phi,
        warmup,
        plus,
    };
    let mut sum = BatchLosses::default();
    for batch in order.chunks(lcfg.batch_size.max(1)) {
        let l = train_batch(st, data, batch, &ctx)?;
        sum.add_scaled(&l, batch.len() as f64);
    }
    let mut mean = BatchLosses::default();
    mean.add_scaled(&sum, 1.0 / data.len().max(1) as f64);

    if pico.prototype_mode == PrototypeMode::Recompute {
        let (emb, probs) = embed_dataset(&st.model, data)?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, e) in data.examples.iter().enumerate() {
            if clean_mask.map_or(true, |m| m[i]) {
                rows.push(i);
                labels.push(predict_within(probs.row(i), &e.candidates));
            }
        }
        st.bank.recompute(&emb.select_rows(&rows), &labels);
    }
    Ok((mean, lr, phi))
}

/// One PiCO epoch. Contrastive learning is off and pseudo-targets stay
/// uniform while `epoch < warmup_epochs`.
pub fn pico_epoch(
    st: &mut TrainState,
    data: &Dataset,
    pico: &PicoConfig,
    lcfg: &LoopConfig,
    epoch: usize,
) -> Result<EpochReport> {
    let warmup = epoch < pico.warmup_epochs;
    let (losses, lr, phi) = run_epoch(st, data, pico, lcfg, epoch, warmup, None)?;
    Ok(EpochReport {
        epoch,
        lr,
        phi,
        losses,
        pseudo_accuracy: st.targets.accuracy(data),
        mmc: st.targets.mean_max_confidence(),
        clean: None,
    })
}
