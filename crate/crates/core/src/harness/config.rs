//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! unparsable values and out-of-range settings are all collected and
//! reported together.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::datagen::{AugmentSpec, FlipMatrix, FlipSpec, NoiseSpec};
use crate::error::{PllError, Result};
use crate::networks::EncoderConfig;
use crate::pico::{LoopConfig, PicoConfig, PositiveStrategy, PrototypeMode, TargetPolicy};
use crate::picoplus::{CleanSelection, PicoPlusConfig};

/// Largest queue used when `queue_size = auto`.
pub const MAX_QUEUE: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pico,
    PicoPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipKind {
    Uniform,
    Successor,
    Decaying,
    Hierarchical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositiveKind {
    Default,
    Filter,
    Threshold,
}

/// Every setting of a run. See [`RunConfig::KEYS`] for the file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub policy: TargetPolicy,
    pub seed: u64,
    pub data_seed: u64,
    pub out: PathBuf,

    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub n: usize,
    pub n_test: usize,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub flip: FlipKind,
    pub q: f64,
    pub group_size: usize,
    pub eta: f64,
    pub val_fraction: f64,

    pub hidden: Vec<usize>,
    pub d_emb: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub key_momentum: f64,
    /// `None` means `min(MAX_QUEUE, 4 n)`.
    pub queue_size: Option<usize>,
    pub aug_noise_query: f64,
    pub aug_noise_key: f64,
    pub aug_mask_query: f64,
    pub aug_mask_key: f64,

    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub phi_start: f64,
    pub phi_end: f64,
    pub warmup_epochs: usize,
    pub positives: PositiveKind,
    pub rho: f64,
    pub filter_until_epoch: usize,
    pub delta_conf: f64,
    pub threshold_from_epoch: usize,
    pub prototype_mode: PrototypeMode,

    pub delta: f64,
    pub k: usize,
    pub beta_shape: f64,
    pub alpha: f64,
    pub beta: f64,
    pub plus_warmup_epochs: usize,
    pub knn_enable_epoch: usize,
    pub mixup: bool,
    pub selection: CleanSelection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pico = PicoConfig::default();
        let plus = PicoPlusConfig::default();
        RunConfig {
            method: Method::Pico,
            policy: pico.policy,
            seed: 0,
            data_seed: 0,
            out: PathBuf::from("runs/default"),
            train_path: None,
            test_path: None,
            n: 3000,
            n_test: 1000,
            classes: 6,
            dim: 16,
            spread: 0.3,
            flip: FlipKind::Uniform,
            q: 0.5,
            group_size: 2,
            eta: 0.0,
            val_fraction: 0.0,
            hidden: vec![64, 64],
            d_emb: 128,
            epochs: 100,
            batch_size: 256,
            lr: 0.05,
            sgd_momentum: 0.9,
            key_momentum: 0.999,
            queue_size: None,
            aug_noise_query: 0.1,
            aug_noise_key: 0.05,
            aug_mask_query: 0.1,
            aug_mask_key: 0.0,
            tau: pico.tau,
            lambda: pico.lambda,
            gamma: pico.gamma,
            phi_start: pico.phi_start,
            phi_end: pico.phi_end,
            warmup_epochs: pico.warmup_epochs,
            positives: PositiveKind::Default,
            rho: 0.5,
            filter_until_epoch: 10,
            delta_conf: 0.95,
            threshold_from_epoch: 80,
            prototype_mode: pico.prototype_mode,
            delta: plus.delta,
            k: plus.k,
            beta_shape: plus.beta_shape,
            alpha: plus.alpha,
            beta: plus.beta,
            plus_warmup_epochs: plus.warmup_epochs,
            knn_enable_epoch: plus.knn_enable_epoch,
            mixup: plus.mixup,
            selection: plus.selection,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse::<T>()
        .map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn parse_bool(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Every accepted key, in the order used by [`RunConfig::to_text`].
    pub const KEYS: &'static [&'static str] = &[
        "method", "seed", "data_seed", "out", "train_path", "test_path", "n", "n_test",
        "classes", "dim", "spread", "flip", "q", "group_size", "eta", "val_fraction", "hidden",
        "d_emb", "epochs", "batch_size", "lr", "sgd_momentum", "key_momentum", "queue_size",
        "aug_noise_query", "aug_noise_key", "aug_mask_query", "aug_mask_key", "tau", "lambda",
        "gamma", "phi_start", "phi_end", "warmup_epochs", "positives", "rho",
        "filter_until_epoch", "delta_conf", "threshold_from_epoch", "prototype_mode", "delta",
        "k", "beta_shape", "alpha", "beta", "plus_warmup_epochs", "knn_enable_epoch", "mixup",
        "selection",
    ];

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "method" => match v {
                "pico" => {
                    self.method = Method::Pico;
                    self.policy = TargetPolicy::Pico;
                }
                "picoplus" => {
                    self.method = Method::PicoPlus;
                    self.policy = TargetPolicy::Pico;
                }
                other => {
                    self.policy = TargetPolicy::parse(other).ok_or_else(|| {
                        format!(
                            "method: expected pico, picoplus, onehot_prototype, soft_prototype, \
                             ma_soft_prototype or uniform, got {other:?}"
                        )
                    })?;
                    self.method = Method::Pico;
                }
            },
            "seed" => self.seed = parse_num(key, v)?,
            "data_seed" => self.data_seed = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "train_path" => self.train_path = opt_path(v),
            "test_path" => self.test_path = opt_path(v),
            "n" => self.n = parse_num(key, v)?,
            "n_test" => self.n_test = parse_num(key, v)?,
            "classes" => self.classes = parse_num(key, v)?,
            "dim" => self.dim = parse_num(key, v)?,
            "spread" => self.spread = parse_num(key, v)?,
            "flip" => {
                self.flip = match v {
                    "uniform" => FlipKind::Uniform,
                    "successor" => FlipKind::Successor,
                    "decaying" => FlipKind::Decaying,
                    "hierarchical" => FlipKind::Hierarchical,
                    _ => return Err(format!("flip: unknown kind {v:?}")),
                }
            }
            "q" => self.q = parse_num(key, v)?,
            "group_size" => self.group_size = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "val_fraction" => self.val_fraction = parse_num(key, v)?,
            "hidden" => {
                self.hidden = v
                    .split(',')
                    .map(|t| parse_num(key, t.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "d_emb" => self.d_emb = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "sgd_momentum" => self.sgd_momentum = parse_num(key, v)?,
            "key_momentum" => self.key_momentum = parse_num(key, v)?,
            "queue_size" => {
                self.queue_size = if v == "auto" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "aug_noise_query" => self.aug_noise_query = parse_num(key, v)?,
            "aug_noise_key" => self.aug_noise_key = parse_num(key, v)?,
            "aug_mask_query" => self.aug_mask_query = parse_num(key, v)?,
            "aug_mask_key" => self.aug_mask_key = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "phi_start" => self.phi_start = parse_num(key, v)?,
            "phi_end" => self.phi_end = parse_num(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse_num(key, v)?,
            "positives" => {
                self.positives = match v {
                    "default" => PositiveKind::Default,
                    "filter" => PositiveKind::Filter,
                    "threshold" => PositiveKind::Threshold,
                    _ => return Err(format!("positives: unknown strategy {v:?}")),
                }
            }
            "rho" => self.rho = parse_num(key, v)?,
            "filter_until_epoch" => self.filter_until_epoch = parse_num(key, v)?,
            "delta_conf" => self.delta_conf = parse_num(key, v)?,
            "threshold_from_epoch" => self.threshold_from_epoch = parse_num(key, v)?,
            "prototype_mode" => {
                self.prototype_mode = match v {
                    "moving_average" => PrototypeMode::MovingAverage,
                    "recompute" => PrototypeMode::Recompute,
                    _ => return Err(format!("prototype_mode: unknown mode {v:?}")),
                }
            }
            "delta" => self.delta = parse_num(key, v)?,
            "k" => self.k = parse_num(key, v)?,
            "beta_shape" => self.beta_shape = parse_num(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "plus_warmup_epochs" => self.plus_warmup_epochs = parse_num(key, v)?,
            "knn_enable_epoch" => self.knn_enable_epoch = parse_num(key, v)?,
            "mixup" => self.mixup = parse_bool(key, v)?,
            "selection" => {
                self.selection = match v {
                    "distance" => CleanSelection::Distance,
                    "small_loss" => CleanSelection::SmallLoss,
                    _ => return Err(format!("selection: unknown rule {v:?}")),
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut errors = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = cfg.set(k.trim(), v.trim()) {
                        errors.push(format!("line {}: {e}", no + 1));
                    }
                }
                None => errors.push(format!("line {}: expected key = value", no + 1)),
            }
        }
        errors.extend(cfg.problems());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(PllError::Config(errors))
        }
    }

    fn value_of(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        match key {
            "method" => match self.method {
                Method::PicoPlus => "picoplus".into(),
                Method::Pico if self.policy == TargetPolicy::Pico => "pico".into(),
                Method::Pico => self.policy.name().into(),
            },
            "seed" => self.seed.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "out" => self.out.display().to_string(),
            "train_path" => path(&self.train_path),
            "test_path" => path(&self.test_path),
            "n" => self.n.to_string(),
            "n_test" => self.n_test.to_string(),
            "classes" => self.classes.to_string(),
            "dim" => self.dim.to_string(),
            "spread" => format!("{:?}", self.spread),
            "flip" => match self.flip {
                FlipKind::Uniform => "uniform",
                FlipKind::Successor => "successor",
                FlipKind::Decaying => "decaying",
                FlipKind::Hierarchical => "hierarchical",
            }
            .into(),
            "q" => format!("{:?}", self.q),
            "group_size" => self.group_size.to_string(),
            "eta" => format!("{:?}", self.eta),
            "val_fraction" => format!("{:?}", self.val_fraction),
            "hidden" => self
                .hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "d_emb" => self.d_emb.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => format!("{:?}", self.lr),
            "sgd_momentum" => format!("{:?}", self.sgd_momentum),
            "key_momentum" => format!("{:?}", self.key_momentum),
            "queue_size" => self.queue_size.map_or("auto".into(), |q| q.to_string()),
            "aug_noise_query" => format!("{:?}", self.aug_noise_query),
            "aug_noise_key" => format!("{:?}", self.aug_noise_key),
            "aug_mask_query" => format!("{:?}", self.aug_mask_query),
            "aug_mask_key" => format!("{:?}", self.aug_mask_key),
            "tau" => format!("{:?}", self.tau),
            "lambda" => format!("{:?}", self.lambda),
            "gamma" => format!("{:?}", self.gamma),
            "phi_start" => format!("{:?}", self.phi_start),
            "phi_end" => format!("{:?}", self.phi_end),
            "warmup_epochs" => self.warmup_epochs.to_string(),
            "positives" => match self.positives {
                PositiveKind::Default => "default",
                PositiveKind::Filter => "filter",
                PositiveKind::Threshold => "threshold",
            }
            .into(),
            "rho" => format!("{:?}", self.rho),
            "filter_until_epoch" => self.filter_until_epoch.to_string(),
            "delta_conf" => format!("{:?}", self.delta_conf),
            "threshold_from_epoch" => self.threshold_from_epoch.to_string(),
            "prototype_mode" => match self.prototype_mode {
                PrototypeMode::MovingAverage => "moving_average",
                PrototypeMode::Recompute => "recompute",
            }
            .into(),
            "delta" => format!("{:?}", self.delta),
            "k" => self.k.to_string(),
            "beta_shape" => format!("{:?}", self.beta_shape),
            "alpha" => format!("{:?}", self.alpha),
            "beta" => format!("{:?}", self.beta),
            "plus_warmup_epochs" => self.plus_warmup_epochs.to_string(),
            "knn_enable_epoch" => self.knn_enable_epoch.to_string(),
            "mixup" => self.mixup.to_string(),
            "selection" => match self.selection {
                CleanSelection::Distance => "distance",
                CleanSelection::SmallLoss => "small_loss",
            }
            .into(),
            _ => unreachable!("value_of called with unknown key {key}"),
        }
    }

    /// `(key, value)` for every setting.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        Self::KEYS.iter().map(|k| (*k, self.value_of(k))).collect()
    }

    /// Full config text; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Every constraint violation, empty when the config is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.train_path.is_none() {
            if self.classes < 2 || self.classes > crate::datagen::MAX_CLASSES {
                out.push(format!(
                    "classes must lie in [2, {}], got {}",
                    crate::datagen::MAX_CLASSES,
                    self.classes
                ));
            }
            if self.dim < 2 {
                out.push(format!("dim must be >= 2, got {}", self.dim));
            }
            if self.n < self.classes {
                out.push(format!("n must be >= classes, got {}", self.n));
            }
            if self.n_test < self.classes {
                out.push(format!("n_test must be >= classes, got {}", self.n_test));
            }
            if !(self.spread >= 0.0) {
                out.push(format!("spread must be >= 0, got {}", self.spread));
            }
            if !(0.0..=1.0).contains(&self.q) {
                out.push(format!("q must lie in [0, 1], got {}", self.q));
            }
            if let Err(e) = (NoiseSpec { eta: self.eta }).validate() {
                out.push(e.to_string());
            }
            if self.group_size == 0 {
                out.push("group_size must be >= 1".into());
            }
        }
        if self.test_path.is_some() && self.train_path.is_none() {
            out.push("test_path requires train_path".into());
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            out.push(format!("val_fraction must lie in [0, 0.5), got {}", self.val_fraction));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.d_emb == 0 {
            out.push("hidden widths and d_emb must be >= 1".into());
        }
        if self.queue_size == Some(0) {
            out.push("queue_size must be >= 1 or auto".into());
        }
        out.extend(self.pico_config().problems());
        out.extend(self.loop_config(1).problems());
        if self.method == Method::PicoPlus {
            out.extend(self.plus_config().problems());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(PllError::Config(p))
        }
    }

    pub fn pico_config(&self) -> PicoConfig {
        PicoConfig {
            tau: self.tau,
            lambda: self.lambda,
            gamma: self.gamma,
            phi_start: self.phi_start,
            phi_end: self.phi_end,
            warmup_epochs: self.warmup_epochs,
            positives: match self.positives {
                PositiveKind::Default => PositiveStrategy::Default,
                PositiveKind::Filter => PositiveStrategy::Filter {
                    rho: self.rho,
                    until_epoch: self.filter_until_epoch,
                },
                PositiveKind::Threshold => PositiveStrategy::Threshold {
                    delta_conf: self.delta_conf,
                    from_epoch: self.threshold_from_epoch,
                },
            },
            policy: self.policy,
            prototype_mode: self.prototype_mode,
        }
    }

    pub fn plus_config(&self) -> PicoPlusConfig {
        PicoPlusConfig {
            delta: self.delta,
            k: self.k,
            beta_shape: self.beta_shape,
            alpha: self.alpha,
            beta: self.beta,
            warmup_epochs: self.plus_warmup_epochs,
            knn_enable_epoch: self.knn_enable_epoch,
            mixup: self.mixup,
            selection: self.selection,
        }
    }

    /// Loop settings for a training set of `n` examples.
    pub fn loop_config(&self, n: usize) -> LoopConfig {
        LoopConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.lr,
            sgd_momentum: self.sgd_momentum,
            key_momentum: self.key_momentum,
            queue_size: self.queue_size.unwrap_or_else(|| MAX_QUEUE.min(4 * n)),
            augment: AugmentSpec {
                noise_sigma_query: self.aug_noise_query,
                noise_sigma_key: self.aug_noise_key,
                mask_prob_query: self.aug_mask_query,
                mask_prob_key: self.aug_mask_key,
            },
        }
    }

    pub fn encoder_config(&self, d_in: usize, classes: usize) -> EncoderConfig {
        EncoderConfig {
            d_in,
            hidden: self.hidden.clone(),
            d_emb: self.d_emb,
            classes,
        }
    }

    pub fn flip_spec(&self) -> Result<FlipSpec> {
        Ok(match self.flip {
            FlipKind::Uniform => FlipSpec::Uniform { q: self.q },
            FlipKind::Successor => FlipSpec::Matrix(FlipMatrix::successor_preset(self.classes)?),
            FlipKind::Decaying => FlipSpec::Matrix(FlipMatrix::decaying_preset(self.classes)?),
            FlipKind::Hierarchical => {
                FlipSpec::hierarchical_contiguous(self.classes, self.group_size, self.q)
            }
        })
    }
}
