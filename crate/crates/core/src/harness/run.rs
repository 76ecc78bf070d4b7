use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datagen::{
    apply_flip, apply_noise, load_dataset, save_dataset, AmbiguityStats, Dataset, GaussianBlobs,
    NoiseSpec,
};
use crate::error::{PllError, Result};
use crate::networks::ModelState;
use crate::pico::{embed_dataset, pico_epoch, TrainState};
use crate::picoplus::picoplus_epoch;

use super::config::{Method, RunConfig};
use super::metrics::{evaluate, EpochMetrics, EvalMetrics};

/// Training, test and optional validation data for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    pub validation: Option<Dataset>,
}

/// Generates blob data from the config: partial (and possibly noisy)
/// training labels, exact test labels.
pub fn generate(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let s = cfg.data_seed;
    let blobs = GaussianBlobs::new(cfg.classes, cfg.dim, cfg.spread, s)?;
    let labeled = blobs.sample(cfg.n, s.wrapping_add(1));
    let flip = cfg.flip_spec()?;
    let mut partial = apply_flip(&labeled, cfg.classes, &flip, s.wrapping_add(2))?;
    if cfg.eta > 0.0 {
        let noise = NoiseSpec { eta: cfg.eta };
        partial = apply_noise(&partial, &labeled, cfg.classes, noise, &flip, s.wrapping_add(3))?;
    }
    let train = Dataset::new(cfg.classes, cfg.dim, partial)?;
    let test = Dataset::supervised(
        cfg.classes,
        cfg.dim,
        &blobs.sample(cfg.n_test, s.wrapping_add(4)),
    )?;
    Ok((train, test))
}

/// Loads or generates the data and carves out the validation split.
pub fn prepare_splits(cfg: &RunConfig) -> Result<Splits> {
    let (train, test) = match (&cfg.train_path, &cfg.test_path) {
        (Some(tr), Some(te)) => (load_dataset(tr)?, load_dataset(te)?),
        (Some(_), None) => {
            return Err(PllError::Config(vec![
                "train_path requires test_path".to_string()
            ]))
        }
        _ => generate(cfg)?,
    };
    if train.dim != test.dim || train.classes != test.classes {
        return Err(PllError::Shape(format!(
            "train is {}-dim with {} classes, test is {}-dim with {} classes",
            train.dim, train.classes, test.dim, test.classes
        )));
    }
    split_validation(train, test, cfg.val_fraction, cfg.data_seed)
}

fn split_validation(train: Dataset, test: Dataset, fraction: f64, seed: u64) -> Result<Splits> {
    let k = (fraction * train.len() as f64).round() as usize;
    if k == 0 {
        return Ok(Splits {
            train,
            test,
            validation: None,
        });
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
    order.shuffle(&mut rng);
    let mut held = vec![false; train.len()];
    order[..k].iter().for_each(|&i| held[i] = true);
    let (mut val, mut rest) = (Vec::new(), Vec::new());
    for (i, e) in train.examples.into_iter().enumerate() {
        if held[i] {
            val.push(crate::datagen::LabeledExample {
                features: e.features,
                true_label: e.hidden_true_label,
            });
        } else {
            rest.push(e);
        }
    }
    Ok(Splits {
        validation: Some(Dataset::supervised(train.classes, train.dim, &val)?),
        train: Dataset::new(train.classes, train.dim, rest)?,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub epochs: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub untrained_test_accuracy: f64,
    pub final_test_accuracy: f64,
    pub final_train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub initial_mmc: f64,
    pub final_mmc: f64,
    pub final_pseudo_accuracy: f64,
    pub wall_time_secs: f64,
    pub config: BTreeMap<String, String>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub metrics: Vec<EpochMetrics>,
    pub state: TrainState,
}

impl RunOutcome {
    pub fn metrics_csv(&self) -> String {
        let mut out = EpochMetrics::csv_header();
        out.push('\n');
        for m in &self.metrics {
            out.push_str(&m.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Trains on prepared splits without touching the filesystem.
pub fn train_on(cfg: &RunConfig, splits: &Splits) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let train = &splits.train;
    let encoder = cfg.encoder_config(train.dim, train.classes);
    let lcfg = cfg.loop_config(train.len());
    let pico = cfg.pico_config();
    let plus = cfg.plus_config();
    let mut state = TrainState::new(train, encoder, lcfg.queue_size, cfg.seed)?;
    let initial_mmc = state.targets.mean_max_confidence();
    let untrained = evaluate(&state.model, &splits.test)?.0.accuracy;

    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let report = match cfg.method {
            Method::Pico => pico_epoch(&mut state, train, &pico, &lcfg, epoch)?,
            Method::PicoPlus => picoplus_epoch(&mut state, train, &pico, &plus, &lcfg, epoch)?,
        };
        let test_acc = evaluate(&state.model, &splits.test)?.0.accuracy;
        metrics.push(EpochMetrics::from_report(
            &report,
            test_acc,
            cfg.method == Method::PicoPlus,
        ));
    }

    let final_test_accuracy = metrics.last().map_or(untrained, |m| m.test_accuracy);
    let validation_accuracy = match &splits.validation {
        Some(v) => Some(evaluate(&state.model, v)?.0.accuracy),
        None => None,
    };
    let summary = RunSummary {
        method: cfg.entries()[0].1.clone(),
        epochs: cfg.epochs,
        n_train: train.len(),
        n_test: splits.test.len(),
        untrained_test_accuracy: untrained,
        final_test_accuracy,
        final_train_accuracy: evaluate(&state.model, train)?.0.accuracy,
        validation_accuracy,
        initial_mmc,
        final_mmc: state.targets.mean_max_confidence(),
        final_pseudo_accuracy: state.targets.accuracy(train),
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: cfg
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    };
    Ok(RunOutcome {
        summary,
        metrics,
        state,
    })
}

/// Paths written by [`cmd_gen`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenOutput {
    pub train: PathBuf,
    pub test: PathBuf,
    pub sidecar: PathBuf,
}

#[derive(Debug, Serialize)]
struct Sidecar {
    generator: BTreeMap<String, String>,
    train: AmbiguityStats,
    test: AmbiguityStats,
}

const GENERATOR_KEYS: &[&str] = &[
    "data_seed", "n", "n_test", "classes", "dim", "spread", "flip", "q", "group_size", "eta",
];

/// Writes `train.pll`, `test.pll` and `dataset.json` into `cfg.out`.
pub fn cmd_gen(cfg: &RunConfig) -> Result<GenOutput> {
    cfg.validate()?;
    let (train, test) = generate(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    let out = GenOutput {
        train: cfg.out.join("train.pll"),
        test: cfg.out.join("test.pll"),
        sidecar: cfg.out.join("dataset.json"),
    };
    save_dataset(&out.train, &train)?;
    save_dataset(&out.test, &test)?;
    let sidecar = Sidecar {
        generator: cfg
            .entries()
            .into_iter()
            .filter(|(k, _)| GENERATOR_KEYS.contains(k))
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        train: train.stats(),
        test: test.stats(),
    };
    fs::write(&out.sidecar, serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(out)
}

/// Trains and writes the run directory:
///
/// * `config.txt` - the full effective configuration
/// * `metrics.csv` - one row per epoch
/// * `checkpoint.txt` - final weights
/// * `pseudo_targets.csv` - `index,true_label,s_0..s_{C-1}`
/// * `test_embeddings.csv` - `e_0..e_{d-1},true_label,predicted_label`
/// * `summary.json`
pub fn cmd_train(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let splits = prepare_splits(cfg)?;
    let outcome = train_on(cfg, &splits)?;
    let dir = &cfg.out;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    fs::write(dir.join("metrics.csv"), outcome.metrics_csv())?;
    outcome.state.model.save(&dir.join("checkpoint.txt"))?;

    let c = splits.train.classes;
    let mut targets = String::from("index,true_label");
    for j in 0..c {
        let _ = write!(targets, ",s_{j}");
    }
    targets.push('\n');
    for (i, e) in splits.train.examples.iter().enumerate() {
        let _ = write!(targets, "{i},{}", e.hidden_true_label);
        for v in outcome.state.targets.get(i) {
            let _ = write!(targets, ",{v:?}");
        }
        targets.push('\n');
    }
    fs::write(dir.join("pseudo_targets.csv"), targets)?;

    let (emb, _) = embed_dataset(&outcome.state.model, &splits.test)?;
    let (_, preds) = evaluate(&outcome.state.model, &splits.test)?;
    let mut dump = String::new();
    let cols: Vec<String> = (0..emb.cols()).map(|j| format!("e_{j}")).collect();
    let _ = writeln!(dump, "{},true_label,predicted_label", cols.join(","));
    for (i, e) in splits.test.examples.iter().enumerate() {
        let vals: Vec<String> = emb.row(i).iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(dump, "{},{},{}", vals.join(","), e.hidden_true_label, preds[i]);
    }
    fs::write(dir.join("test_embeddings.csv"), dump)?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&outcome.summary)? + "\n",
    )?;
    Ok(outcome)
}

/// Scores a checkpoint on a dataset file.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path) -> Result<EvalMetrics> {
    let model = ModelState::load(checkpoint)?;
    let data = load_dataset(dataset)?;
    eval_model(&model, &data)
}

pub fn eval_model(model: &ModelState, data: &Dataset) -> Result<EvalMetrics> {
    let cfg = model.config();
    if cfg.d_in != data.dim || cfg.classes != data.classes {
        return Err(PllError::Shape(format!(
            "checkpoint expects {} features and {} classes, dataset has {} and {}",
            cfg.d_in, cfg.classes, data.dim, data.classes
        )));
    }
    Ok(evaluate(model, data)?.0)
}
