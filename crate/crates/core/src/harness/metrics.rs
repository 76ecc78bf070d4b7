use serde::Serialize;

use crate::datagen::Dataset;
use crate::error::Result;
use crate::networks::{argmax, ModelState};
use crate::pico::{BatchLosses, CleanStats, EpochReport};

/// Column order of the metrics CSV.
pub const CSV_COLUMNS: &[&str] = &[
    "epoch",
    "lr",
    "phi",
    "l_cls",
    "l_cont",
    "l_total",
    "test_accuracy",
    "pseudo_accuracy",
    "mmc",
    "l_clean",
    "l_mix",
    "l_ncont",
    "l_knn",
    "l_ncls",
    "clean_fraction",
    "clean_precision",
    "clean_recall",
];

/// Columns present for every method.
pub const COMMON_COLUMNS: usize = 9;

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub phi: f64,
    pub losses: BatchLosses,
    pub test_accuracy: f64,
    pub pseudo_accuracy: f64,
    pub mmc: f64,
    /// Robust-training extras; `None` for plain runs and warm-up epochs.
    pub robust: Option<RobustColumns>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustColumns {
    pub clean: Option<CleanStats>,
}

impl EpochMetrics {
    pub fn from_report(r: &EpochReport, test_accuracy: f64, robust: bool) -> Self {
        EpochMetrics {
            epoch: r.epoch,
            lr: r.lr,
            phi: r.phi,
            losses: r.losses,
            test_accuracy,
            pseudo_accuracy: r.pseudo_accuracy,
            mmc: r.mmc,
            robust: robust.then_some(RobustColumns { clean: r.clean }),
        }
    }

    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    /// Values in [`CSV_COLUMNS`] order, shortest round-trip formatting,
    /// empty fields where a column does not apply.
    pub fn csv_row(&self) -> String {
        let f = |v: f64| format!("{v:?}");
        let l = &self.losses;
        let mut cells = vec![
            self.epoch.to_string(),
            f(self.lr),
            f(self.phi),
            f(l.l_cls),
            f(l.l_cont),
            f(l.l_total),
            f(self.test_accuracy),
            f(self.pseudo_accuracy),
            f(self.mmc),
        ];
        match &self.robust {
            Some(ext) => {
                cells.extend([l.l_clean, l.l_mix, l.l_ncont, l.l_knn, l.l_ncls].map(f));
                match ext.clean {
                    Some(c) => cells.extend([c.fraction, c.precision, c.recall].map(f)),
                    None => cells.extend(std::iter::repeat(String::new()).take(3)),
                }
            }
            None => cells.extend(std::iter::repeat(String::new()).take(8)),
        }
        cells.join(",")
    }
}

/// Accuracy of a model on a labeled split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// Mean over examples of the largest predicted class probability.
    pub mmc: f64,
}

/// Predictions are unrestricted argmaxes, scored against the hidden labels.
pub fn evaluate(model: &ModelState, data: &Dataset) -> Result<(EvalMetrics, Vec<usize>)> {
    let (_, probs) = crate::pico::embed_dataset(model, data)?;
    let c = data.classes;
    let mut hits = vec![0usize; c];
    let mut counts = vec![0usize; c];
    let mut mmc = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    for (i, e) in data.examples.iter().enumerate() {
        let row = probs.row(i);
        let p = argmax(row);
        preds.push(p);
        counts[e.hidden_true_label] += 1;
        if p == e.hidden_true_label {
            hits[e.hidden_true_label] += 1;
        }
        mmc += row[p];
    }
    let n = data.len();
    let total_hits: usize = hits.iter().sum();
    Ok((
        EvalMetrics {
            n,
            accuracy: if n == 0 { 0.0 } else { total_hits as f64 / n as f64 },
            per_class_accuracy: hits
                .iter()
                .zip(&counts)
                .map(|(&h, &k)| if k == 0 { 0.0 } else { h as f64 / k as f64 })
                .collect(),
            mmc: if n == 0 { 0.0 } else { mmc / n as f64 },
        },
        preds,
    ))
}

/// Parses a metrics CSV back into rows of optional numbers.
pub fn read_csv(text: &str) -> Vec<Vec<Option<f64>>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|c| c.parse().ok()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(robust: Option<RobustColumns>) -> EpochMetrics {
        EpochMetrics {
            epoch: 3,
            lr: 0.1,
            phi: 0.9,
            losses: BatchLosses {
                l_cls: 1.0,
                l_total: 1.5,
                ..Default::default()
            },
            test_accuracy: 0.5,
            pseudo_accuracy: 0.25,
            mmc: 0.75,
            robust,
        }
    }

    #[test]
    fn row_has_one_cell_per_column() {
        for ext in [
            None,
            Some(RobustColumns { clean: None }),
            Some(RobustColumns {
                clean: Some(CleanStats {
                    fraction: 0.8,
                    precision: 0.9,
                    recall: 0.95,
                }),
            }),
        ] {
            let row = sample(ext).csv_row();
            assert_eq!(row.split(',').count(), CSV_COLUMNS.len());
        }
        let parsed = read_csv(&format!("{}\n{}\n", EpochMetrics::csv_header(), sample(None).csv_row()));
        assert_eq!(parsed[0][0], Some(3.0));
        assert_eq!(parsed[0][COMMON_COLUMNS], None);
    }
}
