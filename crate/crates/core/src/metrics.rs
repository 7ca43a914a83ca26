//! Multi-label F1 scores and multi-run curve aggregation.
//!
//! Every degenerate ratio (`0 / 0`) is defined as `0`. Macro F1 averages over
//! all classes, including classes with no positives in the evaluated set.

use serde::{Deserialize, Serialize};

use crate::dataset::{MultiLabelVector, Sample};
use crate::error::{check_dim, Error, Result};
use crate::model::ModelParams;
use crate::query::{pseudo_label, PSEUDO_LABEL_THRESHOLD};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn f1(&self) -> f64 {
        f1_from(self.tp, self.fp, self.fn_)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: Vec<ClassCounts>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_from(tp: u64, fp: u64, fn_: u64) -> f64 {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn confusion(
    predictions: &[MultiLabelVector],
    truths: &[MultiLabelVector],
) -> Result<ConfusionCounts> {
    check_dim(truths.len(), predictions.len())?;
    let c = truths
        .first()
        .or(predictions.first())
        .map_or(0, |v| v.len());
    let mut per_class = vec![ClassCounts::default(); c];
    for (pred, truth) in predictions.iter().zip(truths) {
        check_dim(c, pred.len())?;
        check_dim(c, truth.len())?;
        for (counts, (&p, &t)) in per_class
            .iter_mut()
            .zip(pred.bits().iter().zip(truth.bits()))
        {
            match (p, t) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => counts.tn += 1,
            }
        }
    }
    Ok(ConfusionCounts { per_class })
}

pub fn micro_f1(counts: &ConfusionCounts) -> f64 {
    let (tp, fp, fn_) = counts
        .per_class
        .iter()
        .fold((0, 0, 0), |(a, b, c), k| (a + k.tp, b + k.fp, c + k.fn_));
    f1_from(tp, fp, fn_)
}

pub fn per_class_f1(counts: &ConfusionCounts) -> Vec<f64> {
    counts.per_class.iter().map(ClassCounts::f1).collect()
}

pub fn macro_f1(counts: &ConfusionCounts) -> f64 {
    let f1s = per_class_f1(counts);
    if f1s.is_empty() {
        0.0
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub counts: ConfusionCounts,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

/// Thresholds the model's probabilities at 0.5 and scores them against the true labels.
pub fn evaluate(params: &ModelParams, samples: &[Sample]) -> Result<Evaluation> {
    let predictions = samples
        .iter()
        .map(|s| {
            params
                .forward(&s.features)
                .map(|f| pseudo_label(&f.probs, PSEUDO_LABEL_THRESHOLD))
        })
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<MultiLabelVector> = samples.iter().map(|s| s.labels.clone()).collect();
    let mut counts = confusion(&predictions, &truths)?;
    if counts.per_class.is_empty() {
        counts.per_class = vec![ClassCounts::default(); params.num_classes()];
    }
    Ok(Evaluation {
        micro_f1: micro_f1(&counts),
        macro_f1: macro_f1(&counts),
        per_class_f1: per_class_f1(&counts),
        counts,
    })
}

/// One evaluated point on a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub labeled_count: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub labeled_count: usize,
    pub micro_mean: f64,
    pub micro_std: f64,
    pub macro_mean: f64,
    pub macro_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub runs: usize,
    pub checkpoints: Vec<CheckpointStats>,
    /// Macro F1 averaged over checkpoints within each run, then across runs.
    pub mean_macro_over_iterations: f64,
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pointwise statistics over runs that share a labeled-count grid.
///
/// Runs are sorted internally before summing, so the result does not depend
/// on input order.
pub fn aggregate(curves: &[Vec<CurvePoint>]) -> Result<CurveSummary> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Aggregation("no runs to aggregate".into()))?;
    let grid: Vec<usize> = first.iter().map(|p| p.labeled_count).collect();
    if grid.is_empty() {
        return Err(Error::Aggregation("runs have no checkpoints".into()));
    }
    for (i, c) in curves.iter().enumerate() {
        let g: Vec<usize> = c.iter().map(|p| p.labeled_count).collect();
        if g != grid {
            return Err(Error::Aggregation(format!(
                "run {i} has checkpoints {g:?}, expected {grid:?}"
            )));
        }
    }
    let mut ordered: Vec<&Vec<CurvePoint>> = curves.iter().collect();
    ordered.sort_by(|a, b| {
        let key = |c: &Vec<CurvePoint>| {
            c.iter()
                .map(|p| (p.micro_f1, p.macro_f1))
                .collect::<Vec<_>>()
        };
        key(a)
            .iter()
            .zip(key(b).iter())
            .map(|(x, y)| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let checkpoints = grid
        .iter()
        .enumerate()
        .map(|(t, &labeled_count)| {
            let micro: Vec<f64> = ordered.iter().map(|c| c[t].micro_f1).collect();
            let macro_: Vec<f64> = ordered.iter().map(|c| c[t].macro_f1).collect();
            let (micro_mean, micro_std) = mean_std(&micro);
            let (macro_mean, macro_std) = mean_std(&macro_);
            CheckpointStats {
                labeled_count,
                micro_mean,
                micro_std,
                macro_mean,
                macro_std,
            }
        })
        .collect();
    let per_run: Vec<f64> = ordered
        .iter()
        .map(|c| c.iter().map(|p| p.macro_f1).sum::<f64>() / c.len() as f64)
        .collect();
    Ok(CurveSummary {
        runs: curves.len(),
        checkpoints,
        mean_macro_over_iterations: mean_std(&per_run).0,
    })
}
