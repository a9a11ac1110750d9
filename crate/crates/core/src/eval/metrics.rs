use serde::{Deserialize, Serialize};

use crate::judge::{classify, predict_probs, DraftModel};
use crate::trajgen::TrajectoryExample;
use crate::{Error, Result};

/// Binary classification metrics with unsafe (1) as the positive class.
/// An undefined precision or recall (zero denominator) is reported as 0 and
/// flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n: usize,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub config_id: Option<String>,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let n = tp + fp + tn + fn_;
        if n == 0 {
            return Err(Error::Usage("metrics over an empty set".into()));
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok(Self {
            accuracy: (tp + tn) as f64 / n as f64,
            f1,
            precision,
            recall,
            tp,
            fp,
            tn,
            fn_,
            n,
            precision_undefined: tp + fp == 0,
            recall_undefined: tp + fn_ == 0,
            seed: None,
            config_id: None,
        })
    }

    pub fn from_predictions(labels: &[u8], predictions: &[u8]) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Usage(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&y, &p) in labels.iter().zip(predictions) {
            match (y, p) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (0, 0) => tn += 1,
                (1, 0) => fn_ += 1,
                _ => return Err(Error::Input(format!("non-binary label pair ({y}, {p})"))),
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

/// Hard-label metrics of `model` on `examples` at threshold `tau`.
pub fn evaluate(model: &DraftModel, examples: &[TrajectoryExample], tau: f64) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::Usage("evaluate needs at least one example".into()));
    }
    let probs = predict_probs(model, examples)?;
    let preds: Vec<u8> = probs.iter().map(|&p| classify(p, tau)).collect();
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let mut report = MetricsReport::from_predictions(&labels, &preds)?;
    report.seed = Some(model.config.seed);
    Ok(report)
}

/// Mean and sample standard deviation; the deviation is absent below two
/// values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    if values.is_empty() {
        return (f64::NAN, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}
