//! Test MSE, aggregation over runs and the two-sample t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{DocumentBank, Example, PreparedDataset, SplitKind};
use crate::error::{CarpError, Result};
use crate::model::Model;
use crate::training::{loss_sqr, Checkpoint};

pub fn mse(predictions: &[f64], ratings: &[f64]) -> Result<f64> {
    loss_sqr(predictions, ratings)
}

/// Unclipped MSE of `model` over `examples`.
pub fn model_mse(model: &Model, bank: &DocumentBank, examples: &[Example]) -> Result<f64> {
    let pairs: Vec<(u32, u32)> = examples.iter().map(|e| (e.user, e.item)).collect();
    let predicted: Vec<f64> = model.predict_batch(bank, &pairs)?.iter().map(|b| b.rating).collect();
    let ratings: Vec<f64> = examples.iter().map(|e| e.rating).collect();
    mse(&predicted, &ratings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: String,
    pub mse: f64,
    pub pairs: usize,
}

/// Two-sided unpaired Student t-test with pooled variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: Vec<RunMetrics>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

/// Scores a checkpoint on one split of a dataset prepared with the same
/// vocabulary.
pub fn evaluate(checkpoint: &Checkpoint, data: &PreparedDataset, kind: SplitKind, run: &str) -> Result<RunMetrics> {
    checkpoint.check_vocab(&data.meta.vocab_hash)?;
    let examples = data.split.examples(kind);
    Ok(RunMetrics {
        run: run.to_string(),
        mse: model_mse(&checkpoint.model, &data.bank, &examples)?,
        pairs: examples.len(),
    })
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(runs: Vec<RunMetrics>) -> MetricsReport {
    let values: Vec<f64> = runs.iter().map(|r| r.mse).collect();
    let (mean, std) = mean_std(&values);
    MetricsReport {
        runs,
        mean,
        std,
        comparison: None,
    }
}

pub fn t_test(a: &[f64], b: &[f64]) -> Result<Comparison> {
    if a.is_empty() || b.is_empty() || a.len() + b.len() < 3 {
        return Err(CarpError::Config(format!(
            "t-test needs at least three values in total and one per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, _) = mean_std(a);
    let (mb, _) = mean_std(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ss = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
    let df = na + nb - 2.0;
    let se = (ss / df * (1.0 / na + 1.0 / nb)).sqrt();
    let diff = ma - mb;
    let t = if diff == 0.0 {
        0.0
    } else if se == 0.0 {
        diff.signum() * f64::INFINITY
    } else {
        diff / se
    };
    let p_value = if t.is_infinite() {
        0.0
    } else {
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| CarpError::Config(e.to_string()))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Comparison {
        mean_a: ma,
        mean_b: mb,
        t,
        df,
        p_value,
    })
}
