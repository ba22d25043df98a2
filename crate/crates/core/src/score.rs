//! Temperature-scaled activations, local robustness scores and per-class
//! GREAT Scores.
//!
//! The local score of a sample is `sqrt(pi/2) * max(p_y - max_{j != y} p_j, 0)`
//! where `p = activation(z / T)`. Per-class scores are means of local scores
//! over the samples of each ground-truth class; the aggregate is the mean over
//! all samples.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::accum::CompensatedSum;
use crate::data::{Activation, LogitDataset};
use crate::error::{AuditError, Result};

/// Upper bound of every local score, `sqrt(pi / 2)`.
pub const SCORE_MAX: f64 = 1.253_314_137_315_500_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub temperature: f64,
    pub activation: Activation,
}

impl ScoreConfig {
    pub fn new(temperature: f64, activation: Activation) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(AuditError::Domain(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        Ok(ScoreConfig {
            temperature,
            activation,
        })
    }

    pub fn with_temperature(self, temperature: f64) -> Result<Self> {
        ScoreConfig::new(temperature, self.activation)
    }
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            temperature: 1.0,
            activation: Activation::Sigmoid,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies the activation to `z / T`.
///
/// Sigmoid is elementwise with no normalization. Softmax subtracts the row
/// maximum before exponentiating.
pub fn activate<T: Copy + Into<f64>>(row: &[T], config: &ScoreConfig) -> Vec<f64> {
    let t = config.temperature;
    match config.activation {
        Activation::Sigmoid => row.iter().map(|&z| sigmoid(z.into() / t)).collect(),
        Activation::Softmax => {
            let max = row.iter().map(|&z| z.into() / t).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&z| (z.into() / t - max).exp()).collect();
            let total: CompensatedSum = exps.iter().copied().collect();
            let total = total.total();
            exps.into_iter().map(|e| e / total).collect()
        }
    }
}

/// Local robustness score of one sample. `label` must index into `row`.
///
/// Equivalent to activating the row and taking the clamped margin, but
/// only touches the true logit and the strongest competitor (plus the
/// normalizer for softmax). Both activations are monotone in the logit, so
/// the strongest competitor before activation is also the strongest after.
pub fn local_score<T: Copy + Into<f64>>(row: &[T], label: usize, config: &ScoreConfig) -> f64 {
    let t = config.temperature;
    let true_logit = row[label].into() / t;
    let rival = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, &z)| z.into() / t)
        .fold(f64::NEG_INFINITY, f64::max);
    if rival >= true_logit {
        return 0.0;
    }
    let margin = match config.activation {
        Activation::Sigmoid => sigmoid(true_logit) - sigmoid(rival),
        Activation::Softmax => {
            // true_logit is the row maximum here.
            let normalizer: CompensatedSum = row.iter().map(|&z| (z.into() / t - true_logit).exp()).collect();
            (1.0 - (rival - true_logit).exp()) / normalizer.total()
        }
    };
    SCORE_MAX * margin.max(0.0)
}

/// Counts local-score evaluations (one per sample row activated).
#[derive(Debug, Default)]
pub struct EvalCounter {
    activations: AtomicU64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, rows: u64) {
        self.activations.fetch_add(rows, Ordering::Relaxed);
    }

    pub fn activations(&self) -> u64 {
        self.activations.load(Ordering::Relaxed)
    }
}

/// Per-class GREAT Scores of one model at one temperature.
///
/// `scores[k]` is `None` when class `k` has no samples; such classes are
/// distinct from classes that score zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassProfile {
    pub model_id: String,
    pub temperature: f64,
    pub activation: Activation,
    pub scores: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    pub aggregate: f64,
    pub residual: f64,
    pub class_names: Vec<String>,
}

impl PerClassProfile {
    pub fn num_classes(&self) -> usize {
        self.scores.len()
    }

    pub fn num_samples(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `(class_index, score)` for every class with at least one sample.
    pub fn defined(&self) -> Vec<(usize, f64)> {
        self.scores
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.map(|v| (k, v)))
            .collect()
    }

    pub fn config(&self) -> ScoreConfig {
        ScoreConfig {
            temperature: self.temperature,
            activation: self.activation,
        }
    }
}

pub fn per_class_scores(ds: &LogitDataset, config: &ScoreConfig) -> PerClassProfile {
    per_class_scores_counted(ds, config, &EvalCounter::new())
}

pub fn per_class_scores_counted(ds: &LogitDataset, config: &ScoreConfig, counter: &EvalCounter) -> PerClassProfile {
    let k = ds.num_classes();
    let mut class_sums = vec![CompensatedSum::default(); k];
    let mut counts = vec![0usize; k];
    let mut total = CompensatedSum::default();

    for (row, label) in ds.samples() {
        let g = local_score(row, label, config);
        class_sums[label].add(g);
        counts[label] += 1;
        total.add(g);
    }
    counter.record(ds.num_samples() as u64);

    let scores: Vec<Option<f64>> = class_sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s.total() / n as f64))
        .collect();

    let mut profile = PerClassProfile {
        model_id: ds.model_id().to_string(),
        temperature: config.temperature,
        activation: config.activation,
        scores,
        counts,
        aggregate: total.total() / ds.num_samples() as f64,
        residual: 0.0,
        class_names: ds.class_names().to_vec(),
    };
    profile.residual = decomposition_residual(&profile);
    profile
}

/// `|aggregate - sum_k (n_k / N) * score_k|` over classes with samples.
pub fn decomposition_residual(profile: &PerClassProfile) -> f64 {
    let n = profile.num_samples() as f64;
    let recombined: CompensatedSum = profile
        .scores
        .iter()
        .zip(&profile.counts)
        .filter_map(|(s, &c)| s.map(|v| c as f64 / n * v))
        .collect();
    (profile.aggregate - recombined.total()).abs()
}
