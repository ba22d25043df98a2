//! Deterministic synthetic logit datasets.
//!
//! [`synthesize`] pins per-class scores to requested targets: every sample of
//! class `k` gets the same logit row, built so its local score equals the
//! target. Rows have the true logit at `+m` and every competitor at `-m`;
//! for sigmoid the margin is `tanh(m / 2T)` and is inverted in closed form,
//! for softmax `m` is found by bisection. The per-class mean of identical
//! rows is then that row's score.
//!
//! The calibration families further down are small hand-built model sets
//! with known rank-correlation behavior across temperatures.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Activation, LogitDataset};
use crate::error::{AuditError, Result};
use crate::score::{local_score, ScoreConfig, SCORE_MAX};

fn default_id() -> String {
    "synthetic".to_string()
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "default_id")]
    pub model_id: String,
    #[serde(default = "default_id")]
    pub dataset_id: String,
    pub num_classes: usize,
    /// Samples per class, length `num_classes`.
    pub counts: Vec<usize>,
    /// Per-class targets in `[0, sqrt(pi/2))`; drawn from `seed` when absent.
    #[serde(default)]
    pub target_scores: Option<Vec<f64>>,
    pub activation: Activation,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
}

impl SyntheticSpec {
    pub fn new(counts: Vec<usize>, target_scores: Option<Vec<f64>>, activation: Activation) -> Self {
        SyntheticSpec {
            model_id: default_id(),
            dataset_id: default_id(),
            num_classes: counts.len(),
            counts,
            target_scores,
            activation,
            temperature: 1.0,
            seed: 0,
            class_names: None,
        }
    }
}

/// Activated margin of the row `(+m, -m, ..., -m)` with `k` classes.
fn symmetric_margin(m: f64, k: usize, config: &ScoreConfig) -> f64 {
    let x = 2.0 * m / config.temperature;
    match config.activation {
        Activation::Sigmoid => (x / 2.0).tanh(),
        // (e^x - 1) / (e^x + k - 1), rewritten to stay finite for large x
        Activation::Softmax => {
            let e = (-x).exp();
            (1.0 - e) / (1.0 + (k as f64 - 1.0) * e)
        }
    }
}

/// Logit half-gap `m` whose symmetric row has activated margin `target`.
pub fn invert_margin(target: f64, k: usize, config: &ScoreConfig) -> Result<f64> {
    if !(0.0..1.0).contains(&target) {
        return Err(AuditError::Infeasible(format!(
            "activated margin {target} outside [0, 1)"
        )));
    }
    match config.activation {
        Activation::Sigmoid => Ok(2.0 * config.temperature * target.atanh()),
        Activation::Softmax => {
            let mut hi = config.temperature;
            while symmetric_margin(hi, k, config) < target {
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(AuditError::Infeasible(format!("margin {target} not reachable")));
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if symmetric_margin(mid, k, config) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// One logit row of class `class` (out of `k`) scoring `target`.
pub fn row_for_target(class: usize, k: usize, target: f64, config: &ScoreConfig) -> Result<Vec<f32>> {
    if !(0.0..SCORE_MAX).contains(&target) {
        return Err(AuditError::Infeasible(format!(
            "class {class}: target {target} outside [0, sqrt(pi/2))"
        )));
    }
    if target == 0.0 {
        // true logit below one competitor
        let mut row = vec![0.0f32; k];
        row[class] = -1.0;
        row[(class + 1) % k] = 1.0;
        return Ok(row);
    }
    let m = invert_margin(target / SCORE_MAX, k, config)? as f32;
    let mut row = vec![-m; k];
    row[class] = m;
    Ok(row)
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<LogitDataset> {
    let k = spec.num_classes;
    if k < 2 {
        return Err(AuditError::Domain(format!("need at least 2 classes, got {k}")));
    }
    if spec.counts.len() != k {
        return Err(AuditError::Domain(format!(
            "{} counts for {k} classes",
            spec.counts.len()
        )));
    }
    let config = ScoreConfig::new(spec.temperature, spec.activation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let targets = match &spec.target_scores {
        Some(t) if t.len() != k => return Err(AuditError::Domain(format!("{} targets for {k} classes", t.len()))),
        Some(t) => t.clone(),
        None => (0..k).map(|_| rng.gen::<f64>() * 0.95 * SCORE_MAX).collect(),
    };

    let rows = targets
        .iter()
        .enumerate()
        .map(|(c, &t)| row_for_target(c, k, t, &config))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<u32> = spec
        .counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n))
        .collect();
    order.shuffle(&mut rng);

    let mut logits = Vec::with_capacity(order.len() * k);
    for &label in &order {
        logits.extend_from_slice(&rows[label as usize]);
    }
    LogitDataset::new(
        spec.model_id.clone(),
        spec.dataset_id.clone(),
        k,
        logits,
        order,
        spec.class_names.clone(),
    )
}

/// Random logits with random labels; some classes may end up empty.
///
/// A random boost on the true logit keeps a mix of correctly and
/// incorrectly classified rows.
pub fn random_dataset(k: usize, n: usize, seed: u64) -> Result<LogitDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logits = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.gen_range(0..k);
        let start = logits.len();
        logits.extend((0..k).map(|_| rng.gen_range(-4.0f32..4.0)));
        logits[start + label] += rng.gen_range(0.0f32..6.0);
        labels.push(label as u32);
    }
    LogitDataset::new(format!("random_{seed}"), "random", k, logits, labels, None)
}

/// A candidate model for calibration: its logits plus an accuracy.
pub type ModelFixture = (LogitDataset, f64);

fn single_margin_model(id: &str, margin: f32, correct: usize, wrong: usize) -> Result<LogitDataset> {
    let mut logits = Vec::new();
    for _ in 0..correct {
        logits.extend_from_slice(&[margin, 0.0]);
    }
    for _ in 0..wrong {
        logits.extend_from_slice(&[0.0, 1.0]);
    }
    LogitDataset::new(id, "family", 2, logits, vec![0; correct + wrong], None)
}

/// Models whose aggregate score is strictly increasing in accuracy at every
/// temperature: model `m` classifies `m + 1` of `models` class-0 rows
/// correctly, all with the same margin. Each model also misclassifies one
/// class-1 row so that both classes are defined. Sigmoid activation.
pub fn monotone_family(models: usize) -> Result<Vec<ModelFixture>> {
    (0..models)
        .map(|m| {
            let base = single_margin_model(&format!("mono_{m}"), 1.0, m + 1, models - m - 1)?;
            let mut logits = base.logits().to_vec();
            logits.extend_from_slice(&[1.0, 0.0]);
            let mut labels = base.labels().to_vec();
            labels.push(1);
            let ds = LogitDataset::new(base.model_id(), "family", 2, logits, labels, None)?;
            Ok((ds, 50.0 + m as f64))
        })
        .collect()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Margin `s` such that a model scoring `fraction * g(s, T)` ties a model
/// scoring `g(base, T)` exactly at `t_cross` (sigmoid, competitor logit 0).
fn crossing_margin(base: f64, fraction: f64, t_cross: f64) -> Result<f64> {
    let p = (sigmoid(base / t_cross) - 0.5) / fraction + 0.5;
    if !(0.5..1.0).contains(&p) {
        return Err(AuditError::Infeasible(format!(
            "no crossing at T = {t_cross} for base margin {base}"
        )));
    }
    Ok(t_cross * logit(p))
}

/// Three sigmoid models whose rank correlation with accuracy is 1 exactly on
/// `(plateau_start, plateau_end)` and below 1 elsewhere.
///
/// Model `hi` (accuracy 90) gets half its rows right with a large margin,
/// model `mid` (80) gets every row right with a small margin, model `lo`
/// (70) a quarter of its rows with a larger margin still. Small
/// temperatures favor many correct rows, large ones favor large margins, so
/// `hi` overtakes `mid` at `plateau_start` and `lo` overtakes `mid` at
/// `plateau_end`.
pub fn planted_peak_family(plateau_start: f64, plateau_end: f64) -> Result<Vec<ModelFixture>> {
    if !(plateau_start > 0.0 && plateau_end > plateau_start) {
        return Err(AuditError::Domain("plateau must satisfy 0 < start < end".into()));
    }
    let base = 0.4 * plateau_start;
    let wide = crossing_margin(base, 0.5, plateau_start)?;
    let widest = crossing_margin(base, 0.25, plateau_end)?;
    Ok(vec![
        (single_margin_model("plant_hi", wide as f32, 1, 1)?, 90.0),
        (single_margin_model("plant_mid", base as f32, 1, 0)?, 80.0),
        (single_margin_model("plant_lo", widest as f32, 1, 3)?, 70.0),
    ])
}

/// Three-class sigmoid dataset whose classes 0 and 1 swap rank at
/// `t_cross`; class 2 always scores 0.
pub fn rank_crossing_dataset(t_cross: f64) -> Result<LogitDataset> {
    let base = 0.4 * t_cross;
    let wide = crossing_margin(base, 0.5, t_cross)? as f32;
    let logits = vec![
        base as f32,
        0.0,
        0.0, // class 0, every row right, small margin
        0.0,
        wide,
        0.0, // class 1, large margin
        1.0,
        0.0,
        0.0, // class 1, wrong
        1.0,
        0.0,
        0.0, // class 2, wrong
    ];
    LogitDataset::new("crossing", "family", 3, logits, vec![0, 1, 1, 2], None)
}

/// Achieved local score of [`row_for_target`]'s row, for checking targets.
pub fn achieved_score(class: usize, k: usize, target: f64, config: &ScoreConfig) -> Result<f64> {
    let row = row_for_target(class, k, target, config)?;
    Ok(local_score(&row, class, config))
}
