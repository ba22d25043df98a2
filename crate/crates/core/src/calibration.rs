//! Attack-free temperature selection from cached logits.
//!
//! Both criteria run the same two-phase grid search: a coarse pass over the
//! whole search space, then a fine pass in a window around the best coarse
//! temperature. The result is the argmax over every evaluated point, with
//! ties going to the smallest temperature.
//!
//! Temperatures are handled as integer multiples of the fine step so that
//! points shared by both passes are evaluated once and compare exactly.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Activation, LogitDataset, ModelRecord};
use crate::error::{AuditError, Result};
use crate::score::{per_class_scores, per_class_scores_counted, EvalCounter, PerClassProfile, ScoreConfig};
use crate::stats::spearman;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub coarse_step: f64,
    pub fine_step: f64,
    /// Half-width of the fine window around the coarse optimum.
    pub fine_radius: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lower: 0.01,
            upper: 10.0,
            coarse_step: 0.1,
            fine_step: 0.001,
            fine_radius: 0.1,
        }
    }
}

/// `GridSpec` resolved to integer keys in units of `fine_step`.
#[derive(Debug, Clone, Copy)]
struct Lattice {
    lower: i64,
    upper: i64,
    coarse: i64,
    radius: i64,
    fine_step: f64,
    /// `1 / fine_step` when that is an integer; dividing by it is exact for
    /// decimal grids where multiplying by `fine_step` is not.
    inverse: Option<f64>,
}

impl Lattice {
    fn new(grid: &GridSpec) -> Result<Self> {
        let bad = |msg: String| Err(AuditError::Domain(format!("grid: {msg}")));
        if !(grid.fine_step > 0.0 && grid.coarse_step > 0.0 && grid.fine_radius >= 0.0) {
            return bad("steps must be positive and the radius non-negative".into());
        }
        if !(grid.lower > 0.0 && grid.upper >= grid.lower && grid.upper.is_finite()) {
            return bad(format!("need 0 < lower <= upper, got [{}, {}]", grid.lower, grid.upper));
        }
        let key = |v: f64, what: &str| -> Result<i64> {
            let k = v / grid.fine_step;
            if (k - k.round()).abs() > 1e-6 {
                return Err(AuditError::Domain(format!(
                    "grid: {what} {v} is not a multiple of the fine step {}",
                    grid.fine_step
                )));
            }
            Ok(k.round() as i64)
        };
        let inv = 1.0 / grid.fine_step;
        Ok(Lattice {
            lower: key(grid.lower, "lower bound")?,
            upper: key(grid.upper, "upper bound")?,
            coarse: key(grid.coarse_step, "coarse step")?,
            radius: key(grid.fine_radius, "fine radius")?,
            fine_step: grid.fine_step,
            inverse: ((inv - inv.round()).abs() < 1e-9).then(|| inv.round()),
        })
    }

    fn temperature(&self, key: i64) -> f64 {
        match self.inverse {
            Some(inv) => key as f64 / inv,
            None => key as f64 * self.fine_step,
        }
    }

    /// `lower`, then every positive multiple of the coarse step above it.
    fn coarse_keys(&self) -> Vec<i64> {
        let mut keys = vec![self.lower];
        let mut k = self.coarse;
        while k <= self.upper {
            if k > self.lower {
                keys.push(k);
            }
            k += self.coarse;
        }
        keys
    }

    fn fine_keys(&self, center: i64) -> Vec<i64> {
        let lo = (center - self.radius).max(self.lower);
        let hi = (center + self.radius).min(self.upper);
        (lo..=hi).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    AccuracyCorrelation,
    RankingStability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub temperature: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: CalibrationMethod,
    pub grid: GridSpec,
    pub t_star: f64,
    pub rho_at_t_star: f64,
    pub coarse_optimum: f64,
    /// Every evaluated point from both passes, sorted by temperature.
    pub curve: Vec<CurvePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability_window: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_count: Option<usize>,
    /// Sample rows activated during the search.
    pub activation_evaluations: u64,
}

fn argmax(curve: &BTreeMap<i64, f64>, keys: impl IntoIterator<Item = i64>) -> (i64, f64) {
    let mut best: Option<(i64, f64)> = None;
    for k in keys {
        let v = curve[&k];
        // Keys arrive in ascending order; strict > keeps the smallest on ties.
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.expect("grid is never empty")
}

fn two_phase<F>(grid: &GridSpec, objective: F) -> Result<(Lattice, BTreeMap<i64, f64>, i64, i64)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let lattice = Lattice::new(grid)?;
    let mut curve = BTreeMap::new();
    let evaluate = |keys: &[i64], curve: &mut BTreeMap<i64, f64>| -> Result<()> {
        let fresh: Vec<i64> = keys.iter().copied().filter(|k| !curve.contains_key(k)).collect();
        let values = fresh
            .par_iter()
            .map(|&k| objective(lattice.temperature(k)))
            .collect::<Result<Vec<f64>>>()?;
        curve.extend(fresh.into_iter().zip(values));
        Ok(())
    };

    let coarse = lattice.coarse_keys();
    evaluate(&coarse, &mut curve)?;
    let (coarse_best, _) = argmax(&curve, coarse.iter().copied());

    let fine = lattice.fine_keys(coarse_best);
    evaluate(&fine, &mut curve)?;
    let (best, _) = argmax(&curve, curve.keys().copied().collect::<Vec<_>>());
    Ok((lattice, curve, coarse_best, best))
}

fn assemble(
    method: CalibrationMethod,
    grid: &GridSpec,
    lattice: Lattice,
    curve: BTreeMap<i64, f64>,
    coarse_best: i64,
    best: i64,
    counter: &EvalCounter,
) -> CalibrationResult {
    CalibrationResult {
        method,
        grid: *grid,
        t_star: lattice.temperature(best),
        rho_at_t_star: curve[&best],
        coarse_optimum: lattice.temperature(coarse_best),
        curve: curve
            .iter()
            .map(|(&k, &rho)| CurvePoint {
                temperature: lattice.temperature(k),
                rho,
            })
            .collect(),
        stability_window: None,
        probe_count: None,
        activation_evaluations: counter.activations(),
    }
}

/// Spearman that maps a constant side to a fixed value instead of failing:
/// 1 when both sides are constant, 0 when only one is.
fn rank_agreement(x: &[f64], y: &[f64]) -> Result<f64> {
    match spearman(x, y) {
        Err(AuditError::UndefinedCorrelation(_)) => {
            let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
            Ok(if constant(x) && constant(y) { 1.0 } else { 0.0 })
        }
        other => other,
    }
}

/// One model's cached logits paired with its accuracy.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationModel<'a> {
    pub dataset: &'a LogitDataset,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracySource {
    Clean,
    RobustBench,
}

/// Matches datasets to registry records by `model_id` and checks that all
/// models share one activation.
pub fn pair_with_registry<'a>(
    datasets: &'a [LogitDataset],
    registry: &[ModelRecord],
    source: AccuracySource,
) -> Result<(Vec<CalibrationModel<'a>>, Activation)> {
    let mut models = Vec::with_capacity(datasets.len());
    let mut activation = None;
    for ds in datasets {
        let record = registry
            .iter()
            .find(|r| r.model_id == ds.model_id())
            .ok_or_else(|| AuditError::Registry(format!("no registry entry for `{}`", ds.model_id())))?;
        let accuracy = match source {
            AccuracySource::Clean => record.clean_accuracy,
            AccuracySource::RobustBench => record
                .robustbench_accuracy
                .ok_or_else(|| AuditError::Registry(format!("`{}` has no robustbench_accuracy", record.model_id)))?,
        };
        match activation {
            None => activation = Some(record.activation),
            Some(a) if a != record.activation => {
                return Err(AuditError::Domain(format!(
                    "`{}` uses {} but earlier models use {a}",
                    record.model_id, record.activation
                )))
            }
            Some(_) => {}
        }
        models.push(CalibrationModel { dataset: ds, accuracy });
    }
    let activation = activation.ok_or_else(|| AuditError::Domain("no models to calibrate".into()))?;
    Ok((models, activation))
}

/// Temperature maximizing the Spearman correlation between per-model
/// aggregate scores and accuracies.
///
/// A temperature at which every model scores the same carries no ranking
/// information and is assigned rho = 0.
pub fn calibrate_accuracy(
    models: &[CalibrationModel<'_>],
    activation: Activation,
    grid: &GridSpec,
) -> Result<CalibrationResult> {
    if models.len() < 2 {
        return Err(AuditError::Domain(format!(
            "calibration needs at least 2 models, got {}",
            models.len()
        )));
    }
    let k = models[0].dataset.num_classes();
    if let Some(m) = models.iter().find(|m| m.dataset.num_classes() != k) {
        return Err(AuditError::Domain(format!(
            "`{}` has {} classes, expected {k}",
            m.dataset.model_id(),
            m.dataset.num_classes()
        )));
    }
    let accuracies: Vec<f64> = models.iter().map(|m| m.accuracy).collect();
    if accuracies.iter().all(|&a| a == accuracies[0]) {
        return Err(AuditError::UndefinedCorrelation("all accuracies are equal".into()));
    }

    let counter = EvalCounter::new();
    let objective = |t: f64| -> Result<f64> {
        let config = ScoreConfig::new(t, activation)?;
        let scores: Vec<f64> = models
            .iter()
            .map(|m| per_class_scores_counted(m.dataset, &config, &counter).aggregate)
            .collect();
        match spearman(&scores, &accuracies) {
            Err(AuditError::UndefinedCorrelation(_)) => Ok(0.0),
            other => other,
        }
    };
    let (lattice, curve, coarse_best, best) = two_phase(grid, objective)?;
    Ok(assemble(
        CalibrationMethod::AccuracyCorrelation,
        grid,
        lattice,
        curve,
        coarse_best,
        best,
        &counter,
    ))
}

fn defined_scores(profile: &PerClassProfile) -> Vec<f64> {
    profile.scores.iter().flatten().copied().collect()
}

/// Probe temperatures: `probe_count` evenly spaced points over
/// `[t - window, t + window]` clipped to the search space.
fn probes(t: f64, window: f64, probe_count: usize, grid: &GridSpec) -> Vec<f64> {
    let lo = (t - window).max(grid.lower);
    let hi = (t + window).min(grid.upper);
    if probe_count == 1 || hi <= lo {
        return vec![t];
    }
    (0..probe_count)
        .map(|i| lo + (hi - lo) * i as f64 / (probe_count - 1) as f64)
        .collect()
}

/// Temperature whose per-class ranking is least sensitive to nearby
/// temperatures: maximizes the minimum rank correlation against the probes.
pub fn calibrate_stability(
    ds: &LogitDataset,
    activation: Activation,
    grid: &GridSpec,
    window: f64,
    probe_count: usize,
) -> Result<CalibrationResult> {
    if !(window.is_finite() && window >= 0.0) {
        return Err(AuditError::Domain(format!(
            "stability window must be >= 0, got {window}"
        )));
    }
    if probe_count == 0 {
        return Err(AuditError::Domain("probe_count must be at least 1".into()));
    }
    let defined = per_class_scores(ds, &ScoreConfig::new(1.0, activation)?)
        .defined()
        .len();
    if defined < 2 {
        return Err(AuditError::UndefinedMetric(format!(
            "ranking stability needs at least 2 classes with samples, found {defined}"
        )));
    }

    let counter = EvalCounter::new();
    let scores_at = |t: f64| -> Result<Vec<f64>> {
        let config = ScoreConfig::new(t, activation)?;
        Ok(defined_scores(&per_class_scores_counted(ds, &config, &counter)))
    };
    let objective = |t: f64| -> Result<f64> {
        let base = scores_at(t)?;
        let mut worst = f64::INFINITY;
        for probe in probes(t, window, probe_count, grid) {
            let rho = if probe == t {
                1.0
            } else {
                rank_agreement(&base, &scores_at(probe)?)?
            };
            worst = worst.min(rho);
        }
        Ok(worst)
    };
    let (lattice, curve, coarse_best, best) = two_phase(grid, objective)?;
    let mut result = assemble(
        CalibrationMethod::RankingStability,
        grid,
        lattice,
        curve,
        coarse_best,
        best,
        &counter,
    );
    result.stability_window = Some(window);
    result.probe_count = Some(probe_count);
    Ok(result)
}

/// Recomputes every profile at `temperature`.
pub fn rescore_at(datasets: &[LogitDataset], activation: Activation, temperature: f64) -> Result<Vec<PerClassProfile>> {
    let config = ScoreConfig::new(temperature, activation)?;
    Ok(datasets.par_iter().map(|ds| per_class_scores(ds, &config)).collect())
}
