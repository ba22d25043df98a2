//! Class-level disparity metrics over a per-class profile.
//!
//! All metrics use only classes that have samples. `mean_score` is the
//! unweighted mean over those classes, which is also the mean used by
//! FP-GREAT. Ties for the worst and best class go to the lowest index.

use serde::{Deserialize, Serialize};

use crate::accum::CompensatedSum;
use crate::error::{AuditError, Result};
use crate::score::PerClassProfile;

pub const DEFAULT_LAMBDA: f64 = 0.5;

fn defined_values(profile: &PerClassProfile) -> Vec<f64> {
    profile.scores.iter().flatten().copied().collect()
}

fn require(values: &[f64], needed: usize, metric: &str) -> Result<()> {
    if values.len() < needed {
        return Err(AuditError::UndefinedMetric(format!(
            "{metric} needs at least {needed} classes with samples, found {}",
            values.len()
        )));
    }
    Ok(())
}

/// `max - min` of a slice of at least two values.
pub fn range_of(values: &[f64]) -> Result<f64> {
    require(values, 2, "RDI")?;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    Ok(hi - lo)
}

pub fn mean_of(values: &[f64]) -> Result<f64> {
    require(values, 1, "mean class score")?;
    let s: CompensatedSum = values.iter().copied().collect();
    Ok(s.total() / values.len() as f64)
}

/// Gini coefficient `sum_i sum_j |x_i - x_j| / (2 K^2 mean)` evaluated via
/// the sorted form `sum_i (2i - K - 1) x_(i) / (K^2 mean)`, so `O(K log K)`.
///
/// Returns 0 when the mean is 0.
pub fn gini_of(values: &[f64]) -> Result<f64> {
    require(values, 2, "NRGC")?;
    let mean = mean_of(values)?;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len() as f64;
    let weighted: CompensatedSum = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i as f64 + 1.0) - k - 1.0) * x)
        .collect();
    Ok(weighted.total() / (k * k * mean))
}

fn extreme(profile: &PerClassProfile, worst: bool) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (k, v) in profile.defined() {
        let better = match best {
            None => true,
            Some((b, _)) if worst => v < b,
            Some((b, _)) => v > b,
        };
        if better {
            best = Some((v, k));
        }
    }
    best.ok_or_else(|| AuditError::UndefinedMetric("profile has no classes with samples".to_string()))
}

/// Robustness Disparity Index: range of the defined per-class scores.
pub fn rdi(profile: &PerClassProfile) -> Result<f64> {
    range_of(&defined_values(profile))
}

/// Normalized Robustness Gini Coefficient over the defined classes.
pub fn nrgc(profile: &PerClassProfile) -> Result<f64> {
    gini_of(&defined_values(profile))
}

/// Worst-case class robustness and the class attaining it.
pub fn wcr(profile: &PerClassProfile) -> Result<(f64, usize)> {
    extreme(profile, true)
}

pub fn best_class(profile: &PerClassProfile) -> Result<(f64, usize)> {
    extreme(profile, false)
}

pub fn mean_class_score(profile: &PerClassProfile) -> Result<f64> {
    mean_of(&defined_values(profile))
}

/// FP-GREAT: unweighted class mean minus `lambda * RDI`.
pub fn fp_great(profile: &PerClassProfile, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let values = defined_values(profile);
    Ok(mean_of(&values)? - lambda * range_of(&values)?)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(AuditError::Domain(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub model_id: String,
    pub temperature: f64,
    /// Sample-weighted aggregate score of the profile.
    pub aggregate: f64,
    pub rdi: f64,
    pub nrgc: f64,
    /// Set when the class mean is 0 and NRGC was defined as 0.
    pub nrgc_degenerate: bool,
    pub wcr: f64,
    pub wcr_class: usize,
    pub wcr_class_name: String,
    pub best_class: usize,
    pub best_class_name: String,
    pub best_score: f64,
    pub mean_score: f64,
    pub lambda: f64,
    pub fp_great: f64,
    pub defined_class_count: usize,
    pub num_classes: usize,
}

pub fn audit(profile: &PerClassProfile, lambda: f64) -> Result<DisparityReport> {
    check_lambda(lambda)?;
    let values = defined_values(profile);
    let rdi = range_of(&values)?;
    let mean_score = mean_of(&values)?;
    let nrgc = gini_of(&values)?;
    let (wcr, wcr_class) = wcr(profile)?;
    let (best_score, best_class) = best_class(profile)?;
    Ok(DisparityReport {
        model_id: profile.model_id.clone(),
        temperature: profile.temperature,
        aggregate: profile.aggregate,
        rdi,
        nrgc,
        nrgc_degenerate: mean_score == 0.0,
        wcr,
        wcr_class,
        wcr_class_name: profile.class_names[wcr_class].clone(),
        best_class,
        best_class_name: profile.class_names[best_class].clone(),
        best_score,
        mean_score,
        lambda,
        fp_great: mean_score - lambda * rdi,
        defined_class_count: values.len(),
        num_classes: profile.num_classes(),
    })
}

/// How often each class is the worst and the best across a set of models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilitySummary {
    pub class_names: Vec<String>,
    pub worst_counts: Vec<usize>,
    pub best_counts: Vec<usize>,
    pub model_count: usize,
}

impl VulnerabilitySummary {
    pub fn worst_count(&self, class_name: &str) -> usize {
        self.count_for(class_name, &self.worst_counts)
    }

    pub fn best_count(&self, class_name: &str) -> usize {
        self.count_for(class_name, &self.best_counts)
    }

    fn count_for(&self, class_name: &str, counts: &[usize]) -> usize {
        self.class_names
            .iter()
            .position(|n| n == class_name)
            .map_or(0, |k| counts[k])
    }
}

pub fn vulnerability_summary(reports: &[DisparityReport], class_names: &[String]) -> Result<VulnerabilitySummary> {
    let k = class_names.len();
    let mut worst_counts = vec![0; k];
    let mut best_counts = vec![0; k];
    for r in reports {
        if r.num_classes != k {
            return Err(AuditError::Domain(format!(
                "model `{}` has {} classes, expected {k}",
                r.model_id, r.num_classes
            )));
        }
        worst_counts[r.wcr_class] += 1;
        best_counts[r.best_class] += 1;
    }
    Ok(VulnerabilitySummary {
        class_names: class_names.to_vec(),
        worst_counts,
        best_counts,
        model_count: reports.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankEntry {
    pub model_id: String,
    pub aggregate: f64,
    pub fp_great: f64,
    /// 1-based rank by aggregate score, descending.
    pub aggregate_rank: usize,
    /// 1-based rank by FP-GREAT, descending.
    pub fp_rank: usize,
    /// `aggregate_rank - fp_rank`; positive means the model moved up.
    pub delta: i64,
}

/// Entries in input order, with both rankings attached.
pub fn fairness_rerank(reports: &[DisparityReport]) -> Vec<RerankEntry> {
    let rank_by = |key: fn(&DisparityReport) -> f64| {
        let mut order: Vec<usize> = (0..reports.len()).collect();
        // Stable sort: equal keys keep input order.
        order.sort_by(|&a, &b| key(&reports[b]).total_cmp(&key(&reports[a])));
        let mut rank = vec![0; reports.len()];
        for (pos, &i) in order.iter().enumerate() {
            rank[i] = pos + 1;
        }
        rank
    };
    let by_aggregate = rank_by(|r| r.aggregate);
    let by_fp = rank_by(|r| r.fp_great);
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| RerankEntry {
            model_id: r.model_id.clone(),
            aggregate: r.aggregate,
            fp_great: r.fp_great,
            aggregate_rank: by_aggregate[i],
            fp_rank: by_fp[i],
            delta: by_aggregate[i] as i64 - by_fp[i] as i64,
        })
        .collect()
}
