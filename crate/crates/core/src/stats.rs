//! Rank statistics and Hoeffding concentration bounds for per-class scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accum::CompensatedSum;
use crate::error::{AuditError, Result};
use crate::score::SCORE_MAX;

/// 1-based fractional ranks; tied values share the average of their ranks.
pub fn ranks(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(AuditError::Domain("cannot rank an empty vector".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AuditError::Domain("cannot rank non-finite values".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = avg;
        }
        start = end;
    }
    Ok(out)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().copied().collect::<CompensatedSum>().total() / n;
    let my = y.iter().copied().collect::<CompensatedSum>().total() / n;
    let mut sxy = CompensatedSum::default();
    let mut sxx = CompensatedSum::default();
    let mut syy = CompensatedSum::default();
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy.add(da * db);
        sxx.add(da * da);
        syy.add(db * db);
    }
    if sxx.total() == 0.0 || syy.total() == 0.0 {
        return Err(AuditError::UndefinedCorrelation("one of the inputs is constant".into()));
    }
    Ok((sxy.total() / (sxx.total() * syy.total()).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AuditError::Domain(format!(
            "spearman inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(AuditError::Domain("spearman needs at least 2 pairs".into()));
    }
    pearson(&ranks(x)?, &ranks(y)?)
}

fn check_bound_domain(n: u64, k: usize, delta: f64) -> Result<()> {
    if n == 0 {
        return Err(AuditError::Domain("sample count must be at least 1".into()));
    }
    if k == 0 {
        return Err(AuditError::Domain("class count must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AuditError::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn log_term(k: usize, delta: f64) -> f64 {
    (2.0 * k as f64 / delta).ln()
}

/// Half-width `sqrt(pi * ln(2K / delta) / (4 n))` that holds simultaneously
/// for all `K` classes with probability at least `1 - delta`.
pub fn per_class_epsilon(n: u64, k: usize, delta: f64) -> Result<f64> {
    check_bound_domain(n, k, delta)?;
    Ok((std::f64::consts::PI * log_term(k, delta) / (4.0 * n as f64)).sqrt())
}

/// Half-width for the empirical RDI: twice the per-class width at `n_min`.
pub fn rdi_epsilon(n_min: u64, k: usize, delta: f64) -> Result<f64> {
    Ok(2.0 * per_class_epsilon(n_min, k, delta)?)
}

/// Smallest `n` with `per_class_epsilon(n, k, delta) <= epsilon`.
pub fn required_samples(epsilon: f64, k: usize, delta: f64) -> Result<u64> {
    check_bound_domain(1, k, delta)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(AuditError::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let exact = std::f64::consts::PI * log_term(k, delta) / (4.0 * epsilon * epsilon);
    let mut n = (exact.ceil() as u64).max(1);
    // Guard against rounding in the closed-form inversion.
    while n > 1 && per_class_epsilon(n - 1, k, delta)? <= epsilon {
        n -= 1;
    }
    while per_class_epsilon(n, k, delta)? > epsilon {
        n += 1;
    }
    Ok(n)
}

/// Simultaneous bounds for one profile's class counts.
///
/// Empty classes carry no estimate: their epsilon is `None` and they do not
/// count toward the union bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationBound {
    pub delta: f64,
    pub num_classes: usize,
    pub counts: Vec<usize>,
    pub per_class_epsilon: Vec<Option<f64>>,
    pub n_min: u64,
    pub simultaneous_epsilon: f64,
    pub rdi_epsilon: f64,
}

impl ConcentrationBound {
    pub fn from_counts(counts: &[usize], delta: f64) -> Result<Self> {
        let k = counts.iter().filter(|&&n| n > 0).count();
        let n_min = counts
            .iter()
            .copied()
            .filter(|&n| n > 0)
            .min()
            .ok_or_else(|| AuditError::Domain("no class has samples".into()))? as u64;
        let per_class = counts
            .iter()
            .map(|&n| match n {
                0 => Ok(None),
                n => per_class_epsilon(n as u64, k, delta).map(Some),
            })
            .collect::<Result<Vec<_>>>()?;
        let simultaneous_epsilon = per_class_epsilon(n_min, k, delta)?;
        Ok(ConcentrationBound {
            delta,
            num_classes: k,
            counts: counts.to_vec(),
            per_class_epsilon: per_class,
            n_min,
            simultaneous_epsilon,
            rdi_epsilon: 2.0 * simultaneous_epsilon,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub n: u64,
    pub per_class_epsilon: f64,
    pub rdi_epsilon: f64,
}

/// Bound values over roughly `points` log-spaced sample sizes in
/// `[n_min, n_max]`, deduplicated after rounding to integers.
pub fn bound_curve(n_min: u64, n_max: u64, points: usize, k: usize, delta: f64) -> Result<Vec<BoundPoint>> {
    check_bound_domain(n_min, k, delta)?;
    if n_max < n_min {
        return Err(AuditError::Domain(format!("curve range {n_min}..{n_max} is empty")));
    }
    let points = points.max(2);
    let (lo, hi) = ((n_min as f64).ln(), (n_max as f64).ln());
    let mut ns: Vec<u64> = (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp().round() as u64)
        .map(|n| n.clamp(n_min, n_max))
        .collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let e = per_class_epsilon(n, k, delta)?;
            Ok(BoundPoint {
                n,
                per_class_epsilon: e,
                rdi_epsilon: 2.0 * e,
            })
        })
        .collect()
}

/// Distribution of local scores within one class, supported on
/// `[0, sqrt(pi/2)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDistribution {
    /// Uniform over the full score range.
    Uniform,
    /// 0 or `sqrt(pi/2)` with equal probability; the extremal case for Hoeffding.
    BernoulliExtremes,
    PointMass(f64),
}

impl ScoreDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            ScoreDistribution::Uniform | ScoreDistribution::BernoulliExtremes => SCORE_MAX / 2.0,
            ScoreDistribution::PointMass(v) => v,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ScoreDistribution::Uniform => rng.gen::<f64>() * SCORE_MAX,
            ScoreDistribution::BernoulliExtremes => {
                if rng.gen::<bool>() {
                    SCORE_MAX
                } else {
                    0.0
                }
            }
            ScoreDistribution::PointMass(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub num_classes: usize,
    pub n_per_class: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub trials: u64,
    pub covered_trials: u64,
    pub coverage: f64,
    /// Coverage fell below `1 - delta`.
    pub violation: bool,
}

/// Monte-Carlo check of the simultaneous per-class bound.
///
/// A trial is covered when every class's empirical mean over `n_per_class`
/// draws lies within epsilon of its true mean. Trial `i` draws from its own
/// ChaCha stream, so results do not depend on thread scheduling.
pub fn coverage_experiment(
    distributions: &[ScoreDistribution],
    n_per_class: u64,
    delta: f64,
    trials: u64,
    seed: u64,
) -> Result<CoverageReport> {
    let k = distributions.len();
    let epsilon = per_class_epsilon(n_per_class, k, delta)?;
    for d in distributions {
        if let ScoreDistribution::PointMass(v) = d {
            if !(0.0..=SCORE_MAX).contains(v) {
                return Err(AuditError::Domain(format!("point mass {v} outside score range")));
            }
        }
    }

    let covered_trials = (0..trials)
        .into_par_iter()
        .filter(|&trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            distributions.iter().all(|d| {
                let sum: CompensatedSum = (0..n_per_class).map(|_| d.sample(&mut rng)).collect();
                (sum.total() / n_per_class as f64 - d.mean()).abs() <= epsilon
            })
        })
        .count() as u64;

    let coverage = if trials == 0 {
        1.0
    } else {
        covered_trials as f64 / trials as f64
    };
    Ok(CoverageReport {
        num_classes: k,
        n_per_class,
        delta,
        epsilon,
        trials,
        covered_trials,
        coverage,
        violation: coverage < 1.0 - delta,
    })
}
