#![allow(dead_code)]

use robaudit::disparity::{audit, DisparityReport};
use robaudit::score::{per_class_scores, PerClassProfile, ScoreConfig};
use robaudit::synth::{synthesize, SyntheticSpec};
use robaudit::{Activation, LogitDataset};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
pub struct TableRow {
    pub gs: f64,
    pub calibrated_gs: f64,
    pub rdi: f64,
    pub nrgc: f64,
    pub wcr: f64,
    pub wcr_class: String,
    pub fp_great: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CifarModel {
    pub model_id: String,
    pub robustbench_accuracy: f64,
    pub table: TableRow,
    /// Per-class scores as printed, three decimals.
    pub published_per_class: Vec<f64>,
    pub published_aggregate: f64,
    /// Fixture values: within half a unit of the last printed digit of
    /// `published_per_class`, chosen so the printed summary columns and
    /// class rankings are all consistent with each other.
    pub per_class: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CifarFixture {
    pub class_names: Vec<String>,
    pub samples_per_class: usize,
    pub models: Vec<CifarModel>,
}

pub fn cifar_fixture() -> CifarFixture {
    serde_json::from_str(include_str!("../fixtures/cifar10_table.json")).unwrap()
}

pub fn cifar_registry_text() -> &'static str {
    include_str!("../fixtures/cifar10_registry.json")
}

pub fn cifar_spec(fixture: &CifarFixture, index: usize) -> SyntheticSpec {
    let m = &fixture.models[index];
    let mut spec = SyntheticSpec::new(
        vec![fixture.samples_per_class; fixture.class_names.len()],
        Some(m.per_class.clone()),
        Activation::Sigmoid,
    );
    spec.model_id = m.model_id.clone();
    spec.dataset_id = "cifar10".into();
    spec.class_names = Some(fixture.class_names.clone());
    spec.seed = index as u64;
    spec
}

pub fn cifar_datasets(fixture: &CifarFixture) -> Vec<LogitDataset> {
    (0..fixture.models.len())
        .map(|i| synthesize(&cifar_spec(fixture, i)).unwrap())
        .collect()
}

pub fn profiles(datasets: &[LogitDataset], config: &ScoreConfig) -> Vec<PerClassProfile> {
    datasets.iter().map(|ds| per_class_scores(ds, config)).collect()
}

pub fn reports(profiles: &[PerClassProfile], lambda: f64) -> Vec<DisparityReport> {
    profiles.iter().map(|p| audit(p, lambda).unwrap()).collect()
}

/// Published ImageNet summary rows.
pub struct ImagenetRow {
    pub model_id: &'static str,
    pub robustbench_accuracy: f64,
    pub gs: f64,
    pub rdi: f64,
    pub wcr: f64,
    pub wcr_class: (&'static str, usize),
    pub fp_great: f64,
}

pub const IMAGENET_BEST: (&str, usize) = ("n12057211", 986);

pub const IMAGENET: [ImagenetRow; 5] = [
    ImagenetRow {
        model_id: "Salman_WRN50-2",
        robustbench_accuracy: 38.14,
        gs: 0.545,
        rdi: 1.231,
        wcr: 0.009,
        wcr_class: ("n01756291", 68),
        fp_great: -0.070,
    },
    ImagenetRow {
        model_id: "Salman_R50",
        robustbench_accuracy: 34.96,
        gs: 0.444,
        rdi: 1.198,
        wcr: 0.003,
        wcr_class: ("n04525038", 885),
        fp_great: -0.155,
    },
    ImagenetRow {
        model_id: "Engstrom2019",
        robustbench_accuracy: 29.22,
        gs: 0.446,
        rdi: 1.196,
        wcr: 0.003,
        wcr_class: ("n03710637", 638),
        fp_great: -0.152,
    },
    ImagenetRow {
        model_id: "Wong2020",
        robustbench_accuracy: 26.24,
        gs: 0.360,
        rdi: 1.148,
        wcr: 0.000,
        wcr_class: ("n04525038", 885),
        fp_great: -0.214,
    },
    ImagenetRow {
        model_id: "Salman_R18",
        robustbench_accuracy: 25.32,
        gs: 0.280,
        rdi: 1.126,
        wcr: 0.000,
        wcr_class: ("n04525038", 885),
        fp_great: -0.283,
    },
];

/// 1000 per-class targets with the row's mean, minimum and range: the worst
/// class sits at `wcr`, the best at `wcr + rdi`, and the rest follow
/// `wcr + rdi * u^p` on an even grid of `u` in (0, 1), with `p` solved by
/// bisection to hit the mean.
pub fn imagenet_targets(row: &ImagenetRow) -> Vec<f64> {
    const K: usize = 1000;
    let inner = K - 2;
    let fill = |p: f64| -> Vec<f64> {
        let mut v = Vec::with_capacity(K);
        let mut u = (1..=inner).map(|j| j as f64 / (inner + 1) as f64);
        for k in 0..K {
            if k == row.wcr_class.1 {
                v.push(row.wcr);
            } else if k == IMAGENET_BEST.1 {
                v.push(row.wcr + row.rdi);
            } else {
                v.push(row.wcr + row.rdi * u.next().unwrap().powf(p));
            }
        }
        v
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // mean is decreasing in p
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(&fill(mid.exp())) > row.gs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    fill((0.5 * (lo + hi)).exp())
}

pub fn imagenet_class_names() -> Vec<String> {
    let mut names = robaudit::data::default_class_names(1000);
    for row in &IMAGENET {
        names[row.wcr_class.1] = row.wcr_class.0.to_string();
    }
    names[IMAGENET_BEST.1] = IMAGENET_BEST.0.to_string();
    names
}

pub fn imagenet_spec(row: &ImagenetRow) -> SyntheticSpec {
    let mut spec = SyntheticSpec::new(vec![1; 1000], Some(imagenet_targets(row)), Activation::Softmax);
    spec.model_id = row.model_id.to_string();
    spec.dataset_id = "imagenet".into();
    spec.class_names = Some(imagenet_class_names());
    spec
}

/// Mean absolute pairwise difference over twice the mean: the Gini
/// coefficient as a plain double sum.
pub fn gini_double_sum(x: &[f64]) -> f64 {
    let k = x.len() as f64;
    let mean = x.iter().sum::<f64>() / k;
    if mean == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in x {
        for b in x {
            total += (a - b).abs();
        }
    }
    total / (2.0 * k * k * mean)
}

/// Largest pairwise difference, by comparing every pair.
pub fn range_pairwise(x: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for a in x {
        for b in x {
            best = best.max(a - b);
        }
    }
    best
}

/// Average ranks by counting: rank = 1 + #smaller + (#equal - 1) / 2.
pub fn ranks_by_counting(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|a| {
            let less = x.iter().filter(|b| *b < a).count() as f64;
            let equal = x.iter().filter(|b| *b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Spearman as Pearson on counted ranks, with a two-pass textbook formula.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (ranks_by_counting(x), ranks_by_counting(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

pub fn profile_from(scores: &[f64]) -> PerClassProfile {
    let k = scores.len();
    PerClassProfile {
        model_id: "p".into(),
        temperature: 1.0,
        activation: Activation::Sigmoid,
        scores: scores.iter().map(|&s| Some(s)).collect(),
        counts: vec![1; k],
        aggregate: scores.iter().sum::<f64>() / k as f64,
        residual: 0.0,
        class_names: robaudit::data::default_class_names(k),
    }
}
