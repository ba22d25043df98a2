//! Acceptance gate: one line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the report is always printed.

mod common;

use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use robaudit::calibration::{calibrate_accuracy, CalibrationModel, GridSpec};
use robaudit::disparity::{
    fairness_rerank, fp_great, gini_of, mean_class_score, nrgc, rdi, vulnerability_summary, wcr,
};
use robaudit::score::{local_score, per_class_scores, ScoreConfig, SCORE_MAX};
use robaudit::stats::{coverage_experiment, per_class_epsilon, rdi_epsilon, spearman, ScoreDistribution};
use robaudit::synth::{monotone_family, planted_peak_family, random_dataset};
use robaudit::Activation;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn decomposition() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let k = [2, 10, 1000][i as usize % 3];
        let n = if i < 3 { 50_000 } else { rng.gen_range(1..=50_000) };
        let ds = random_dataset(k, n, i).map_err(|e| e.to_string())?;
        let config = ScoreConfig::new(
            rng.gen_range(0.05..5.0),
            [Activation::Sigmoid, Activation::Softmax][i as usize % 2],
        )
        .unwrap();
        let prof = per_class_scores(&ds, &config);

        let direct = ds.samples().map(|(row, y)| local_score(row, y, &config)).sum::<f64>() / n as f64;
        let recombined: f64 = prof
            .scores
            .iter()
            .zip(&prof.counts)
            .filter_map(|(s, &c)| s.map(|v| c as f64 / n as f64 * v))
            .sum();
        let scale = prof.aggregate.abs().max(f64::MIN_POSITIVE);
        let rel = (prof.aggregate - recombined).abs() / scale;
        let rel_reported = prof.residual / scale;
        ensure(rel <= 1e-10 && rel_reported <= 1e-10, || {
            format!("dataset {i} (K={k}, N={n}): relative residual {rel:e}, reported {rel_reported:e}")
        })?;
        ensure((prof.aggregate - direct).abs() <= 1e-10 * scale, || {
            format!("dataset {i}: aggregate {} vs direct mean {direct}", prof.aggregate)
        })?;
        worst = worst.max(rel).max(rel_reported);
    }
    Ok(format!("100 datasets, max relative residual {worst:e}"))
}

fn table_reproduction() -> Check {
    let fixture = cifar_fixture();
    let reports = reports(&profiles(&cifar_datasets(&fixture), &ScoreConfig::default()), 0.5);
    let mut max_err = 0.0f64;
    for (m, r) in fixture.models.iter().zip(&reports) {
        let t = &m.table;
        for (col, got, want) in [
            ("rdi", r.rdi, t.rdi),
            ("nrgc", r.nrgc, t.nrgc),
            ("wcr", r.wcr, t.wcr),
            ("fp_great", r.fp_great, t.fp_great),
        ] {
            let err = (got - want).abs();
            ensure(err <= 0.001 + 1e-12, || {
                format!("{} {col}: {got} vs {want}", m.model_id)
            })?;
            max_err = max_err.max(err);
        }
        ensure(r.wcr_class_name == t.wcr_class, || {
            format!("{} worst class {} vs {}", m.model_id, r.wcr_class_name, t.wcr_class)
        })?;
    }
    let aug = reports.iter().find(|r| r.model_id == "Augustin_WRN_ext").unwrap();
    Ok(format!(
        "17 models, max column error {max_err:.5}; Augustin_WRN_ext rdi {:.3} nrgc {:.3} wcr {:.3} ({}) fp {:.3}",
        aug.rdi, aug.nrgc, aug.wcr, aug.wcr_class_name, aug.fp_great
    ))
}

fn vulnerability() -> Check {
    let fixture = cifar_fixture();
    let reports = reports(&profiles(&cifar_datasets(&fixture), &ScoreConfig::default()), 0.5);
    let summary = vulnerability_summary(&reports, &fixture.class_names).map_err(|e| e.to_string())?;
    let (cat, auto) = (summary.worst_count("cat"), summary.best_count("automobile"));
    ensure(cat == 13 && auto == 10, || {
        format!("cat worst {cat}/17, automobile best {auto}/17")
    })?;
    Ok(format!("cat worst {cat}/17, automobile best {auto}/17"))
}

fn uncalibrated_spearman() -> Check {
    let fixture = cifar_fixture();
    let gs: Vec<f64> = fixture.models.iter().map(|m| m.table.gs).collect();
    let acc: Vec<f64> = fixture.models.iter().map(|m| m.robustbench_accuracy).collect();
    let rho = spearman(&gs, &acc).map_err(|e| e.to_string())?;
    ensure((rho - 0.662).abs() <= 0.001, || format!("rho {rho}"))?;
    Ok(format!("rho {rho:.6}"))
}

fn hoeffding_point() -> Check {
    let e = per_class_epsilon(1000, 10, 0.05).map_err(|e| e.to_string())?;
    let r = rdi_epsilon(1000, 10, 0.05).map_err(|e| e.to_string())?;
    ensure((e - 0.069).abs() <= 0.001, || format!("epsilon {e}"))?;
    ensure(r == 2.0 * e, || format!("rdi epsilon {r} vs 2 x {e}"))?;
    Ok(format!("epsilon {e:.6}, rdi epsilon {r:.6}"))
}

fn coverage() -> Check {
    let mut parts = Vec::new();
    for (name, dist) in [
        ("uniform", ScoreDistribution::Uniform),
        ("bernoulli_extremes", ScoreDistribution::BernoulliExtremes),
    ] {
        let r = coverage_experiment(&[dist; 10], 1000, 0.05, 10_000, 7).map_err(|e| e.to_string())?;
        ensure(r.coverage >= 0.95 && !r.violation, || {
            format!("{name}: coverage {}", r.coverage)
        })?;
        parts.push(format!("{name} {:.4}", r.coverage));
    }
    Ok(parts.join(", "))
}

fn gini_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let k = if i % 100 == 0 { 1000 } else { rng.gen_range(2..=120) };
        let values: Vec<f64> = (0..k)
            .map(|_| match rng.gen_range(0..10) {
                0 => 0.0,
                1 => 0.25,
                _ => rng.gen::<f64>() * SCORE_MAX,
            })
            .collect();
        let fast = gini_of(&values).map_err(|e| e.to_string())?;
        let slow = gini_double_sum(&values);
        let err = (fast - slow).abs();
        ensure(err <= 1e-12, || format!("profile {i} (K={k}): {fast} vs {slow}"))?;
        worst = worst.max(err);
    }
    Ok(format!("1000 profiles, max difference {worst:e}"))
}

fn calibration_families() -> Check {
    let grid = GridSpec::default();
    let mut parts = Vec::new();

    for (start, end) in [(2.6995, 3.5), (2.6495, 3.5), (0.8505, 4.25)] {
        let family = planted_peak_family(start, end).map_err(|e| e.to_string())?;
        let models: Vec<CalibrationModel> = family
            .iter()
            .map(|(ds, acc)| CalibrationModel {
                dataset: ds,
                accuracy: *acc,
            })
            .collect();
        let acc: Vec<f64> = family.iter().map(|m| m.1).collect();
        let result = calibrate_accuracy(&models, Activation::Sigmoid, &grid).map_err(|e| e.to_string())?;

        // Exhaustive oracle over the whole fine lattice.
        let mut best = (f64::NAN, f64::NEG_INFINITY);
        for key in 10..=10_000 {
            let t = key as f64 / 1000.0;
            let config = ScoreConfig::new(t, Activation::Sigmoid).unwrap();
            let scores: Vec<f64> = family
                .iter()
                .map(|(ds, _)| per_class_scores(ds, &config).aggregate)
                .collect();
            let rho = spearman_oracle(&scores, &acc).unwrap_or(0.0);
            if rho > best.1 + 1e-12 {
                best = (t, rho);
            }
        }
        ensure((best.0 - start).abs() <= 0.001, || {
            format!(
                "oracle optimum {} is not the grid point next to the plant {start}",
                best.0
            )
        })?;
        ensure((result.t_star - best.0).abs() <= 0.001 + 1e-12, || {
            format!("plant {start}: T* {} vs exhaustive {}", result.t_star, best.0)
        })?;
        ensure((result.rho_at_t_star - best.1).abs() <= 1e-12, || {
            format!("plant {start}: rho {} vs exhaustive {}", result.rho_at_t_star, best.1)
        })?;
        parts.push(format!(
            "plant {start} -> T* {:.3} (exhaustive {:.3})",
            result.t_star, best.0
        ));
    }

    let family = monotone_family(6).map_err(|e| e.to_string())?;
    let models: Vec<CalibrationModel> = family
        .iter()
        .map(|(ds, acc)| CalibrationModel {
            dataset: ds,
            accuracy: *acc,
        })
        .collect();
    let result = calibrate_accuracy(&models, Activation::Sigmoid, &grid).map_err(|e| e.to_string())?;
    ensure(result.curve.iter().all(|p| p.rho == 1.0), || {
        "monotone family has rho < 1 somewhere".into()
    })?;
    ensure(result.rho_at_t_star == 1.0, || {
        format!("monotone rho {}", result.rho_at_t_star)
    })?;
    parts.push(format!("monotone rho 1 at all {} points", result.curve.len()));
    Ok(parts.join("; "))
}

fn rerank() -> Check {
    let fixture = cifar_fixture();
    let reports = reports(&profiles(&cifar_datasets(&fixture), &ScoreConfig::default()), 0.5);
    let entries = fairness_rerank(&reports);
    let find = |id: &str| entries.iter().find(|e| e.model_id == id).unwrap();
    let (aug, wu) = (find("Augustin2020"), find("Wu2020"));
    ensure(aug.aggregate_rank == 2 && aug.fp_rank == 5, || {
        format!("Augustin2020 {} -> {}", aug.aggregate_rank, aug.fp_rank)
    })?;
    ensure(wu.aggregate_rank == 16 && wu.fp_rank == 14, || {
        format!("Wu2020 {} -> {}", wu.aggregate_rank, wu.fp_rank)
    })?;
    Ok(format!(
        "Augustin2020 {} -> {}, Wu2020 {} -> {}",
        aug.aggregate_rank, aug.fp_rank, wu.aggregate_rank, wu.fp_rank
    ))
}

fn runner() -> TestRunner {
    let config = Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn metric_properties() -> Check {
    let scores = prop::collection::vec(0.0..SCORE_MAX, 2..60);
    let transformed = (scores.clone(), 0.01f64..10.0, 0.0f64..5.0);
    let mut done = Vec::new();

    runner()
        .run(&transformed, |(x, c, s)| {
            let p = profile_from(&x);
            let scaled = profile_from(&x.iter().map(|v| c * v).collect::<Vec<_>>());
            let shifted = profile_from(&x.iter().map(|v| v + s).collect::<Vec<_>>());

            prop_assert!(close(rdi(&scaled).unwrap(), c * rdi(&p).unwrap()));
            prop_assert!(close(rdi(&shifted).unwrap(), rdi(&p).unwrap()));
            prop_assert!(close(rdi(&p).unwrap(), range_pairwise(&x)));

            let (g, gs, gh) = (nrgc(&p).unwrap(), nrgc(&scaled).unwrap(), nrgc(&shifted).unwrap());
            let mean = mean_class_score(&p).unwrap();
            prop_assert!(close(gs, g));
            let expected = if mean + s == 0.0 { 0.0 } else { g * mean / (mean + s) };
            prop_assert!(close(gh, expected));
            prop_assert!(gh <= g + 1e-12);

            prop_assert!(close(wcr(&scaled).unwrap().0, c * wcr(&p).unwrap().0));
            prop_assert!(close(wcr(&shifted).unwrap().0, wcr(&p).unwrap().0 + s));

            for lambda in [0.0, 0.5, 2.0] {
                let f = fp_great(&p, lambda).unwrap();
                prop_assert!(close(fp_great(&scaled, lambda).unwrap(), c * f));
                prop_assert!(close(fp_great(&shifted, lambda).unwrap(), f + s));
            }
            Ok(())
        })
        .map_err(|e| format!("scale/shift: {e}"))?;
    done.push("scale/shift");

    runner()
        .run(&scores, |x| {
            let p = profile_from(&x);
            let (w, r, m) = (wcr(&p).unwrap().0, rdi(&p).unwrap(), mean_class_score(&p).unwrap());
            prop_assert!(w <= m + 1e-15 && m <= w + r + 1e-15, "wcr {w} mean {m} rdi {r}");
            Ok(())
        })
        .map_err(|e| format!("wcr <= mean <= wcr + rdi: {e}"))?;
    done.push("wcr <= mean <= wcr + rdi");

    let paired = (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-30i32..30, n),
            prop::collection::vec(-1000.0f64..1000.0, n),
        )
    });
    runner()
        .run(&paired, |(xi, y)| {
            let x: Vec<f64> = xi.iter().map(|&v| v as f64).collect();
            prop_assume!(x.iter().any(|&v| v != x[0]) && y.iter().any(|&v| v != y[0]));
            let rho = spearman(&x, &y).unwrap();
            let oracle = spearman_oracle(&x, &y).unwrap();
            prop_assert!((rho - oracle).abs() <= 1e-12, "{rho} vs oracle {oracle}");
            for f in [
                (|v: f64| v.exp()) as fn(f64) -> f64,
                |v| v * v * v + v,
                |v| (v + 31.0).ln(),
                |v| 1.0 / (1.0 + (-v).exp()),
            ] {
                let fx: Vec<f64> = x.iter().map(|&v| f(v)).collect();
                prop_assert_eq!(spearman(&fx, &y).unwrap(), rho);
            }
            Ok(())
        })
        .map_err(|e| format!("spearman invariance: {e}"))?;
    done.push("spearman monotone invariance");

    Ok(format!("1000 cases each: {}", done.join(", ")))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "decomposition exactness",
            limit: Some(Duration::from_secs(60)),
            check: decomposition,
        },
        Criterion {
            id: 2,
            name: "CIFAR-10 summary table",
            limit: Some(Duration::from_secs(10)),
            check: table_reproduction,
        },
        Criterion {
            id: 3,
            name: "vulnerability counts",
            limit: None,
            check: vulnerability,
        },
        Criterion {
            id: 4,
            name: "uncalibrated Spearman",
            limit: None,
            check: uncalibrated_spearman,
        },
        Criterion {
            id: 5,
            name: "Hoeffding point value",
            limit: None,
            check: hoeffding_point,
        },
        Criterion {
            id: 6,
            name: "coverage soundness",
            limit: Some(Duration::from_secs(120)),
            check: coverage,
        },
        Criterion {
            id: 7,
            name: "Gini oracle equivalence",
            limit: None,
            check: gini_oracle,
        },
        Criterion {
            id: 8,
            name: "calibration on planted families",
            limit: None,
            check: calibration_families,
        },
        Criterion {
            id: 9,
            name: "FP-GREAT re-ranking",
            limit: None,
            check: rerank,
        },
        Criterion {
            id: 10,
            name: "metric property suite",
            limit: None,
            check: metric_properties,
        },
    ];

    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {status} [{elapsed:.2?}] {}: {detail}", c.id, c.name);
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
