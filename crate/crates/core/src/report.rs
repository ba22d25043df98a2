//! CSV renderings of audit, calibration and bound results.
//!
//! Every float is written with Rust's `{}` formatting, the shortest decimal
//! that parses back to the same `f64`, so re-reading a table reproduces the
//! in-memory values exactly. Undefined values are empty cells.

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationResult;
use crate::disparity::{DisparityReport, RerankEntry};
use crate::error::{AuditError, Result};
use crate::score::PerClassProfile;
use crate::stats::BoundPoint;

pub const AUDIT_HEADER: [&str; 9] = [
    "model_id",
    "rb_acc",
    "gs",
    "calibrated_gs",
    "rdi",
    "nrgc",
    "wcr",
    "wcr_class",
    "fp_great",
];

fn render<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for row in rows {
        w.write_record(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line of the audit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub model_id: String,
    pub rb_acc: Option<f64>,
    /// Aggregate score at the audit temperature.
    pub gs: f64,
    /// Aggregate score at the calibrated temperature, when one was chosen.
    pub calibrated_gs: Option<f64>,
    pub rdi: f64,
    pub nrgc: f64,
    pub wcr: f64,
    pub wcr_class: String,
    pub fp_great: f64,
}

impl AuditRow {
    pub fn new(report: &DisparityReport, rb_acc: Option<f64>, calibrated_gs: Option<f64>) -> Self {
        AuditRow {
            model_id: report.model_id.clone(),
            rb_acc,
            gs: report.aggregate,
            calibrated_gs,
            rdi: report.rdi,
            nrgc: report.nrgc,
            wcr: report.wcr,
            wcr_class: report.wcr_class_name.clone(),
            fp_great: report.fp_great,
        }
    }
}

pub fn audit_csv(rows: &[AuditRow]) -> String {
    render(
        &AUDIT_HEADER,
        rows.iter().map(|r| {
            vec![
                r.model_id.clone(),
                opt(r.rb_acc),
                r.gs.to_string(),
                opt(r.calibrated_gs),
                r.rdi.to_string(),
                r.nrgc.to_string(),
                r.wcr.to_string(),
                r.wcr_class.clone(),
                r.fp_great.to_string(),
            ]
        }),
    )
}

pub fn parse_audit_csv(text: &str) -> Result<Vec<AuditRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| AuditError::InvalidDataset(format!("audit csv: {e}")))?;
    if header.iter().ne(AUDIT_HEADER.iter().copied()) {
        return Err(AuditError::InvalidDataset(format!(
            "audit csv header is `{}`, expected `{}`",
            header.iter().collect::<Vec<_>>().join(","),
            AUDIT_HEADER.join(",")
        )));
    }
    reader
        .records()
        .enumerate()
        .map(|(row, rec)| {
            let bad = |message: String| AuditError::InvalidRow { row, message };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| bad(format!("{}: `{}` is not a number", AUDIT_HEADER[i], &rec[i])))
            };
            let maybe = |i: usize| -> Result<Option<f64>> {
                if rec[i].is_empty() {
                    Ok(None)
                } else {
                    num(i).map(Some)
                }
            };
            Ok(AuditRow {
                model_id: rec[0].to_string(),
                rb_acc: maybe(1)?,
                gs: num(2)?,
                calibrated_gs: maybe(3)?,
                rdi: num(4)?,
                nrgc: num(5)?,
                wcr: num(6)?,
                wcr_class: rec[7].to_string(),
                fp_great: num(8)?,
            })
        })
        .collect()
}

/// `class,name,n_k,score` for one profile.
pub fn per_class_csv(profile: &PerClassProfile) -> String {
    render(
        &["class", "name", "n_k", "score"],
        (0..profile.num_classes()).map(|k| {
            vec![
                k.to_string(),
                profile.class_names[k].clone(),
                profile.counts[k].to_string(),
                opt(profile.scores[k]),
            ]
        }),
    )
}

fn same_classes(profiles: &[PerClassProfile]) -> Result<&[String]> {
    let first = profiles
        .first()
        .ok_or_else(|| AuditError::Domain("no profiles".into()))?;
    if let Some(p) = profiles.iter().find(|p| p.class_names != first.class_names) {
        return Err(AuditError::Domain(format!(
            "`{}` has a different class list from `{}`",
            p.model_id, first.model_id
        )));
    }
    Ok(&first.class_names)
}

/// Models by classes, rows sorted by aggregate score, highest first.
pub fn heatmap_csv(profiles: &[PerClassProfile]) -> Result<String> {
    let names = same_classes(profiles)?;
    let mut order: Vec<&PerClassProfile> = profiles.iter().collect();
    order.sort_by(|a, b| b.aggregate.total_cmp(&a.aggregate));
    let mut header = vec!["model_id", "aggregate"];
    header.extend(names.iter().map(String::as_str));
    Ok(render(
        &header,
        order.into_iter().map(|p| {
            let mut row = vec![p.model_id.clone(), p.aggregate.to_string()];
            row.extend(p.scores.iter().map(|&s| opt(s)));
            row
        }),
    ))
}

/// Classes by models: one row per class, one column per model.
pub fn radar_csv(profiles: &[PerClassProfile]) -> Result<String> {
    let names = same_classes(profiles)?;
    let mut header = vec!["class", "name"];
    header.extend(profiles.iter().map(|p| p.model_id.as_str()));
    Ok(render(
        &header,
        names.iter().enumerate().map(|(k, name)| {
            let mut row = vec![k.to_string(), name.clone()];
            row.extend(profiles.iter().map(|p| opt(p.scores[k])));
            row
        }),
    ))
}

pub fn pareto_csv(reports: &[DisparityReport]) -> String {
    render(
        &["model_id", "aggregate", "rdi"],
        reports
            .iter()
            .map(|r| vec![r.model_id.clone(), r.aggregate.to_string(), r.rdi.to_string()]),
    )
}

pub fn rerank_csv(entries: &[RerankEntry]) -> String {
    render(
        &[
            "model_id",
            "aggregate",
            "fp_great",
            "aggregate_rank",
            "fp_rank",
            "delta",
        ],
        entries.iter().map(|e| {
            vec![
                e.model_id.clone(),
                e.aggregate.to_string(),
                e.fp_great.to_string(),
                e.aggregate_rank.to_string(),
                e.fp_rank.to_string(),
                e.delta.to_string(),
            ]
        }),
    )
}

pub fn curve_csv(result: &CalibrationResult) -> String {
    render(
        &["temperature", "spearman_rho"],
        result
            .curve
            .iter()
            .map(|p| vec![p.temperature.to_string(), p.rho.to_string()]),
    )
}

pub fn bounds_csv(points: &[BoundPoint]) -> String {
    render(
        &["n", "per_class_epsilon", "rdi_epsilon"],
        points.iter().map(|p| {
            vec![
                p.n.to_string(),
                p.per_class_epsilon.to_string(),
                p.rdi_epsilon.to_string(),
            ]
        }),
    )
}
