//! Per-class robustness auditing from cached logits.
//!
//! The pipeline is: load a [`LogitDataset`], compute a [`PerClassProfile`]
//! of mean local robustness scores per class, summarize its inequality with
//! [`audit`], and optionally pick the activation temperature with
//! [`calibrate_accuracy`] or [`calibrate_stability`]. [`stats`] provides the
//! rank correlation and the finite-sample bounds on per-class estimates.
//!
//! No stage runs a classifier or an attack; everything is a function of the
//! logits.

mod accum;
pub mod calibration;
pub mod data;
pub mod disparity;
pub mod error;
pub mod report;
pub mod score;
pub mod stats;
pub mod synth;

pub use calibration::{
    calibrate_accuracy, calibrate_stability, pair_with_registry, AccuracySource, CalibrationMethod, CalibrationModel,
    CalibrationResult, GridSpec,
};
pub use data::{
    load_dataset_auto, load_logit_dataset, load_registry, Activation, DatasetFormat, LogitDataset, ModelRecord,
    ThreatModel,
};
pub use disparity::{audit, fairness_rerank, vulnerability_summary, DisparityReport, DEFAULT_LAMBDA};
pub use error::{AuditError, Result};
pub use score::{local_score, per_class_scores, PerClassProfile, ScoreConfig, SCORE_MAX};
