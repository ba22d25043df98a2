mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use robaudit::calibration::{
    calibrate_accuracy, calibrate_stability, pair_with_registry, AccuracySource, CalibrationResult, GridSpec,
};
use robaudit::data::{export_logit_dataset, load_dataset_auto, load_registry, DatasetFormat, ModelRecord};
use robaudit::disparity::{audit, fairness_rerank, vulnerability_summary, DisparityReport};
use robaudit::report::{self, AuditRow};
use robaudit::score::{per_class_scores, PerClassProfile, ScoreConfig};
use robaudit::stats::{bound_curve, coverage_experiment, ConcentrationBound, ScoreDistribution};
use robaudit::synth::{synthesize, SyntheticSpec};
use robaudit::{Activation, AuditError, LogitDataset};

use output::OutputDir;

/// Exit status plus message for a failed command.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::input(format!("{}: {e}", path.display()))
    }
}

impl From<AuditError> for Failure {
    fn from(e: AuditError) -> Self {
        Failure {
            code: if e.is_undefined() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FileFormat {
    Csv,
    Binary,
}

impl From<FileFormat> for DatasetFormat {
    fn from(f: FileFormat) -> Self {
        match f {
            FileFormat::Csv => DatasetFormat::Csv,
            FileFormat::Binary => DatasetFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ActivationArg {
    Sigmoid,
    Softmax,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Sigmoid => Activation::Sigmoid,
            ActivationArg::Softmax => Activation::Softmax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Accuracy,
    Stability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AccuracyArg {
    Clean,
    Robustbench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistArg {
    Uniform,
    BernoulliExtremes,
    PointMass,
}

/// Per-class robustness audit from cached logits.
#[derive(Debug, Parser)]
#[command(name = "robaudit", version)]
struct Cli {
    /// Directory for report files; created when the command succeeds.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Seed for synthetic generation and Monte-Carlo runs.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: OutputFormat,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ScoringArgs {
    /// Activation temperature.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,

    /// Activation; defaults to the registry entry, or sigmoid without one.
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-class scores of one dataset.
    Score {
        /// Logit file (CSV or binary).
        dataset: PathBuf,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Disparity metrics for every model in a manifest or directory.
    Audit {
        /// Multi-model manifest, dataset directory, or single dataset.
        input: PathBuf,
        /// Model registry (JSON) for activations and accuracies.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Weight of RDI in the fairness-penalized score.
        #[arg(long, default_value_t = robaudit::DEFAULT_LAMBDA)]
        lambda: f64,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Choose the activation temperature, then re-audit at it.
    Calibrate {
        /// Multi-model manifest, dataset directory, or single dataset.
        input: PathBuf,
        /// Model registry (JSON); required for accuracy calibration.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Objective for choosing the temperature.
        #[arg(long, value_enum, default_value = "accuracy")]
        method: MethodArg,
        /// Which registry accuracy to correlate against.
        #[arg(long, value_enum, default_value = "clean")]
        accuracy: AccuracyArg,
        /// Half-width of the stability probe window.
        #[arg(long, default_value_t = 0.05)]
        delta_t: f64,
        /// Probe temperatures per stability evaluation.
        #[arg(long, default_value_t = 5)]
        probes: usize,
        /// Weight of RDI in the fairness-penalized score.
        #[arg(long, default_value_t = robaudit::DEFAULT_LAMBDA)]
        lambda: f64,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Concentration bounds at one sample size or over a range.
    Bounds {
        /// Per-class sample size.
        #[arg(long, required_unless_present = "curve", conflicts_with = "curve")]
        n: Option<u64>,
        /// Log-spaced range `n_min..n_max`.
        #[arg(long)]
        curve: Option<String>,
        /// Number of sample sizes on the curve.
        #[arg(long, default_value_t = 50)]
        points: usize,
        /// Number of classes.
        #[arg(long)]
        k: usize,
        /// Failure probability.
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Generate a dataset hitting target per-class scores.
    Synth {
        /// Synthetic dataset spec (JSON).
        spec: PathBuf,
        /// File format of the generated dataset.
        #[arg(long, value_enum, default_value = "csv")]
        dataset_format: FileFormat,
    },
    /// Monte-Carlo coverage of the simultaneous per-class bound.
    Coverage {
        /// Number of classes.
        #[arg(long)]
        k: usize,
        /// Samples per class.
        #[arg(long)]
        n: u64,
        /// Failure probability.
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Monte-Carlo trials.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Distribution of local scores in each trial.
        #[arg(long, value_enum, default_value = "uniform")]
        dist: DistArg,
        /// Value of the point mass.
        #[arg(long, default_value_t = 0.5)]
        point: f64,
    },
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    model_id: String,
    logits_path: PathBuf,
}

fn read_to_string(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

/// Datasets named by a multi-model manifest (a JSON array), every dataset
/// file in a directory, or a single dataset file.
fn load_inputs(input: &Path) -> CliResult<Vec<LogitDataset>> {
    if !input.exists() {
        return Err(Failure::input(format!(
            "{}: no such file or directory",
            input.display()
        )));
    }
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(|e| Failure::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| DatasetFormat::from_path(p).is_some())
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Failure::input(format!("{}: no dataset files", input.display())));
        }
        return paths.iter().map(|p| Ok(load_dataset_auto(p)?)).collect();
    }
    if input.extension().is_some_and(|e| e == "json") {
        let text = read_to_string(input)?;
        if text.trim_start().starts_with('[') {
            let entries: Vec<ManifestEntry> =
                serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", input.display())))?;
            if entries.is_empty() {
                return Err(Failure::input(format!("{}: manifest lists no models", input.display())));
            }
            let base = input.parent().unwrap_or(Path::new("."));
            let paths: Vec<PathBuf> = entries.iter().map(|e| base.join(&e.logits_path)).collect();
            if let Some(missing) = paths.iter().find(|p| !p.exists()) {
                return Err(Failure::input(format!("{}: no such file", missing.display())));
            }
            return entries
                .iter()
                .zip(paths)
                .map(|(e, p)| Ok(load_dataset_auto(&p)?.with_model_id(e.model_id.clone())))
                .collect();
        }
    }
    Ok(vec![load_dataset_auto(input)?])
}

fn load_optional_registry(path: Option<&Path>) -> CliResult<Vec<ModelRecord>> {
    match path {
        None => Ok(Vec::new()),
        Some(p) if !p.exists() => Err(Failure::input(format!("{}: no such file", p.display()))),
        Some(p) => Ok(load_registry(p)?),
    }
}

fn record_for<'a>(registry: &'a [ModelRecord], model_id: &str) -> Option<&'a ModelRecord> {
    registry.iter().find(|r| r.model_id == model_id)
}

fn activation_for(scoring: &ScoringArgs, record: Option<&ModelRecord>) -> Activation {
    scoring
        .activation
        .map(Activation::from)
        .or(record.map(|r| r.activation))
        .unwrap_or(Activation::Sigmoid)
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report types serialize")
    );
}

/// Output of one command: files for the report directory and the stdout
/// summary in both formats.
struct Outcome {
    files: Vec<(String, Vec<u8>)>,
    exports: Vec<(String, LogitDataset, DatasetFormat)>,
    csv: String,
    json: serde_json::Value,
}

impl Outcome {
    fn new<T: Serialize>(csv: String, json: &T) -> Self {
        Outcome {
            files: Vec::new(),
            exports: Vec::new(),
            csv,
            json: serde_json::to_value(json).expect("report types serialize"),
        }
    }

    fn file(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    fn json_file<T: Serialize>(&mut self, name: impl Into<String>, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
        text.push('\n');
        self.file(name, text);
    }
}

fn cmd_score(dataset: &Path, scoring: &ScoringArgs) -> CliResult<Outcome> {
    if !dataset.exists() {
        return Err(Failure::input(format!("{}: no such file", dataset.display())));
    }
    let ds = load_dataset_auto(dataset)?;
    let config = ScoreConfig::new(scoring.temperature, activation_for(scoring, None))?;
    let profile = per_class_scores(&ds, &config);
    let csv = report::per_class_csv(&profile);
    let mut out = Outcome::new(csv.clone(), &profile);
    out.json_file("profile.json", &profile);
    out.file("per_class.csv", csv);
    Ok(out)
}

#[derive(Serialize)]
struct AuditSummary<'a> {
    temperature: f64,
    lambda: f64,
    reports: &'a [DisparityReport],
    #[serde(skip_serializing_if = "Option::is_none")]
    vulnerability: Option<&'a robaudit::disparity::VulnerabilitySummary>,
}

/// Audit files shared by `audit` and `calibrate`.
fn audit_outputs(
    out: &mut Outcome,
    profiles: &[PerClassProfile],
    reports: &[DisparityReport],
    rows: &[AuditRow],
) -> CliResult<()> {
    out.file("audit.csv", report::audit_csv(rows));
    out.json_file("reports.json", &reports);
    out.json_file("profiles.json", &profiles);
    match report::heatmap_csv(profiles) {
        Ok(map) => {
            out.file("heatmap.csv", map);
            out.file("radar.csv", report::radar_csv(profiles)?);
            let summary = vulnerability_summary(reports, &profiles[0].class_names)?;
            out.json_file("vulnerability.json", &summary);
        }
        Err(e) => eprintln!("warning: skipping heatmap, radar and vulnerability outputs: {e}"),
    }
    out.file("pareto.csv", report::pareto_csv(reports));
    out.file("rerank.csv", report::rerank_csv(&fairness_rerank(reports)));
    Ok(())
}

fn audit_summary(
    out: &mut Outcome,
    temperature: f64,
    lambda: f64,
    reports: &[DisparityReport],
    profiles: &[PerClassProfile],
) {
    let vulnerability = report::heatmap_csv(profiles)
        .ok()
        .and_then(|_| vulnerability_summary(reports, &profiles[0].class_names).ok());
    out.json = serde_json::to_value(AuditSummary {
        temperature,
        lambda,
        reports,
        vulnerability: vulnerability.as_ref(),
    })
    .expect("report types serialize");
}

fn cmd_audit(input: &Path, registry: Option<&Path>, lambda: f64, scoring: &ScoringArgs) -> CliResult<Outcome> {
    let registry = load_optional_registry(registry)?;
    let datasets = load_inputs(input)?;
    let mut profiles = Vec::with_capacity(datasets.len());
    let mut reports = Vec::with_capacity(datasets.len());
    let mut rows = Vec::with_capacity(datasets.len());
    for ds in &datasets {
        let record = record_for(&registry, ds.model_id());
        let config = ScoreConfig::new(scoring.temperature, activation_for(scoring, record))?;
        let profile = per_class_scores(ds, &config);
        let r = audit(&profile, lambda)?;
        rows.push(AuditRow::new(&r, record.and_then(|r| r.robustbench_accuracy), None));
        reports.push(r);
        profiles.push(profile);
    }
    let mut out = Outcome::new(report::audit_csv(&rows), &());
    audit_outputs(&mut out, &profiles, &reports, &rows)?;
    audit_summary(&mut out, scoring.temperature, lambda, &reports, &profiles);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_calibrate(
    input: &Path,
    registry: Option<&Path>,
    method: MethodArg,
    accuracy: AccuracyArg,
    delta_t: f64,
    probes: usize,
    lambda: f64,
    scoring: &ScoringArgs,
) -> CliResult<Outcome> {
    let registry = load_optional_registry(registry)?;
    let datasets = load_inputs(input)?;
    let grid = GridSpec::default();

    let activation_of = |ds: &LogitDataset| activation_for(scoring, record_for(&registry, ds.model_id()));
    let results: Vec<(CalibrationResult, Vec<usize>)> = match method {
        MethodArg::Accuracy => {
            if registry.is_empty() {
                return Err(Failure::input("accuracy calibration needs --registry"));
            }
            let source = match accuracy {
                AccuracyArg::Clean => AccuracySource::Clean,
                AccuracyArg::Robustbench => AccuracySource::RobustBench,
            };
            let (models, registry_activation) = pair_with_registry(&datasets, &registry, source)?;
            let activation = scoring.activation.map(Activation::from).unwrap_or(registry_activation);
            let result = calibrate_accuracy(&models, activation, &grid)?;
            vec![(result, (0..datasets.len()).collect())]
        }
        MethodArg::Stability => datasets
            .iter()
            .enumerate()
            .map(|(i, ds)| {
                Ok((
                    calibrate_stability(ds, activation_of(ds), &grid, delta_t, probes)?,
                    vec![i],
                ))
            })
            .collect::<CliResult<_>>()?,
    };

    let mut t_star = vec![0.0; datasets.len()];
    for (result, members) in &results {
        for &i in members {
            t_star[i] = result.t_star;
        }
    }

    let mut profiles = Vec::with_capacity(datasets.len());
    let mut reports = Vec::with_capacity(datasets.len());
    let mut rows = Vec::with_capacity(datasets.len());
    for (ds, &t) in datasets.iter().zip(&t_star) {
        let activation = activation_of(ds);
        let base = per_class_scores(ds, &ScoreConfig::new(scoring.temperature, activation)?);
        let calibrated = per_class_scores(ds, &ScoreConfig::new(t, activation)?);
        let r = audit(&calibrated, lambda)?;
        let mut row = AuditRow::new(
            &r,
            record_for(&registry, ds.model_id()).and_then(|r| r.robustbench_accuracy),
            Some(calibrated.aggregate),
        );
        row.gs = base.aggregate;
        rows.push(row);
        reports.push(r);
        profiles.push(calibrated);
    }

    let mut out = match method {
        MethodArg::Accuracy => {
            let result = &results[0].0;
            let mut out = Outcome::new(report::audit_csv(&rows), result);
            out.json_file("calibration.json", result);
            out.file("curve.csv", report::curve_csv(result));
            out
        }
        MethodArg::Stability => {
            let all: Vec<&CalibrationResult> = results.iter().map(|r| &r.0).collect();
            let mut out = Outcome::new(report::audit_csv(&rows), &all);
            out.json_file("calibration.json", &all);
            for (ds, result) in datasets.iter().zip(&all) {
                out.file(format!("curve_{}.csv", ds.model_id()), report::curve_csv(result));
            }
            out
        }
    };
    audit_outputs(&mut out, &profiles, &reports, &rows)?;
    Ok(out)
}

fn parse_range(text: &str) -> CliResult<(u64, u64)> {
    let bad = || Failure::input(format!("--curve expects n_min..n_max, got `{text}`"));
    let (lo, hi) = text.split_once("..").ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

fn cmd_bounds(n: Option<u64>, curve: Option<&str>, points: usize, k: usize, delta: f64) -> CliResult<Outcome> {
    match (n, curve) {
        (_, Some(range)) => {
            let (lo, hi) = parse_range(range)?;
            let pts = bound_curve(lo, hi, points, k, delta)?;
            let csv = report::bounds_csv(&pts);
            let mut out = Outcome::new(csv.clone(), &pts);
            out.file("bounds.csv", csv);
            Ok(out)
        }
        (Some(n), None) => {
            let bound = ConcentrationBound::from_counts(&vec![n as usize; k], delta)?;
            let pts = bound_curve(n, n, 1, k, delta)?;
            let mut out = Outcome::new(report::bounds_csv(&pts), &bound);
            out.json_file("bounds.json", &bound);
            Ok(out)
        }
        (None, None) => Err(Failure::input("bounds needs --n or --curve")),
    }
}

#[derive(Serialize)]
struct SynthSummary {
    path: PathBuf,
    model_id: String,
    num_samples: usize,
    num_classes: usize,
    achieved_scores: Vec<Option<f64>>,
}

fn cmd_synth(spec_path: &Path, seed: Option<u64>, format: FileFormat, output_dir: Option<&Path>) -> CliResult<Outcome> {
    if output_dir.is_none() {
        return Err(Failure::input("synth needs --output-dir"));
    }
    let mut spec: SyntheticSpec = serde_json::from_str(&read_to_string(spec_path)?)
        .map_err(|e| Failure::input(format!("{}: {e}", spec_path.display())))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let ds = synthesize(&spec)?;
    let profile = per_class_scores(&ds, &ScoreConfig::new(spec.temperature, spec.activation)?);
    let name = match format {
        FileFormat::Csv => format!("{}.csv", spec.model_id),
        FileFormat::Binary => format!("{}.json", spec.model_id),
    };

    let summary = SynthSummary {
        path: output_dir.unwrap().join(&name),
        model_id: spec.model_id.clone(),
        num_samples: ds.num_samples(),
        num_classes: ds.num_classes(),
        achieved_scores: profile.scores.clone(),
    };
    let mut out = Outcome::new(report::per_class_csv(&profile), &summary);
    out.exports.push((name, ds, format.into()));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_coverage(
    k: usize,
    n: u64,
    delta: f64,
    trials: u64,
    dist: DistArg,
    point: f64,
    seed: Option<u64>,
) -> CliResult<Outcome> {
    let dist = match dist {
        DistArg::Uniform => ScoreDistribution::Uniform,
        DistArg::BernoulliExtremes => ScoreDistribution::BernoulliExtremes,
        DistArg::PointMass => ScoreDistribution::PointMass(point),
    };
    let report = coverage_experiment(&vec![dist; k], n, delta, trials, seed.unwrap_or(0))?;
    let csv = format!(
        "num_classes,n_per_class,delta,epsilon,trials,covered_trials,coverage,violation\n{},{},{},{},{},{},{},{}\n",
        report.num_classes,
        report.n_per_class,
        report.delta,
        report.epsilon,
        report.trials,
        report.covered_trials,
        report.coverage,
        report.violation
    );
    let mut out = Outcome::new(csv, &report);
    out.json_file("coverage.json", &report);
    Ok(out)
}

fn run(cli: &Cli) -> CliResult<()> {
    let outcome = match &cli.command {
        Command::Score { dataset, scoring } => cmd_score(dataset, scoring),
        Command::Audit {
            input,
            registry,
            lambda,
            scoring,
        } => cmd_audit(input, registry.as_deref(), *lambda, scoring),
        Command::Calibrate {
            input,
            registry,
            method,
            accuracy,
            delta_t,
            probes,
            lambda,
            scoring,
        } => cmd_calibrate(
            input,
            registry.as_deref(),
            *method,
            *accuracy,
            *delta_t,
            *probes,
            *lambda,
            scoring,
        ),
        Command::Bounds {
            n,
            curve,
            points,
            k,
            delta,
        } => cmd_bounds(*n, curve.as_deref(), *points, *k, *delta),
        Command::Synth { spec, dataset_format } => {
            cmd_synth(spec, cli.seed, *dataset_format, cli.output_dir.as_deref())
        }
        Command::Coverage {
            k,
            n,
            delta,
            trials,
            dist,
            point,
        } => cmd_coverage(*k, *n, *delta, *trials, *dist, *point, cli.seed),
    };

    let dir = match &cli.output_dir {
        Some(path) => Some(OutputDir::create(path)?),
        None => None,
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(f) => {
            if let Some(d) = dir {
                d.fail(&f);
            }
            return Err(f);
        }
    };
    if let Some(d) = dir {
        let written = outcome
            .files
            .iter()
            .try_for_each(|(name, bytes)| d.write(name, bytes))
            .and_then(|()| {
                outcome
                    .exports
                    .iter()
                    .try_for_each(|(name, ds, format)| Ok(export_logit_dataset(ds, &d.path().join(name), *format)?))
            });
        match written {
            Ok(()) => {
                d.commit()?;
            }
            Err(f) => {
                d.fail(&f);
                return Err(f);
            }
        }
    }
    match cli.format {
        OutputFormat::Json => print_json(&outcome.json),
        OutputFormat::Csv => print!("{}", outcome.csv),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
