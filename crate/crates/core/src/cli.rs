//! Command-line front end: `synth`, `train`, `predict`, `eval`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 I/O or data, 2 usage or configuration,
//! 3 divergence, 4 gradient-check failure.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data::{load_projects, synth_projects_with, DataError, ProjectHistory, Scenario, SynthOptions};
use crate::hierarchy::{forward_project, HierarchyError, PoolingKind};
use crate::model::Model;
use crate::tlstm::TimeMode;
use crate::train::gradcheck::{grad_check, GradCheckOptions, DEFAULT_TOLERANCE};
use crate::train::{
    head_metrics, load_checkpoint, save_checkpoint, train_epochs, write_metrics_csv, CheckpointError, HeadMetrics,
    TrainConfig, TrainError,
};

#[derive(Debug, Parser)]
#[command(name = "deepsoft", version, about = "Hierarchical irregular-time LSTM over issue and release histories")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic JSONL corpus.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Write per-issue, per-release and per-project probabilities.
    Predict(PredictArgs),
    /// Score a predictions CSV.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences in every time mode.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub projects: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// bug_mass_delay or random_labels
    #[arg(long, default_value = "bug_mass_delay")]
    pub scenario: String,
    /// Mean gap between consecutive issues, in days.
    #[arg(long)]
    pub gap_mean: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// JSON training configuration merged over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// none, monotonic or parametric
    #[arg(long)]
    pub time_mode: Option<String>,
    /// mean or recency; applies to both pooling stages
    #[arg(long)]
    pub pooling: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Divergence(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::GradCheck(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Divergence(e.to_string()),
            TrainError::Hierarchy(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<HierarchyError> for CliError {
    fn from(e: HierarchyError) -> Self {
        CliError::Io(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let scenario = Scenario::parse(&args.scenario)
        .ok_or_else(|| CliError::Usage(format!("unknown scenario {:?} (expected bug_mass_delay or random_labels)", args.scenario)))?;
    let mut opts = SynthOptions::new(scenario);
    if let Some(gap) = args.gap_mean {
        if !(gap > 0.0 && gap.is_finite()) {
            return Err(CliError::Usage("--gap-mean must be positive".into()));
        }
        opts.mean_gap_days = gap;
    }
    let projects = synth_projects_with(args.projects, args.seed, &opts);
    crate::data::write_projects(&args.out, &projects)?;
    info!("wrote {} projects to {}", projects.len(), args.out.display());
    Ok(())
}

fn load(path: &Path) -> Result<Vec<ProjectHistory>, CliError> {
    let report = load_projects(path)?;
    for w in &report.warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(report.projects)
}

/// Recursively overlay `patch` onto `base`.
fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: invalid JSON: {e}", path.display())))?;
            let mut base = serde_json::to_value(TrainConfig::default()).expect("defaults serialize");
            merge_json(&mut base, patch);
            serde_json::from_value(base).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(m) = &args.time_mode {
        config.model.time_mode =
            TimeMode::parse(m).ok_or_else(|| CliError::Usage(format!("unknown time mode {m:?}")))?;
    }
    if let Some(p) = &args.pooling {
        let kind = PoolingKind::parse(p).ok_or_else(|| CliError::Usage(format!("unknown pooling {p:?}")))?;
        config.model.release_pooling.kind = kind;
        config.model.project_pooling.kind = kind;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = resolve_train_config(args)?;
    let train = load(&args.data)?;
    let val = args.val.as_deref().map(load).transpose()?;
    let outcome = train_epochs(&train, val.as_deref(), &config)?;
    save_checkpoint(&args.out, &outcome.checkpoint)?;
    if let Some(path) = &args.metrics {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        write_metrics_csv(BufWriter::new(file), &outcome.metrics).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub project_id: String,
    pub level: String,
    pub entity_id: String,
    pub probability: f64,
    pub label: Option<bool>,
}

/// Issue rows, then release rows, then the project row. Projects without
/// releases get issue rows only.
pub fn predictions(model: &Model, projects: &[ProjectHistory]) -> Result<Vec<PredictionRecord>, HierarchyError> {
    let mut out = Vec::new();
    for p in projects {
        let fwd = forward_project(model, p)?;
        let row = |level: &str, id: &str, prob: f64, label| PredictionRecord {
            project_id: p.project_id.clone(),
            level: level.into(),
            entity_id: id.into(),
            probability: prob,
            label,
        };
        for (issue, &prob) in p.issues.iter().zip(&fwd.issue_probs) {
            out.push(row("issue", &issue.issue_id, prob, issue.label_delayed));
        }
        for (rel, &prob) in p.releases.iter().zip(fwd.release_probs()) {
            out.push(row("release", &rel.release_id, prob, rel.label_delayed));
        }
        if let Some(prob) = fwd.project_prob() {
            out.push(row("project", &p.project_id, prob, p.label_project));
        }
    }
    Ok(out)
}

pub fn write_predictions(out: impl Write, rows: &[PredictionRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["project_id", "level", "entity_id", "probability", "label"])?;
    for r in rows {
        let label = match r.label {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        w.write_record([r.project_id.as_str(), &r.level, &r.entity_id, &r.probability.to_string(), label])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["project_id", "level", "entity_id", "probability", "label"] {
        return Err(CliError::Usage(format!("{}: unexpected header {:?}", path.display(), headers)));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let bad = |m: String| CliError::Usage(format!("{} row {}: {m}", path.display(), i + 2));
        let probability: f64 = rec[3].parse().map_err(|_| bad(format!("bad probability {:?}", &rec[3])))?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(bad(format!("probability {probability} outside [0, 1]")));
        }
        let label = match rec[4].trim() {
            "" => None,
            "1" | "true" => Some(true),
            "0" | "false" => Some(false),
            other => return Err(bad(format!("bad label {other:?}"))),
        };
        rows.push(PredictionRecord {
            project_id: rec[0].to_owned(),
            level: rec[1].to_owned(),
            entity_id: rec[2].to_owned(),
            probability,
            label,
        });
    }
    Ok(rows)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let (_, model) = load_checkpoint(&args.model)?;
    let projects = load(&args.data)?;
    let rows = predictions(&model, &projects)?;
    let file = File::create(&args.out).map_err(|e| io_err(&args.out, e))?;
    write_predictions(BufWriter::new(file), &rows).map_err(|e| io_err(&args.out, e))?;
    Ok(())
}

/// Metrics for one level, or the string "n/a" when it carries no labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelReport {
    Metrics(HeadMetrics),
    NotAvailable(String),
}

pub fn eval_predictions(rows: &[PredictionRecord]) -> BTreeMap<String, LevelReport> {
    ["issue", "release", "project"]
        .into_iter()
        .map(|level| {
            let pairs: Vec<(f64, Option<bool>)> =
                rows.iter().filter(|r| r.level == level).map(|r| (r.probability, r.label)).collect();
            let report = head_metrics(&pairs).map_or_else(|| LevelReport::NotAvailable("n/a".into()), LevelReport::Metrics);
            (level.to_owned(), report)
        })
        .collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let rows = read_predictions(&args.preds)?;
    let report = eval_predictions(&rows);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(&args.out, text).map_err(|e| io_err(&args.out, e))
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let mut failed = Vec::new();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for mode in [TimeMode::None, TimeMode::Monotonic, TimeMode::Parametric] {
        let opts = GradCheckOptions { tolerance: args.tolerance, ..GradCheckOptions::new(args.seed, mode) };
        let report = grad_check(&opts)?;
        let verdict = if report.passed() { "pass" } else { "FAIL" };
        let _ = writeln!(out, "time_mode={} max rel err {:.3e} {verdict}\n{report}", mode.name(), report.max_rel_error());
        failed.extend(report.failures().map(|t| format!("{}:{}", mode.name(), t.name)));
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_overlays_nested_fields() {
        let mut base = serde_json::json!({"a": 1, "m": {"x": 1, "y": 2}});
        merge_json(&mut base, serde_json::json!({"m": {"y": 5}, "b": true}));
        assert_eq!(base, serde_json::json!({"a": 1, "b": true, "m": {"x": 1, "y": 5}}));
    }

    #[test]
    fn eval_marks_unlabeled_levels() {
        let rows = vec![
            PredictionRecord { project_id: "p".into(), level: "release".into(), entity_id: "r1".into(), probability: 0.8, label: Some(true) },
            PredictionRecord { project_id: "p".into(), level: "release".into(), entity_id: "r2".into(), probability: 0.1, label: Some(false) },
            PredictionRecord { project_id: "p".into(), level: "project".into(), entity_id: "p".into(), probability: 0.4, label: None },
        ];
        let report = eval_predictions(&rows);
        assert_eq!(report["project"], LevelReport::NotAvailable("n/a".into()));
        assert_eq!(report["issue"], LevelReport::NotAvailable("n/a".into()));
        match &report["release"] {
            LevelReport::Metrics(m) => assert_eq!(m.auc, Some(1.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_scenario_is_usage_error() {
        let args = SynthArgs { projects: 1, seed: 0, scenario: "nope".into(), gap_mean: None, out: "unused".into() };
        assert_eq!(cmd_synth(&args).unwrap_err().exit_code(), 2);
    }
}
