//! Training loop, evaluation, gradient checking and checkpoints.
//!
//! Projects are the batching unit: each project's hierarchy is run forward and
//! backward independently (in parallel), and the per-project gradient bundles
//! are summed in project order so results do not depend on thread scheduling.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod optim;

use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{build_vocab, ProjectHistory};
use crate::hierarchy::{backward_project, forward_project, HierarchyError};
use crate::model::{Model, ModelConfig, ModelParams};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TrainingMeta};
pub use gradcheck::{compare_gradients, grad_check, GradCheckOptions, GradCheckReport, TensorCheck, TensorStatus};
pub use loss::{LossBreakdown, LossWeights};
pub use metrics::{auc, head_metrics, HeadMetrics};
use optim::{clip_global_norm, sgd_step, Adam, AdamConfig, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub optimizer: OptimizerKind,
    /// Projects per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            optimizer: OptimizerKind::Adam,
            batch_size: 8,
            epochs: 10,
            grad_clip_norm: 5.0,
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    NoTrainingData,
    #[error("no training labels for any head with a non-zero loss weight")]
    NoMatchingLabels,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !self.loss_weights.is_valid() {
            return bad("loss weights must be non-negative with at least one positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return bad("grad_clip_norm must be positive");
        }
        let m = &self.model;
        if m.embed_dim == 0 || m.hidden_dim == 0 || m.release_hidden() == 0 || m.mlp_hidden_dim == 0 {
            return bad("all model dimensions must be positive");
        }
        for spec in [&m.release_pooling, &m.project_pooling] {
            if !(spec.lambda_per_day >= 0.0 && spec.lambda_per_day.is_finite()) {
                return bad("lambda_per_day must be finite and non-negative");
            }
        }
        Ok(())
    }
}

/// Per-head metrics over a set of projects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub issue: Option<HeadMetrics>,
    pub release: Option<HeadMetrics>,
    pub project: Option<HeadMetrics>,
    /// Weighted total loss averaged over projects that have any label.
    pub loss: Option<f64>,
}

impl EvalReport {
    pub fn heads(&self) -> [(&'static str, Option<&HeadMetrics>); 3] {
        [
            ("issue", self.issue.as_ref()),
            ("release", self.release.as_ref()),
            ("project", self.project.as_ref()),
        ]
    }
}

/// Run the model over `projects` and score every labeled head output.
pub fn evaluate(model: &Model, projects: &[ProjectHistory], weights: &LossWeights) -> Result<EvalReport, HierarchyError> {
    let forwards = projects
        .par_iter()
        .map(|p| forward_project(model, p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut issue = Vec::new();
    let mut release = Vec::new();
    let mut project = Vec::new();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (fwd, p) in forwards.iter().zip(projects) {
        let (i, r, pr) = fwd.targets(p);
        issue.extend(i);
        release.extend(r);
        project.extend(pr);
        if let Some(l) = fwd.loss(p, weights) {
            total += l.total;
            counted += 1;
        }
    }
    Ok(EvalReport {
        issue: head_metrics(&issue),
        release: head_metrics(&release),
        project: head_metrics(&project),
        loss: (counted > 0).then(|| total / counted as f64),
    })
}

/// One row of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub head: String,
    pub loss: f64,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
}

fn report_rows(epoch: usize, split: &str, report: &EvalReport) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    if let Some(loss) = report.loss {
        rows.push(MetricsRow { epoch, split: split.into(), head: "total".into(), loss, auc: None, accuracy: None });
    }
    for (head, m) in report.heads() {
        if let Some(m) = m {
            rows.push(MetricsRow {
                epoch,
                split: split.into(),
                head: head.into(),
                loss: m.bce,
                auc: m.auc,
                accuracy: Some(m.accuracy),
            });
        }
    }
    rows
}

/// Write rows as CSV with header `epoch,split,head,loss,auc,accuracy`.
pub fn write_metrics_csv(out: impl Write, rows: &[MetricsRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "split", "head", "loss", "auc", "accuracy"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.split.clone(),
            r.head.clone(),
            r.loss.to_string(),
            opt(r.auc),
            opt(r.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Result of [`train_epochs`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
    /// Final training-set evaluation.
    pub train_report: EvalReport,
    pub val_report: Option<EvalReport>,
}

/// Sum per-project gradients for one batch, in project order.
pub fn batch_gradients(
    model: &Model,
    batch: &[&ProjectHistory],
    weights: &LossWeights,
) -> Result<(ModelParams, f64, usize), HierarchyError> {
    let results: Vec<Option<(ModelParams, LossBreakdown)>> = batch
        .par_iter()
        .map(|p| {
            if !p.has_labels() {
                return Ok(None);
            }
            let fwd = forward_project(model, p)?;
            backward_project(model, p, &fwd, weights).map(Some)
        })
        .collect::<Result<_, _>>()?;
    let mut total = model.params.zeros_like();
    let mut loss = 0.0;
    let mut used = 0;
    for (g, l) in results.into_iter().flatten() {
        total.add_scaled(1.0, &g);
        loss += l.total;
        used += 1;
    }
    Ok((total, loss, used))
}

enum Optimizer {
    Adam(Adam),
    Sgd(f64),
}

/// Train a fresh model on `train`, logging metrics on `train` (and `val`) after
/// every epoch. Deterministic in `(train, val, config)`.
pub fn train_epochs(
    train: &[ProjectHistory],
    val: Option<&[ProjectHistory]>,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    let w = &config.loss_weights;
    let has = |pred: &dyn Fn(&ProjectHistory) -> bool| train.iter().any(pred);
    let usable = (w.issue > 0.0 && has(&|p| p.issues.iter().any(|i| i.label_delayed.is_some())))
        || (w.release > 0.0 && has(&|p| p.releases.iter().any(|r| r.label_delayed.is_some())))
        || (w.project > 0.0 && has(&|p| p.label_project.is_some() && !p.releases.is_empty()));
    if !usable {
        return Err(TrainError::NoMatchingLabels);
    }

    let vocab = build_vocab(train, config.model.min_count);
    let mut model = Model::new(config.model.clone(), vocab, config.seed);
    let mask: Vec<bool> = model.params.tensors().iter().map(|t| t.trainable).collect();
    let sizes: Vec<usize> = model.params.tensors().iter().map(|t| t.values.len()).collect();
    let mut optimizer = match config.optimizer {
        OptimizerKind::Adam => Optimizer::Adam(Adam::new(
            AdamConfig {
                learning_rate: config.learning_rate,
                beta1: config.adam_beta1,
                beta2: config.adam_beta2,
                epsilon: config.adam_epsilon,
            },
            &sizes,
        )),
        OptimizerKind::Sgd => Optimizer::Sgd(config.learning_rate),
    };
    info!(
        "training on {} projects, {} parameters, vocabulary {}",
        train.len(),
        model.params.parameter_count(),
        model.vocab.size()
    );

    // separate stream from initialization
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_5EED_5EED_5EED);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::new();
    let mut loss_history = Vec::new();
    let mut train_report = evaluate(&model, train, w)?;
    let mut val_report = val.map(|v| evaluate(&model, v, w)).transpose()?;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&ProjectHistory> = chunk.iter().map(|&i| &train[i]).collect();
            let (mut grads, loss, used) = batch_gradients(&model, &batch, w)?;
            if used == 0 {
                continue;
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::Divergence { epoch, batch: b + 1 });
            }
            let mut g_views = grads.tensors_mut();
            let norm = clip_global_norm(&mut g_views, &mask, config.grad_clip_norm);
            debug!("epoch {epoch} batch {} loss {loss:.6} grad norm {norm:.4}", b + 1);
            let g_read: Vec<&[f64]> = g_views.iter().map(|g| &**g).collect();
            let mut p_views = model.params.tensors_mut();
            match &mut optimizer {
                Optimizer::Adam(adam) => adam.step(&mut p_views, &g_read, &mask),
                Optimizer::Sgd(lr) => sgd_step(&mut p_views, &g_read, &mask, *lr),
            }
            if !model.params.is_finite() {
                return Err(TrainError::Divergence { epoch, batch: b + 1 });
            }
        }

        train_report = evaluate(&model, train, w)?;
        let train_loss = train_report.loss.unwrap_or(f64::NAN);
        if !train_loss.is_finite() {
            return Err(TrainError::Divergence { epoch, batch: order.len().div_ceil(config.batch_size) });
        }
        loss_history.push(train_loss);
        metrics.extend(report_rows(epoch, "train", &train_report));
        if let Some(v) = val {
            let report = evaluate(&model, v, w)?;
            metrics.extend(report_rows(epoch, "validation", &report));
            val_report = Some(report);
        }
        info!("epoch {epoch}: train loss {train_loss:.5}");
    }

    let checkpoint = Checkpoint::from_model(
        &model,
        TrainingMeta { epoch: config.epochs, seed: config.seed, loss_history },
    );
    Ok(TrainOutcome { model, checkpoint, metrics, train_report, val_report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_projects, Scenario};

    fn quick_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig { embed_dim: 4, hidden_dim: 5, mlp_hidden_dim: 4, ..Default::default() },
            epochs: 2,
            batch_size: 3,
            learning_rate: 1e-2,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let projects = synth_projects(4, 1, Scenario::BugMassDelay);
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, ..quick_config() };
        let out = train_epochs(&projects, None, &cfg).unwrap();
        let init = Model::new(cfg.model.clone(), out.model.vocab.clone(), cfg.seed);
        let bits = |p: &ModelParams| -> Vec<u64> {
            p.tensors().iter().flat_map(|t| t.values.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&out.model.params), bits(&init.params));
    }

    #[test]
    fn runs_are_deterministic() {
        let projects = synth_projects(5, 2, Scenario::BugMassDelay);
        let a = train_epochs(&projects, Some(&projects[..2]), &quick_config()).unwrap();
        let b = train_epochs(&projects, Some(&projects[..2]), &quick_config()).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.checkpoint.to_json(), b.checkpoint.to_json());
    }

    #[test]
    fn duplicated_project_doubles_gradient() {
        let projects = synth_projects(1, 4, Scenario::BugMassDelay);
        let model = Model::new(quick_config().model, build_vocab(&projects, 1), 1);
        let w = LossWeights::default();
        let (single, l1, _) = batch_gradients(&model, &[&projects[0]], &w).unwrap();
        let (double, l2, _) = batch_gradients(&model, &[&projects[0], &projects[0]], &w).unwrap();
        assert_eq!(l2, 2.0 * l1);
        for (a, b) in single.tensors().iter().zip(double.tensors()) {
            for (x, y) in a.values.iter().zip(b.values) {
                assert_eq!(2.0 * x, *y, "{}", a.name);
            }
        }
    }

    #[test]
    fn missing_labels_for_weighted_heads_rejected() {
        let mut projects = synth_projects(2, 1, Scenario::BugMassDelay);
        for p in &mut projects {
            p.releases.iter_mut().for_each(|r| r.label_delayed = None);
        }
        let cfg = TrainConfig { loss_weights: LossWeights::RELEASE_ONLY, ..quick_config() };
        assert!(matches!(train_epochs(&projects, None, &cfg), Err(TrainError::NoMatchingLabels)));
    }

    #[test]
    fn divergence_is_reported() {
        let projects = synth_projects(3, 1, Scenario::BugMassDelay);
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            optimizer: OptimizerKind::Sgd,
            grad_clip_norm: f64::MAX,
            ..quick_config()
        };
        match train_epochs(&projects, None, &cfg) {
            Err(TrainError::Divergence { epoch, batch }) => assert_eq!((epoch, batch), (1, 1)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn metrics_csv_layout() {
        let rows = vec![MetricsRow {
            epoch: 1,
            split: "train".into(),
            head: "release".into(),
            loss: 0.5,
            auc: None,
            accuracy: Some(0.75),
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,split,head,loss,auc,accuracy\n1,train,release,0.5,,0.75\n");
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_weights = TrainConfig { loss_weights: LossWeights { issue: 0.0, release: 0.0, project: 0.0 }, ..quick_config() };
        assert!(bad_weights.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..quick_config() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..quick_config() }.validate().is_err());
    }
}
