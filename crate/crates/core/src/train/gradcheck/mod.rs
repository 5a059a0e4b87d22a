//! Central finite-difference check of the analytic gradients.
//!
//! The numeric side evaluates the loss in double-double precision through an
//! independent reference forward pass, so round-off stays far below the
//! `1e-5` relative tolerance even for gradients near `1e-8`.

mod dd;
pub mod reference;

use std::fmt;

use crate::data::{build_vocab, synth_projects_with, ProjectHistory, Scenario, SynthOptions};
use crate::hierarchy::{HierarchyError, PoolingSpec};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::tlstm::TimeMode;

use super::batch_gradients;
use super::loss::LossWeights;
use dd::Dd;
use reference::Lifted;

pub const FD_EPSILON: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// Longest issue sequence in the fixture.
pub const MAX_ISSUES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub tolerance: f64,
    pub time_mode: TimeMode,
    pub time_input_gate: bool,
}

impl GradCheckOptions {
    pub fn new(seed: u64, time_mode: TimeMode) -> Self {
        Self { seed, tolerance: DEFAULT_TOLERANCE, time_mode, time_input_gate: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TensorStatus {
    Pass,
    Fail,
    /// Held fixed in this configuration, so never compared.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    pub status: TensorStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.status != TensorStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| t.status == TensorStatus::Fail)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .filter(|t| t.status != TensorStatus::Skipped)
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            match t.status {
                TensorStatus::Skipped => writeln!(f, "{:<22} {:>5}  skipped (untrained)", t.name, t.len)?,
                s => writeln!(
                    f,
                    "{:<22} {:>5}  max rel err {:.3e}  {}",
                    t.name,
                    t.len,
                    t.max_rel_error,
                    if s == TensorStatus::Pass { "pass" } else { "FAIL" }
                )?,
            }
        }
        Ok(())
    }
}

/// `|a − n| / max(1e−8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compare `analytic` against central differences of the summed project loss.
pub fn compare_gradients(
    model: &Model,
    projects: &[ProjectHistory],
    weights: &LossWeights,
    analytic: &ModelParams,
    tolerance: f64,
) -> GradCheckReport {
    let meta: Vec<(String, usize, bool)> =
        model.params.tensors().iter().map(|t| (t.name.clone(), t.values.len(), t.trainable)).collect();
    let analytic_values: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.values.to_vec()).collect();
    let mut tensors = Vec::with_capacity(meta.len());
    let eps = Dd::from(FD_EPSILON);
    for (k, (name, len, trainable)) in meta.into_iter().enumerate() {
        if !trainable {
            tensors.push(TensorCheck { name, len, max_rel_error: 0.0, status: TensorStatus::Skipped });
            continue;
        }
        let mut worst = 0.0f64;
        for (j, &analytic) in analytic_values[k].iter().enumerate() {
            let plus = reference::total_loss(&Lifted::new(model, Some((k, j, eps))), model, projects, weights);
            let minus = reference::total_loss(&Lifted::new(model, Some((k, j, -eps))), model, projects, weights);
            let numeric = ((plus - minus) / (Dd::from(2.0) * eps)).to_f64();
            worst = worst.max(relative_error(analytic, numeric));
        }
        let status = if worst <= tolerance { TensorStatus::Pass } else { TensorStatus::Fail };
        tensors.push(TensorCheck { name, len, max_rel_error: worst, status });
    }
    GradCheckReport { tolerance, tensors }
}

pub fn fixture_config(time_mode: TimeMode, time_input_gate: bool) -> ModelConfig {
    ModelConfig {
        embed_dim: 3,
        hidden_dim: 4,
        release_hidden_dim: Some(3),
        mlp_hidden_dim: 4,
        time_mode,
        time_input_gate,
        release_pooling: PoolingSpec::recency(0.05),
        project_pooling: PoolingSpec::recency(0.05),
        min_count: 1,
    }
}

/// Two short labeled projects: at most three releases with one or two issues
/// each, trailing issues cut so no project exceeds [`MAX_ISSUES`].
pub fn fixture_projects(seed: u64) -> Vec<ProjectHistory> {
    let opts = SynthOptions {
        releases: (1, 3),
        issues_per_window: (1, 2),
        pending_prob: 0.5,
        ..SynthOptions::new(Scenario::BugMassDelay)
    };
    let mut projects = synth_projects_with(2, seed, &opts);
    for p in &mut projects {
        p.issues.truncate(MAX_ISSUES);
    }
    projects
}

/// Build the tiny fixture model for `options` and check every tensor.
pub fn grad_check(options: &GradCheckOptions) -> Result<GradCheckReport, HierarchyError> {
    let projects = fixture_projects(options.seed);
    let config = fixture_config(options.time_mode, options.time_input_gate);
    let model = Model::new(config, build_vocab(&projects, 1), options.seed);
    let weights = LossWeights::default();
    let refs: Vec<&ProjectHistory> = projects.iter().collect();
    let (analytic, _, _) = batch_gradients(&model, &refs, &weights)?;
    Ok(compare_gradients(&model, &projects, &weights, &analytic, options.tolerance))
}
