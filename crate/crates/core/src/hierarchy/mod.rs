//! Everything above the issue chain: release windows, pooling, the
//! release-level LSTM, the project vector and the three prediction heads.
//!
//! Issue states `h_t` are pooled per release window into `r_j`; the sequence
//! `r_1..r_R` runs through a plain LSTM giving `g_1..g_R`, which is pooled
//! again into the project vector `s`. Issues resolved after the last release
//! form a trailing pending window that is pooled and fed to the release LSTM
//! like any other window but carries no release prediction.

mod heads;
mod pooling;

use thiserror::Error;

pub use heads::{HeadParams, ProjectHeadCache};
pub use pooling::{pool, pool_weights, PoolingKind, PoolingSpec};

use crate::data::ProjectHistory;
use crate::encoder::{encode_issues, EmbeddingTable, EncodeError, EncodedIssue};
use crate::model::{Model, ModelParams};
use crate::tensor::{sigmoid_scalar, Vector};
use crate::tlstm::{self, StepState};
use crate::train::loss::{head_logit_grads, loss, HeadTargets, LossBreakdown, LossWeights};

#[derive(Debug, Error, PartialEq)]
pub enum HierarchyError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("project {0} has no issues")]
    NoIssues(String),
    #[error("project {0}: nothing to train on (no labels)")]
    NothingToTrainOn(String),
}

/// Issues grouped under one release, or the trailing pending group.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseWindow {
    /// Position in the window sequence; equals the release position for real
    /// releases.
    pub release_index: usize,
    /// Issue positions, strictly increasing.
    pub members: Vec<usize>,
    /// Time pooling ages are measured from: release day, or the last issue
    /// day for the pending window.
    pub anchor_at: i64,
    pub is_pending: bool,
    /// Pooled issue state, filled in by [`forward_project`].
    pub r: Option<Vector>,
}

/// Window membership: an issue belongs to release `j` when
/// `released_at[j-1] < resolved_at <= released_at[j]`. Issues after the last
/// release form a pending window, present only if non-empty.
pub fn assign_windows(project: &ProjectHistory) -> Vec<ReleaseWindow> {
    let mut windows: Vec<ReleaseWindow> = project
        .releases
        .iter()
        .enumerate()
        .map(|(j, r)| ReleaseWindow {
            release_index: j,
            members: Vec::new(),
            anchor_at: r.released_at,
            is_pending: false,
            r: None,
        })
        .collect();
    let mut pending = Vec::new();
    let mut j = 0;
    for (t, issue) in project.issues.iter().enumerate() {
        while j < project.releases.len() && issue.resolved_at > project.releases[j].released_at {
            j += 1;
        }
        match windows.get_mut(j) {
            Some(w) => w.members.push(t),
            None => pending.push(t),
        }
    }
    if let Some(&last) = pending.last() {
        windows.push(ReleaseWindow {
            release_index: project.releases.len(),
            members: pending,
            anchor_at: project.issues[last].resolved_at,
            is_pending: true,
            r: None,
        });
    }
    windows
}

/// Everything above the issue level; absent for projects without releases.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperLevels {
    pub windows: Vec<ReleaseWindow>,
    /// Pooling weight of each member, per window.
    pub window_weights: Vec<Vec<f64>>,
    pub release_inputs: Vec<Vector>,
    pub release_states: Vec<StepState>,
    pub project_weights: Vec<f64>,
    pub s: Vector,
    pub project_head: ProjectHeadCache,
    /// One probability per real release (pending window excluded).
    pub release_probs: Vec<f64>,
    pub project_prob: f64,
}

/// A probability and its label, if any.
pub type Scored = (f64, Option<bool>);

/// Forward pass over one project with every intermediate kept for backward.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectForward {
    pub encoded: Vec<EncodedIssue>,
    pub issue_states: Vec<StepState>,
    pub issue_probs: Vec<f64>,
    pub upper: Option<UpperLevels>,
}

impl ProjectForward {
    pub fn release_probs(&self) -> &[f64] {
        self.upper.as_ref().map_or(&[], |u| &u.release_probs)
    }

    pub fn project_prob(&self) -> Option<f64> {
        self.upper.as_ref().map(|u| u.project_prob)
    }

    /// Head probabilities paired with the project's labels.
    pub fn targets(&self, project: &ProjectHistory) -> (Vec<Scored>, Vec<Scored>, Option<Scored>) {
        let issues = self
            .issue_probs
            .iter()
            .zip(&project.issues)
            .map(|(&p, i)| (p, i.label_delayed))
            .collect();
        let releases = self
            .release_probs()
            .iter()
            .zip(&project.releases)
            .map(|(&p, r)| (p, r.label_delayed))
            .collect();
        let proj = self.project_prob().map(|p| (p, project.label_project));
        (issues, releases, proj)
    }

    pub fn loss(&self, project: &ProjectHistory, weights: &LossWeights) -> Option<LossBreakdown> {
        let (issue, release, proj) = self.targets(project);
        loss(&HeadTargets { issue: &issue, release: &release, project: proj }, weights)
    }
}

pub fn forward_project(model: &Model, project: &ProjectHistory) -> Result<ProjectForward, HierarchyError> {
    forward_with(&model.params, model, project)
}

/// Forward pass with explicit parameters (used by gradient checking to probe
/// perturbed copies).
pub fn forward_with(
    params: &ModelParams,
    model: &Model,
    project: &ProjectHistory,
) -> Result<ProjectForward, HierarchyError> {
    if project.issues.is_empty() {
        return Err(HierarchyError::NoIssues(project.project_id.clone()));
    }
    let encoded = encode_issues(&project.issues, &model.vocab, &params.embedding)?;
    let inputs: Vec<_> = encoded.iter().map(|e| e.input.clone()).collect();
    let issue_states = tlstm::unroll(&params.issue_lstm, &inputs).expect("non-empty");
    let issue_probs = issue_states
        .iter()
        .map(|s| sigmoid_scalar(params.heads.issue_logit(&s.h)))
        .collect();

    let upper = if project.releases.is_empty() {
        None
    } else {
        Some(upper_levels(params, model, project, &issue_states))
    };
    Ok(ProjectForward { encoded, issue_states, issue_probs, upper })
}

fn upper_levels(params: &ModelParams, model: &Model, project: &ProjectHistory, issue_states: &[StepState]) -> UpperLevels {
    let d_h = params.issue_lstm.hidden_dim();
    let mut windows = assign_windows(project);
    let mut window_weights = Vec::with_capacity(windows.len());
    for w in &mut windows {
        let ages: Vec<f64> = w
            .members
            .iter()
            .map(|&t| (w.anchor_at - project.issues[t].resolved_at) as f64)
            .collect();
        let states: Vec<&[f64]> = w.members.iter().map(|&t| issue_states[t].h.as_slice()).collect();
        w.r = Some(pool(&states, &ages, &model.config.release_pooling).unwrap_or_else(|| Vector::zeros(d_h)));
        window_weights.push(if ages.is_empty() { Vec::new() } else { pool_weights(&ages, &model.config.release_pooling) });
    }
    let release_inputs: Vec<Vector> = windows.iter().map(|w| w.r.clone().expect("pooled")).collect();
    let release_states = tlstm::unroll(&params.release_lstm, &release_inputs).expect("at least one release");

    let last = project.last_event_at();
    let ages: Vec<f64> = windows.iter().map(|w| (last - w.anchor_at) as f64).collect();
    let g: Vec<&[f64]> = release_states.iter().map(|s| s.h.as_slice()).collect();
    let s = pool(&g, &ages, &model.config.project_pooling).expect("at least one release");
    let project_weights = pool_weights(&ages, &model.config.project_pooling);

    let release_probs = windows
        .iter()
        .zip(&release_states)
        .filter(|(w, _)| !w.is_pending)
        .map(|(_, st)| sigmoid_scalar(params.heads.release_logit(&st.h)))
        .collect();
    let project_head = params.heads.project_forward(&s);
    let project_prob = sigmoid_scalar(project_head.logit);

    UpperLevels {
        windows,
        window_weights,
        release_inputs,
        release_states,
        project_weights,
        s,
        project_head,
        release_probs,
        project_prob,
    }
}

/// Exact gradient of the project's weighted loss with respect to every
/// parameter tensor, together with the loss itself.
pub fn backward_project(
    model: &Model,
    project: &ProjectHistory,
    fwd: &ProjectForward,
    weights: &LossWeights,
) -> Result<(ModelParams, LossBreakdown), HierarchyError> {
    let breakdown = fwd
        .loss(project, weights)
        .ok_or_else(|| HierarchyError::NothingToTrainOn(project.project_id.clone()))?;
    let params = &model.params;
    let mut grads = params.zeros_like();
    let (issue_t, release_t, project_t) = fwd.targets(project);
    let d_h = params.issue_lstm.hidden_dim();
    let steps = fwd.issue_states.len();

    // issue head
    let mut dh: Vec<Vector> = vec![Vector::zeros(d_h); steps];
    for (t, dz) in head_logit_grads(&issue_t, weights.issue).into_iter().enumerate() {
        if dz != 0.0 {
            grads.heads.issue_w.add_scaled(dz, &fwd.issue_states[t].h);
            grads.heads.issue_b[0] += dz;
            dh[t].add_scaled(dz, &params.heads.issue_w);
        }
    }

    if let Some(up) = &fwd.upper {
        let d_g = params.release_lstm.hidden_dim();
        let mut dg: Vec<Vector> = vec![Vector::zeros(d_g); up.release_states.len()];

        // release head; real releases come first in window order
        for (j, dz) in head_logit_grads(&release_t, weights.release).into_iter().enumerate() {
            if dz != 0.0 {
                grads.heads.release_w.add_scaled(dz, &up.release_states[j].h);
                grads.heads.release_b[0] += dz;
                dg[j].add_scaled(dz, &params.heads.release_w);
            }
        }

        // project head and project pooling
        if let Some((p, Some(y))) = project_t {
            let dz = weights.project * crate::train::loss::bce_logit_grad(p, y);
            if dz != 0.0 {
                let ds = params.heads.project_backward(&up.s, &up.project_head, dz, &mut grads.heads);
                for (dgj, &w) in dg.iter_mut().zip(&up.project_weights) {
                    dgj.add_scaled(w, &ds);
                }
            }
        }

        // release LSTM, then release pooling back onto issue states
        let rel = tlstm::backward(&params.release_lstm, &up.release_inputs, &up.release_states, &dg);
        grads.release_lstm = rel.params;
        for ((window, wts), dr) in up.windows.iter().zip(&up.window_weights).zip(&rel.dx) {
            for (&t, &w) in window.members.iter().zip(wts) {
                dh[t].add_scaled(w, dr);
            }
        }
    }

    let inputs: Vec<_> = fwd.encoded.iter().map(|e| e.input.clone()).collect();
    let issue = tlstm::backward(&params.issue_lstm, &inputs, &fwd.issue_states, &dh);
    grads.issue_lstm = issue.params;

    let d_e = params.embedding.dim();
    for ((enc, dx), dp) in fwd.encoded.iter().zip(&issue.dx).zip(&issue.dp) {
        EmbeddingTable::accumulate_grad(&mut grads.embedding.weights, &enc.description_ids, &dx[..d_e]);
        EmbeddingTable::accumulate_grad(&mut grads.embedding.weights, &enc.patch_ids, &dp[..d_e]);
    }

    Ok((grads, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{IssueEvent, IssueType, Priority, ReleaseEvent, ResolutionKind, Vocab};
    use crate::model::ModelConfig;
    use crate::tlstm::TimeMode;

    fn issue(id: &str, at: i64) -> IssueEvent {
        IssueEvent {
            issue_id: id.into(),
            resolved_at: at,
            description_tokens: vec!["crash".into(), "ui".into()],
            resolution_kind: ResolutionKind::FixedWithPatch,
            patch_tokens: vec!["if".into()],
            issue_type: IssueType::Bug,
            priority: Priority::Major,
            label_delayed: Some(at % 2 == 0),
        }
    }

    fn release(id: &str, at: i64) -> ReleaseEvent {
        ReleaseEvent { release_id: id.into(), released_at: at, label_delayed: Some(at > 12) }
    }

    fn project(issue_days: &[i64], release_days: &[i64]) -> ProjectHistory {
        ProjectHistory {
            project_id: "p".into(),
            start_at: 0,
            issues: issue_days.iter().enumerate().map(|(k, &d)| issue(&format!("i{k}"), d)).collect(),
            releases: release_days.iter().enumerate().map(|(k, &d)| release(&format!("r{k}"), d)).collect(),
            label_project: Some(true),
        }
    }

    fn model(config: ModelConfig, seed: u64) -> Model {
        let vocab = Vocab::from_tokens(vec!["crash".into(), "ui".into(), "if".into()]);
        Model::new(config, vocab, seed)
    }

    fn tiny() -> ModelConfig {
        ModelConfig { embed_dim: 3, hidden_dim: 4, release_hidden_dim: Some(3), mlp_hidden_dim: 4, ..Default::default() }
    }

    #[test]
    fn windows_follow_half_open_rule() {
        let w = assign_windows(&project(&[5, 10, 15], &[10, 20]));
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].members, vec![0, 1]);
        assert_eq!(w[1].members, vec![2]);
        assert!(w.iter().all(|w| !w.is_pending));
    }

    #[test]
    fn trailing_issues_form_pending_window() {
        let w = assign_windows(&project(&[5, 25, 26], &[10, 20]));
        assert_eq!(w.len(), 3);
        assert!(w[1].members.is_empty());
        assert!(w[2].is_pending);
        assert_eq!(w[2].members, vec![1, 2]);
        assert_eq!(w[2].anchor_at, 26);
        let none_after = assign_windows(&project(&[5, 20], &[10, 20]));
        assert_eq!(none_after.len(), 2);
        assert!(none_after.iter().all(|w| !w.is_pending));
    }

    #[test]
    fn single_release_mean_pools_all_issues() {
        let m = model(tiny(), 3);
        let p = project(&[1, 2, 4, 8], &[9]);
        let fwd = forward_project(&m, &p).unwrap();
        let up = fwd.upper.as_ref().unwrap();
        let expected = crate::tensor::mean_of(fwd.issue_states.iter().map(|s| s.h.as_slice())).unwrap();
        assert_eq!(up.release_inputs[0], expected);
    }

    #[test]
    fn empty_window_pools_to_zero() {
        let m = model(tiny(), 3);
        let fwd = forward_project(&m, &project(&[1, 2], &[5, 9])).unwrap();
        assert_eq!(fwd.upper.unwrap().release_inputs[1], Vector::zeros(4));
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let m = Model::zeros(tiny(), Vocab::from_tokens(vec![]));
        let fwd = forward_project(&m, &project(&[1, 3, 7, 12], &[4, 11])).unwrap();
        assert!(fwd.issue_probs.iter().all(|&p| p == 0.5));
        assert!(fwd.release_probs().iter().all(|&p| p == 0.5));
        assert_eq!(fwd.project_prob(), Some(0.5));
    }

    #[test]
    fn no_releases_means_issue_outputs_only() {
        let m = model(tiny(), 1);
        let fwd = forward_project(&m, &project(&[1, 3], &[])).unwrap();
        assert_eq!(fwd.issue_probs.len(), 2);
        assert!(fwd.upper.is_none());
        assert!(fwd.release_probs().is_empty());
    }

    #[test]
    fn release_outputs_are_causal() {
        let m = model(ModelConfig { time_mode: TimeMode::Monotonic, ..tiny() }, 5);
        let full = project(&[1, 3, 7, 12, 14, 19], &[4, 13, 20]);
        let fwd = forward_project(&m, &full).unwrap();
        let mut prefix = full.clone();
        prefix.issues.truncate(4);
        prefix.releases.truncate(2);
        let fwd_prefix = forward_project(&m, &prefix).unwrap();
        let a = fwd.upper.unwrap();
        let b = fwd_prefix.upper.unwrap();
        for j in 0..2 {
            assert_eq!(a.release_inputs[j], b.release_inputs[j]);
            assert_eq!(a.release_states[j].h, b.release_states[j].h);
        }
    }

    #[test]
    fn mean_pooling_ignores_lambda() {
        let mut cfg = tiny();
        let p = project(&[1, 3, 7, 12, 14], &[4, 13]);
        cfg.release_pooling.lambda_per_day = 0.01;
        let a = forward_project(&model(cfg.clone(), 2), &p).unwrap();
        cfg.release_pooling.lambda_per_day = 7.5;
        cfg.project_pooling.lambda_per_day = 3.0;
        let b = forward_project(&model(cfg, 2), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probabilities_in_open_unit_interval() {
        let m = model(ModelConfig { time_mode: TimeMode::Parametric, ..tiny() }, 8);
        let fwd = forward_project(&m, &project(&[1, 3, 7, 12, 40], &[4, 13])).unwrap();
        let project = fwd.project_prob();
        let all = fwd.issue_probs.iter().chain(fwd.release_probs()).chain(project.iter());
        for &p in all {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn issue_only_loss_leaves_upper_levels_untouched() {
        let m = model(tiny(), 4);
        let p = project(&[1, 3, 7, 12], &[4, 13]);
        let fwd = forward_project(&m, &p).unwrap();
        let (g, _) = backward_project(&m, &p, &fwd, &LossWeights::ISSUE_ONLY).unwrap();
        for t in g.tensors() {
            if t.name.starts_with("release_") || t.name.starts_with("project_head") {
                assert!(t.values.iter().all(|&v| v == 0.0), "{}", t.name);
            }
        }
        assert!(g.tensors().iter().any(|t| t.name == "issue_lstm.W_f" && t.values.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn unlabeled_project_has_nothing_to_train_on() {
        let m = model(tiny(), 4);
        let mut p = project(&[1, 3], &[4]);
        p.issues.iter_mut().for_each(|i| i.label_delayed = None);
        p.releases.iter_mut().for_each(|r| r.label_delayed = None);
        p.label_project = None;
        let fwd = forward_project(&m, &p).unwrap();
        assert!(matches!(
            backward_project(&m, &p, &fwd, &LossWeights::default()),
            Err(HierarchyError::NothingToTrainOn(_))
        ));
    }

    #[test]
    fn unused_tokens_get_zero_gradient() {
        let vocab = Vocab::from_tokens(vec!["crash".into(), "ui".into(), "if".into(), "unused".into()]);
        let m = Model::new(tiny(), vocab, 6);
        let p = project(&[1, 3, 7], &[4, 9]);
        let fwd = forward_project(&m, &p).unwrap();
        let (g, _) = backward_project(&m, &p, &fwd, &LossWeights::default()).unwrap();
        assert!(g.embedding.weights.row(3).iter().all(|&v| v == 0.0));
        assert!(g.embedding.weights.row(4).iter().all(|&v| v == 0.0));
        assert!(g.embedding.weights.row(0).iter().any(|&v| v != 0.0));
    }
}
