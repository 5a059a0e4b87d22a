//! Weighted binary cross-entropy over the three prediction heads.

use serde::{Deserialize, Serialize};

pub const PROB_CLAMP: f64 = 1e-12;

/// Relative weight of each head in the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub issue: f64,
    pub release: f64,
    pub project: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { issue: 1.0, release: 1.0, project: 1.0 }
    }
}

impl LossWeights {
    pub const ISSUE_ONLY: Self = Self { issue: 1.0, release: 0.0, project: 0.0 };
    pub const RELEASE_ONLY: Self = Self { issue: 0.0, release: 1.0, project: 0.0 };
    pub const PROJECT_ONLY: Self = Self { issue: 0.0, release: 0.0, project: 1.0 };

    pub fn is_valid(&self) -> bool {
        let all = [self.issue, self.release, self.project];
        all.iter().all(|w| w.is_finite() && *w >= 0.0) && all.iter().any(|w| *w > 0.0)
    }
}

/// `−[y ln p + (1−y) ln(1−p)]` with `p` clamped to `[1e-12, 1 − 1e-12]`.
pub fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Derivative of [`bce`]`(σ(z), y)` with respect to the logit `z`; zero where
/// the clamp is active.
pub fn bce_logit_grad(p: f64, y: bool) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    p - f64::from(u8::from(y))
}

/// Head outputs paired with optional labels.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeadTargets<'a> {
    pub issue: &'a [(f64, Option<bool>)],
    pub release: &'a [(f64, Option<bool>)],
    pub project: Option<(f64, Option<bool>)>,
}

/// Loss split by head, with the number of labels each term averaged over.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub issue: f64,
    pub release: f64,
    pub project: f64,
    pub issue_count: usize,
    pub release_count: usize,
    pub project_count: usize,
}

impl LossBreakdown {
    pub fn label_count(&self) -> usize {
        self.issue_count + self.release_count + self.project_count
    }
}

fn mean_bce(pairs: &[(f64, Option<bool>)]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for &(p, y) in pairs {
        if let Some(y) = y {
            sum += bce(p, y);
            n += 1;
        }
    }
    if n == 0 {
        (0.0, 0)
    } else {
        (sum / n as f64, n)
    }
}

/// Per-head mean BCE and the weighted total. Returns `None` when no head has
/// a label.
pub fn loss(targets: &HeadTargets<'_>, weights: &LossWeights) -> Option<LossBreakdown> {
    let (issue, issue_count) = mean_bce(targets.issue);
    let (release, release_count) = mean_bce(targets.release);
    let (project, project_count) = match targets.project {
        Some((p, Some(y))) => (bce(p, y), 1),
        _ => (0.0, 0),
    };
    if issue_count + release_count + project_count == 0 {
        return None;
    }
    let total = weights.issue * issue + weights.release * release + weights.project * project;
    Some(LossBreakdown { total, issue, release, project, issue_count, release_count, project_count })
}

/// Gradient of the weighted mean BCE with respect to each logit of one head.
pub fn head_logit_grads(pairs: &[(f64, Option<bool>)], weight: f64) -> Vec<f64> {
    let n = pairs.iter().filter(|(_, y)| y.is_some()).count();
    pairs
        .iter()
        .map(|&(p, y)| match y {
            Some(y) if weight != 0.0 => weight * bce_logit_grad(p, y) / n as f64,
            _ => 0.0,
        })
        .collect()
}
