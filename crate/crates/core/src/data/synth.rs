//! Synthetic project histories with a planted release-delay signal.
//!
//! Every release window draws a latent "bug load" ℓ from a U-shaped
//! Beta(0.3, 0.3). The load sets both the window size (5 + Binomial(25, ℓ),
//! so 5..=30 issues) and the chance that each issue is a major or critical
//! bug. The release is delayed with probability σ(1.5·z − 1) where z is the
//! realized count of major/critical bugs divided by 10. Descriptions come
//! from per-type word pools so the text channel carries the same signal as
//! the attribute one-hots.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Exp};

use super::{IssueEvent, IssueType, Priority, ProjectHistory, ReleaseEvent, ResolutionKind};
use crate::tensor::sigmoid_scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Release delay driven by the mass of severe bugs in the window.
    BugMassDelay,
    /// Same histories, every label an independent fair coin.
    RandomLabels,
}

impl Scenario {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "bug_mass_delay" => Some(Self::BugMassDelay),
            "random_labels" => Some(Self::RandomLabels),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BugMassDelay => "bug_mass_delay",
            Self::RandomLabels => "random_labels",
        }
    }
}

/// Generator knobs. `Default` gives the standard corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub scenario: Scenario,
    /// Mean of the exponential inter-arrival gap between issues, in days.
    pub mean_gap_days: f64,
    pub releases: (usize, usize),
    /// Inclusive bounds on issues per release window.
    pub issues_per_window: (usize, usize),
    /// Probability that trailing issues follow the last release.
    pub pending_prob: f64,
}

impl SynthOptions {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            mean_gap_days: 3.0,
            releases: (3, 8),
            issues_per_window: (5, 30),
            pending_prob: 0.5,
        }
    }
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self::new(Scenario::BugMassDelay)
    }
}

const BUG_WORDS: &[&str] = &[
    "crash", "exception", "null", "pointer", "error", "fails", "broken", "regression", "stacktrace",
    "segfault", "leak", "timeout", "corrupt", "panic", "deadlock", "wrong", "overflow", "hang",
];
const FEATURE_WORDS: &[&str] = &[
    "add", "support", "new", "option", "feature", "allow", "enable", "improve", "request", "ui",
    "export", "plugin", "config", "dashboard", "api", "integration", "custom", "filter",
];
const DEBT_WORDS: &[&str] = &[
    "refactor", "cleanup", "deprecated", "rename", "simplify", "legacy", "duplicate", "code",
    "migrate", "upgrade", "dependency", "restructure",
];
const COMMON_WORDS: &[&str] = &[
    "the", "when", "in", "on", "with", "user", "page", "module", "server", "client", "data", "file",
    "test", "build", "version", "update", "docs", "issue",
];
const CODE_WORDS: &[&str] = &[
    "if", "return", "fn", "let", "self", "none", "some", "match", "unwrap", "check", "len", "guard",
    "lock", "free", "init", "assert", "loop", "break",
];

pub fn synth_projects(n_projects: usize, seed: u64, scenario: Scenario) -> Vec<ProjectHistory> {
    synth_projects_with(n_projects, seed, &SynthOptions::new(scenario))
}

pub fn synth_projects_with(n_projects: usize, seed: u64, opts: &SynthOptions) -> Vec<ProjectHistory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_projects).map(|i| synth_project(&mut rng, i, opts)).collect()
}

fn pick<'a>(rng: &mut impl Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

fn coin(rng: &mut impl Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn gap(rng: &mut impl Rng, exp: &Exp<f64>) -> i64 {
    exp.sample(rng).round() as i64
}

fn synth_project(rng: &mut ChaCha8Rng, index: usize, opts: &SynthOptions) -> ProjectHistory {
    let project_id = format!("proj-{index:04}");
    let start_at = 18_000 + rng.random_range(0..365);
    let exp = Exp::new(1.0 / opts.mean_gap_days.max(1e-9)).expect("positive gap rate");
    let load_dist = Beta::new(0.3, 0.3).expect("valid beta");
    let random = opts.scenario == Scenario::RandomLabels;

    let n_releases = rng.random_range(opts.releases.0..=opts.releases.1);
    let pending = coin(rng, opts.pending_prob);
    let mut issues = Vec::new();
    let mut releases = Vec::with_capacity(n_releases);
    let mut now = start_at;

    let windows = n_releases + usize::from(pending);
    for w in 0..windows {
        let is_release = w < n_releases;
        let (lo, hi) = opts.issues_per_window;
        let load: f64 = load_dist.sample(rng);
        let n_issues = if is_release {
            lo + Binomial::new((hi - lo) as u64, load).expect("valid binomial").sample(rng) as usize
        } else {
            rng.random_range(1..=lo.clamp(1, 5))
        };
        let mut severe_bugs = 0usize;
        for k in 0..n_issues {
            let step = gap(rng, &exp);
            // the first issue of a window must land strictly after the previous release
            now += if k == 0 && w > 0 { step.max(1) } else { step };
            let issue = synth_issue(rng, format!("{project_id}-I{:03}", issues.len()), now, load, random);
            if issue.issue_type == IssueType::Bug && issue.priority >= Priority::Major {
                severe_bugs += 1;
            }
            issues.push(issue);
        }
        if is_release {
            now += 1 + gap(rng, &exp);
            let z = severe_bugs as f64 / 10.0;
            let delayed = if random { coin(rng, 0.5) } else { coin(rng, sigmoid_scalar(1.5 * z - 1.0)) };
            releases.push(ReleaseEvent {
                release_id: format!("{project_id}-R{w}"),
                released_at: now,
                label_delayed: Some(delayed),
            });
        }
    }

    let delayed = releases.iter().filter(|r| r.label_delayed == Some(true)).count();
    let label_project = if random { coin(rng, 0.5) } else { 2 * delayed > releases.len() };

    ProjectHistory { project_id, start_at, issues, releases, label_project: Some(label_project) }
}

fn synth_issue(rng: &mut ChaCha8Rng, issue_id: String, resolved_at: i64, load: f64, random: bool) -> IssueEvent {
    let (issue_type, priority) = if coin(rng, load) {
        let p = if coin(rng, 0.5) { Priority::Major } else { Priority::Critical };
        (IssueType::Bug, p)
    } else {
        let u: f64 = rng.random();
        let t = match u {
            u if u < 0.15 => IssueType::Bug,
            u if u < 0.65 => IssueType::Feature,
            u if u < 0.85 => IssueType::Debt,
            _ => IssueType::Other,
        };
        let v: f64 = rng.random();
        let p = match v {
            v if v < 0.3 => Priority::Trivial,
            v if v < 0.7 => Priority::Minor,
            v if v < 0.9 => Priority::Major,
            _ => Priority::Critical,
        };
        (t, p)
    };

    let topic = match issue_type {
        IssueType::Bug => BUG_WORDS,
        IssueType::Feature => FEATURE_WORDS,
        IssueType::Debt => DEBT_WORDS,
        IssueType::Other => COMMON_WORDS,
    };
    let n_words = rng.random_range(4..=10);
    let description_tokens = (0..n_words)
        .map(|_| {
            let pool = if coin(rng, 0.7) { topic } else { COMMON_WORDS };
            pick(rng, pool).to_owned()
        })
        .collect();

    // (fixed_with_patch, invalid, duplicate, wontfix, docs_only) cumulative weights per type
    let cumulative = match issue_type {
        IssueType::Bug => [0.7, 0.8, 0.9, 1.0, 1.0],
        IssueType::Feature => [0.6, 0.65, 0.75, 0.9, 1.0],
        IssueType::Debt => [0.8, 0.8, 0.85, 0.95, 1.0],
        IssueType::Other => [0.3, 0.5, 0.6, 0.7, 1.0],
    };
    let u: f64 = rng.random();
    let kinds = [
        ResolutionKind::FixedWithPatch,
        ResolutionKind::Invalid,
        ResolutionKind::Duplicate,
        ResolutionKind::Wontfix,
        ResolutionKind::DocsOnly,
    ];
    let resolution_kind = kinds[cumulative.iter().position(|&c| u < c).unwrap_or(4)];
    let patch_tokens = if resolution_kind == ResolutionKind::FixedWithPatch {
        let n = rng.random_range(3..=8);
        (0..n).map(|_| pick(rng, CODE_WORDS).to_owned()).collect()
    } else {
        Vec::new()
    };

    let label_delayed = if random {
        coin(rng, 0.5)
    } else {
        let severe = f64::from(u8::from(priority >= Priority::Major));
        let bug = f64::from(u8::from(issue_type == IssueType::Bug));
        coin(rng, sigmoid_scalar(-1.0 + 1.2 * bug + 0.8 * severe))
    };

    IssueEvent {
        issue_id,
        resolved_at,
        description_tokens,
        resolution_kind,
        patch_tokens,
        issue_type,
        priority,
        label_delayed: Some(label_delayed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::project_to_json_line;
    use crate::hierarchy::assign_windows;

    fn serialize(ps: &[ProjectHistory]) -> String {
        ps.iter().map(project_to_json_line).collect::<Vec<_>>().join("\n")
    }

    #[test]
    fn deterministic_given_arguments() {
        let a = synth_projects(1, 7, Scenario::BugMassDelay);
        let b = synth_projects(1, 7, Scenario::BugMassDelay);
        assert_eq!(serialize(&a), serialize(&b));
        assert_ne!(serialize(&a), serialize(&synth_projects(1, 8, Scenario::BugMassDelay)));
    }

    #[test]
    fn generated_projects_are_valid() {
        for p in synth_projects(30, 1, Scenario::BugMassDelay) {
            p.validate().unwrap();
            assert!((3..=8).contains(&p.releases.len()));
            for w in assign_windows(&p).iter().filter(|w| !w.is_pending) {
                let n = w.members.len();
                assert!((5..=30).contains(&n), "release {} has {n} issues", w.release_index);
            }
        }
    }

    fn releases_with_z(scenario: Scenario) -> Vec<(f64, bool)> {
        let mut out = Vec::new();
        for p in synth_projects(500, 99, scenario) {
            let windows = assign_windows(&p);
            for (release, window) in p.releases.iter().zip(&windows) {
                let severe = window
                    .members
                    .iter()
                    .filter(|&&t| p.issues[t].issue_type == IssueType::Bug && p.issues[t].priority >= Priority::Major)
                    .count();
                out.push((severe as f64 / 10.0, release.label_delayed.unwrap()));
            }
        }
        out
    }

    #[test]
    fn random_labels_are_fair() {
        let rel = releases_with_z(Scenario::RandomLabels);
        assert!(rel.len() >= 2000, "only {} releases", rel.len());
        let mean = rel.iter().filter(|r| r.1).count() as f64 / rel.len() as f64;
        assert!((mean - 0.5).abs() <= 0.05, "label mean {mean}");
    }

    #[test]
    fn bug_mass_drives_delay() {
        let rel = releases_with_z(Scenario::BugMassDelay);
        assert!(rel.len() >= 2000);
        let rate = |pred: &dyn Fn(f64) -> bool| {
            let sel: Vec<_> = rel.iter().filter(|r| pred(r.0)).collect();
            sel.iter().filter(|r| r.1).count() as f64 / sel.len() as f64
        };
        let high = rate(&|z| z > 1.0);
        let low = rate(&|z| z < 0.3);
        assert!(high - low >= 0.3, "P(high)={high} P(low)={low}");
    }

    #[test]
    fn gap_mean_is_configurable() {
        let mut opts = SynthOptions::new(Scenario::BugMassDelay);
        opts.mean_gap_days = 30.0;
        let wide = synth_projects_with(40, 5, &opts);
        let narrow = synth_projects_with(40, 5, &SynthOptions::default());
        let mean_gap = |ps: &[ProjectHistory]| {
            let gaps: Vec<f64> = ps
                .iter()
                .flat_map(|p| p.issues.windows(2).map(|w| (w[1].resolved_at - w[0].resolved_at) as f64))
                .collect();
            gaps.iter().sum::<f64>() / gaps.len() as f64
        };
        assert!(mean_gap(&wide) > 5.0 * mean_gap(&narrow));
    }
}
