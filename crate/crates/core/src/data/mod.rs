//! Project histories: domain types, JSONL ingestion, vocabularies, synthetic
//! corpora and train/validation splitting.

mod jsonl;
mod synth;
mod vocab;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jsonl::{load_projects, parse_projects, project_to_json_line, write_projects, LoadReport};
pub use synth::{synth_projects, synth_projects_with, Scenario, SynthOptions};
pub use vocab::Vocab;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("no projects found in input")]
    Empty,
    #[error("need at least 2 projects to split, got {0}")]
    TooFewProjects(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionKind {
    FixedWithPatch,
    Invalid,
    Duplicate,
    Wontfix,
    DocsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueType {
    Bug,
    Feature,
    Debt,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    Trivial,
    Minor,
    Major,
    Critical,
}

/// Enums with a fixed position in a one-hot encoding.
pub trait Categorical: Copy + Sized + 'static {
    const ALL: &'static [Self];
    const NAMES: &'static [&'static str];

    fn index(self) -> usize;

    fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    fn parse(s: &str) -> Option<Self> {
        Self::NAMES.iter().position(|n| *n == s).map(|i| Self::ALL[i])
    }
}

impl Categorical for ResolutionKind {
    const ALL: &'static [Self] = &[
        Self::FixedWithPatch,
        Self::Invalid,
        Self::Duplicate,
        Self::Wontfix,
        Self::DocsOnly,
    ];
    const NAMES: &'static [&'static str] =
        &["fixed_with_patch", "invalid", "duplicate", "wontfix", "docs_only"];

    fn index(self) -> usize {
        self as usize
    }
}

impl Categorical for IssueType {
    const ALL: &'static [Self] = &[Self::Bug, Self::Feature, Self::Debt, Self::Other];
    const NAMES: &'static [&'static str] = &["bug", "feature", "debt", "other"];

    fn index(self) -> usize {
        self as usize
    }
}

impl Categorical for Priority {
    const ALL: &'static [Self] = &[Self::Trivial, Self::Minor, Self::Major, Self::Critical];
    const NAMES: &'static [&'static str] = &["trivial", "minor", "major", "critical"];

    fn index(self) -> usize {
        self as usize
    }
}

/// One resolved issue. Times are integer days since the Unix epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct IssueEvent {
    pub issue_id: String,
    pub resolved_at: i64,
    pub description_tokens: Vec<String>,
    pub resolution_kind: ResolutionKind,
    pub patch_tokens: Vec<String>,
    pub issue_type: IssueType,
    pub priority: Priority,
    pub label_delayed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseEvent {
    pub release_id: String,
    pub released_at: i64,
    pub label_delayed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectHistory {
    pub project_id: String,
    pub start_at: i64,
    pub issues: Vec<IssueEvent>,
    pub releases: Vec<ReleaseEvent>,
    pub label_project: Option<bool>,
}

impl ProjectHistory {
    /// Checks the ordering and non-emptiness invariants. Returns the first
    /// violation as a message.
    pub fn validate(&self) -> Result<(), String> {
        if self.issues.is_empty() {
            return Err("project has no issues".into());
        }
        if self.start_at < 0 {
            return Err("start_at must be >= 0".into());
        }
        for w in self.issues.windows(2) {
            if w[1].resolved_at < w[0].resolved_at {
                return Err(format!("issue {} resolved before its predecessor", w[1].issue_id));
            }
        }
        for w in self.releases.windows(2) {
            if w[1].released_at < w[0].released_at {
                return Err(format!("release {} precedes its predecessor", w[1].release_id));
            }
        }
        for issue in &self.issues {
            if issue.resolved_at < self.start_at {
                return Err(format!("issue {} resolved before project start", issue.issue_id));
            }
            if issue.description_tokens.is_empty() {
                return Err(format!("issue {} has no description tokens", issue.issue_id));
            }
            if issue.resolution_kind != ResolutionKind::FixedWithPatch && !issue.patch_tokens.is_empty() {
                return Err(format!(
                    "issue {} carries a patch but is resolved as {}",
                    issue.issue_id,
                    issue.resolution_kind.name()
                ));
            }
        }
        if let Some(r) = self.releases.iter().find(|r| r.released_at < self.start_at) {
            return Err(format!("release {} before project start", r.release_id));
        }
        Ok(())
    }

    /// Time of the newest issue or release.
    pub fn last_event_at(&self) -> i64 {
        let last_issue = self.issues.last().map_or(self.start_at, |i| i.resolved_at);
        let last_release = self.releases.last().map_or(self.start_at, |r| r.released_at);
        last_issue.max(last_release)
    }

    pub fn has_labels(&self) -> bool {
        self.label_project.is_some()
            || self.issues.iter().any(|i| i.label_delayed.is_some())
            || self.releases.iter().any(|r| r.label_delayed.is_some())
    }
}

/// Vocabulary over the pooled description and patch tokens of `projects`.
pub fn build_vocab(projects: &[ProjectHistory], min_count: usize) -> Vocab {
    Vocab::build(projects, min_count)
}

/// Lowercase and split on every maximal run of non-alphanumeric characters.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(|piece| piece.to_lowercase())
        .collect()
}

/// Partition whole projects into (train, validation) after a seeded shuffle.
///
/// The training side gets `round(train_frac * n)` projects, clamped so both
/// sides are non-empty.
pub fn split(
    projects: &[ProjectHistory],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<ProjectHistory>, Vec<ProjectHistory>), DataError> {
    let n = projects.len();
    if n < 2 {
        return Err(DataError::TooFewProjects(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
    let train = order[..n_train].iter().map(|&i| projects[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| projects[i].clone()).collect();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_rules() {
        assert_eq!(
            tokenize("NullPointerException in Foo.bar()"),
            vec!["nullpointerexception", "in", "foo", "bar"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a--b"), vec!["a", "b"]);
        assert_eq!(tokenize("  --  "), Vec::<String>::new());
    }

    #[test]
    fn categorical_round_trip() {
        for &k in ResolutionKind::ALL {
            assert_eq!(ResolutionKind::parse(k.name()), Some(k));
        }
        assert_eq!(Priority::parse("blocker"), None);
        assert_eq!(IssueType::Debt.index(), 2);
    }

    #[test]
    fn split_partitions_deterministically() {
        let projects = synth_projects(10, 3, Scenario::BugMassDelay);
        let (train, val) = split(&projects, 0.8, 11).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        let (train2, val2) = split(&projects, 0.8, 11).unwrap();
        assert_eq!(train, train2);
        assert_eq!(val, val2);

        let mut ids: Vec<&str> = train.iter().chain(&val).map(|p| p.project_id.as_str()).collect();
        ids.sort();
        let mut expected: Vec<&str> = projects.iter().map(|p| p.project_id.as_str()).collect();
        expected.sort();
        assert_eq!(ids, expected);
    }

    #[test]
    fn split_needs_two_projects() {
        let one = synth_projects(1, 3, Scenario::BugMassDelay);
        assert!(matches!(split(&one, 0.5, 0), Err(DataError::TooFewProjects(1))));
    }
}
