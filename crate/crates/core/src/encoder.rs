//! Issue → step input: diagnosis vector, resolution vector and elapsed days.
//!
//! Text is encoded as the mean of trainable token embeddings. The diagnosis
//! vector appends one-hots for issue type and priority, the resolution vector
//! appends a one-hot for the resolution kind. Descriptions and patches share
//! one embedding table.

use thiserror::Error;

use crate::data::{Categorical, IssueEvent, IssueType, Priority, ResolutionKind, Vocab};
use crate::tensor::{Matrix, Vector};

/// Width of the attribute one-hots appended to the diagnosis text vector.
pub const ISSUE_ATTR_DIM: usize = 4 + 4;
/// Width of the resolution-kind one-hot appended to the patch text vector.
pub const RESOLUTION_ATTR_DIM: usize = 5;
/// Length of [`time_features`].
pub const TIME_FEATURE_DIM: usize = 2;

const TIME_CAP_DAYS: f64 = 365.0;
const TIME_SCALE_DAYS: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("issue {issue_id}: resolved {delta} days before the previous issue")]
    NegativeDelta { issue_id: String, delta: i64 },
}

pub fn diagnosis_dim(embed_dim: usize) -> usize {
    embed_dim + ISSUE_ATTR_DIM
}

pub fn resolution_dim(embed_dim: usize) -> usize {
    embed_dim + RESOLUTION_ATTR_DIM
}

/// Anything that can turn a token list into a fixed-width vector.
pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, tokens: &[String], vocab: &Vocab) -> Vector;
}

/// Trainable `vocab_size × dim` token embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub weights: Matrix,
}

impl EmbeddingTable {
    pub fn new(weights: Matrix) -> Self {
        Self { weights }
    }

    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        Self { weights: Matrix::zeros(vocab_size, dim) }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Mean of the rows at `ids`; zero vector when `ids` is empty.
    pub fn mean_rows(&self, ids: &[usize]) -> Vector {
        let mut out = Vector::zeros(self.dim());
        if ids.is_empty() {
            return out;
        }
        for &id in ids {
            out.add_scaled(1.0, self.weights.row(id));
        }
        out.scale(1.0 / ids.len() as f64);
        out
    }

    /// Scatter `grad` (gradient w.r.t. the mean of `ids`) into `table_grad`.
    pub fn accumulate_grad(table_grad: &mut Matrix, ids: &[usize], grad: &[f64]) {
        if ids.is_empty() {
            return;
        }
        let share = 1.0 / ids.len() as f64;
        for &id in ids {
            for (g, d) in table_grad.row_mut(id).iter_mut().zip(grad) {
                *g += share * d;
            }
        }
    }
}

impl TextEncoder for EmbeddingTable {
    fn dim(&self) -> usize {
        EmbeddingTable::dim(self)
    }

    fn encode(&self, tokens: &[String], vocab: &Vocab) -> Vector {
        self.mean_rows(&token_ids(tokens, vocab))
    }
}

/// Vocabulary ids of `tokens` with OOV mapping; empty when every token is
/// out of vocabulary so the text encodes to the zero vector.
pub fn token_ids(tokens: &[String], vocab: &Vocab) -> Vec<usize> {
    let ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
    if ids.iter().all(|&id| id == vocab.oov_id()) {
        Vec::new()
    } else {
        ids
    }
}

pub fn encode_text(tokens: &[String], vocab: &Vocab, table: &EmbeddingTable) -> Vector {
    assert_eq!(
        table.vocab_size(),
        vocab.size(),
        "embedding table has {} rows but vocabulary has {} entries",
        table.vocab_size(),
        vocab.size()
    );
    table.encode(tokens, vocab)
}

/// One step of the issue chain.
#[derive(Debug, Clone, PartialEq)]
pub struct IssueStepInput {
    /// Diagnosis: description embedding, issue-type one-hot, priority one-hot.
    pub x: Vector,
    /// Resolution: patch embedding, resolution-kind one-hot.
    pub p: Vector,
    /// Days since the previous resolved issue (0 for the first).
    pub delta_days: f64,
}

/// A step input together with the token ids that produced it, so gradients
/// can be routed back into the embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedIssue {
    pub input: IssueStepInput,
    pub description_ids: Vec<usize>,
    pub patch_ids: Vec<usize>,
}

fn one_hot<C: Categorical>(value: C, out: &mut Vec<f64>) {
    let start = out.len();
    out.resize(start + C::ALL.len(), 0.0);
    out[start + value.index()] = 1.0;
}

pub fn encode_issue_full(
    issue: &IssueEvent,
    prev_resolved_at: Option<i64>,
    vocab: &Vocab,
    table: &EmbeddingTable,
) -> Result<EncodedIssue, EncodeError> {
    let delta = prev_resolved_at.map_or(0, |prev| issue.resolved_at - prev);
    if delta < 0 {
        return Err(EncodeError::NegativeDelta { issue_id: issue.issue_id.clone(), delta });
    }
    let description_ids = token_ids(&issue.description_tokens, vocab);
    let patch_ids = token_ids(&issue.patch_tokens, vocab);

    let mut x = table.mean_rows(&description_ids).into_inner();
    one_hot::<IssueType>(issue.issue_type, &mut x);
    one_hot::<Priority>(issue.priority, &mut x);
    let mut p = table.mean_rows(&patch_ids).into_inner();
    one_hot::<ResolutionKind>(issue.resolution_kind, &mut p);

    Ok(EncodedIssue {
        input: IssueStepInput { x: x.into(), p: p.into(), delta_days: delta as f64 },
        description_ids,
        patch_ids,
    })
}

pub fn encode_issue(
    issue: &IssueEvent,
    prev_resolved_at: Option<i64>,
    vocab: &Vocab,
    table: &EmbeddingTable,
) -> Result<IssueStepInput, EncodeError> {
    encode_issue_full(issue, prev_resolved_at, vocab, table).map(|e| e.input)
}

/// Encode every issue of an ordered sequence.
pub fn encode_issues(
    issues: &[IssueEvent],
    vocab: &Vocab,
    table: &EmbeddingTable,
) -> Result<Vec<EncodedIssue>, EncodeError> {
    let mut prev = None;
    issues
        .iter()
        .map(|issue| {
            let encoded = encode_issue_full(issue, prev, vocab, table);
            prev = Some(issue.resolved_at);
            encoded
        })
        .collect()
}

/// φ(Δ) = (ln(1 + Δ), min(Δ, 365) / 30).
pub fn time_features(delta_days: f64) -> [f64; TIME_FEATURE_DIM] {
    [delta_days.ln_1p(), delta_days.min(TIME_CAP_DAYS) / TIME_SCALE_DAYS]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_ab() -> Vocab {
        Vocab::from_tokens(vec!["a".into(), "b".into()])
    }

    fn table_ab() -> EmbeddingTable {
        // rows: a, b, oov
        EmbeddingTable::new(Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[7.0, 7.0]]))
    }

    fn toks(ts: &[&str]) -> Vec<String> {
        ts.iter().map(|s| s.to_string()).collect()
    }

    fn issue(resolved_at: i64, kind: ResolutionKind, patch: &[&str]) -> IssueEvent {
        IssueEvent {
            issue_id: format!("i{resolved_at}"),
            resolved_at,
            description_tokens: toks(&["a"]),
            resolution_kind: kind,
            patch_tokens: toks(patch),
            issue_type: IssueType::Feature,
            priority: Priority::Critical,
            label_delayed: None,
        }
    }

    #[test]
    fn text_encoding() {
        let (v, t) = (vocab_ab(), table_ab());
        assert_eq!(encode_text(&[], &v, &t), Vector::zeros(2));
        assert_eq!(encode_text(&toks(&["b"]), &v, &t).as_slice(), t.weights.row(1));
        assert_eq!(encode_text(&toks(&["a", "b"]), &v, &t).as_slice(), &[0.5, 0.5]);
        assert_eq!(encode_text(&toks(&["zzz", "qq"]), &v, &t), Vector::zeros(2));
        // a partially known text keeps the OOV row in the mean
        assert_eq!(encode_text(&toks(&["a", "zzz"]), &v, &t).as_slice(), &[4.0, 3.5]);
    }

    #[test]
    fn invalid_resolution_has_zero_patch_embedding() {
        let e = encode_issue(&issue(3, ResolutionKind::Invalid, &[]), None, &vocab_ab(), &table_ab()).unwrap();
        assert_eq!(e.p.as_slice(), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(e.x.as_slice(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(e.x.len(), diagnosis_dim(2));
        assert_eq!(e.p.len(), resolution_dim(2));
    }

    #[test]
    fn deltas() {
        let (v, t) = (vocab_ab(), table_ab());
        let first = encode_issue(&issue(10, ResolutionKind::Duplicate, &[]), None, &v, &t).unwrap();
        assert_eq!(first.delta_days, 0.0);
        let next = encode_issue(&issue(17, ResolutionKind::Duplicate, &[]), Some(10), &v, &t).unwrap();
        assert_eq!(next.delta_days, 7.0);
        let err = encode_issue(&issue(3, ResolutionKind::Duplicate, &[]), Some(10), &v, &t).unwrap_err();
        assert_eq!(err, EncodeError::NegativeDelta { issue_id: "i3".into(), delta: -7 });
    }

    #[test]
    fn time_feature_values() {
        assert_eq!(time_features(0.0), [0.0, 0.0]);
        let f = time_features(30.0);
        assert!((f[0] - 31f64.ln()).abs() < 1e-15);
        assert!((f[0] - 3.4340).abs() < 1e-4);
        assert_eq!(f[1], 1.0);
        assert!((time_features(10000.0)[1] - 12.1667).abs() < 1e-4);
    }

    #[test]
    fn embedding_grad_touches_only_used_rows() {
        let mut g = Matrix::zeros(3, 2);
        EmbeddingTable::accumulate_grad(&mut g, &[0, 0, 1], &[3.0, 6.0]);
        assert_eq!(g.row(0), &[2.0, 4.0]);
        assert_eq!(g.row(1), &[1.0, 2.0]);
        assert_eq!(g.row(2), &[0.0, 0.0]);
    }
}
