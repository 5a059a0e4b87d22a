use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ProjectHistory;

/// Token vocabulary with a single out-of-vocabulary slot at the last id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(repr: VocabRepr) -> Self {
        Vocab::from_tokens(repr.tokens)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.id_to_token }
    }
}

impl Vocab {
    /// Build from all description and patch tokens of `projects`, keeping
    /// tokens seen at least `min_count` times. Ids are assigned by descending
    /// count, ties broken lexicographically.
    pub fn build(projects: &[ProjectHistory], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for issue in projects.iter().flat_map(|p| &p.issues) {
            for t in issue.description_tokens.iter().chain(&issue.patch_tokens) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_owned()).collect())
    }

    /// Tokens listed in id order; the OOV id is appended after them.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let token_to_id = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { token_to_id, id_to_token: tokens }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len() + 1
    }

    pub fn oov_id(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(self.oov_id())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}
