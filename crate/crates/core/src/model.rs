//! The full set of learnable tensors and the configuration that shapes them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::encoder::{diagnosis_dim, resolution_dim, EmbeddingTable};
use crate::hierarchy::{HeadParams, PoolingSpec};
use crate::tlstm::{TimeAwareLstmParams, TimeMode};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Token embedding width `d_e`.
    pub embed_dim: usize,
    /// Issue-level LSTM state size `d_h`.
    pub hidden_dim: usize,
    /// Release-level LSTM state size `d_g`; defaults to `hidden_dim`.
    pub release_hidden_dim: Option<usize>,
    /// Hidden width of the project-level perceptron.
    pub mlp_hidden_dim: usize,
    pub time_mode: TimeMode,
    /// Let the input gate see elapsed time in parametric mode.
    pub time_input_gate: bool,
    pub release_pooling: PoolingSpec,
    pub project_pooling: PoolingSpec,
    /// Minimum token count for the vocabulary.
    pub min_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 16,
            release_hidden_dim: None,
            mlp_hidden_dim: 16,
            time_mode: TimeMode::None,
            time_input_gate: true,
            release_pooling: PoolingSpec::default(),
            project_pooling: PoolingSpec::default(),
            min_count: 1,
        }
    }
}

impl ModelConfig {
    pub fn release_hidden(&self) -> usize {
        self.release_hidden_dim.unwrap_or(self.hidden_dim)
    }
}

/// One named tensor view.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
    /// False for tensors held fixed in the current configuration.
    pub trainable: bool,
}

/// Every learnable tensor. The same type doubles as a gradient bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: EmbeddingTable,
    pub issue_lstm: TimeAwareLstmParams,
    pub release_lstm: TimeAwareLstmParams,
    pub heads: HeadParams,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig, vocab_size: usize) -> Self {
        let d_e = config.embed_dim;
        let mut issue_lstm =
            TimeAwareLstmParams::zeros(diagnosis_dim(d_e), resolution_dim(d_e), config.hidden_dim, config.time_mode);
        issue_lstm.time_input_gate = config.time_input_gate;
        Self {
            embedding: EmbeddingTable::zeros(vocab_size, d_e),
            issue_lstm,
            release_lstm: TimeAwareLstmParams::zeros_plain(config.hidden_dim, config.release_hidden()),
            heads: HeadParams::zeros(config.hidden_dim, config.release_hidden(), config.mlp_hidden_dim),
        }
    }

    /// Seeded random initialization.
    pub fn init(config: &ModelConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config, vocab_size);
        let bound = 1.0 / (config.embed_dim as f64).sqrt();
        for v in p.embedding.weights.as_mut_slice() {
            *v = rng.random_range(-bound..=bound);
        }
        p.issue_lstm.init(&mut rng);
        p.release_lstm.init(&mut rng);
        p.heads.init(&mut rng);
        p
    }

    /// Canonical tensor list. Names are stable and used in checkpoints and
    /// gradient-check reports.
    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = vec![NamedTensor {
            name: "embedding.table".into(),
            shape: vec![self.embedding.vocab_size(), self.embedding.dim()],
            values: self.embedding.weights.as_slice(),
            trainable: true,
        }];
        for (prefix, cell) in [("issue_lstm", &self.issue_lstm), ("release_lstm", &self.release_lstm)] {
            out.extend(cell.tensors().into_iter().map(|(name, shape, values, trainable)| NamedTensor {
                name: format!("{prefix}.{name}"),
                shape,
                values,
                trainable,
            }));
        }
        out.extend(self.heads.tensors().into_iter().map(|(name, shape, values)| NamedTensor {
            name: name.to_owned(),
            shape,
            values,
            trainable: true,
        }));
        out
    }

    /// Mutable views in the order of [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embedding.weights.as_mut_slice()];
        out.extend(self.issue_lstm.tensors_mut());
        out.extend(self.release_lstm.tensors_mut());
        out.extend(self.heads.tensors_mut());
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        let theirs: Vec<Vec<f64>> = other.tensors().iter().map(|t| t.values.to_vec()).collect();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(theirs) {
            assert_eq!(mine.len(), theirs.len(), "add_scaled: tensor size mismatch");
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += scale * b;
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().filter(|t| t.trainable).map(|t| t.values.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.values.iter().all(|v| v.is_finite()))
    }
}

/// Parameters together with everything needed to run them on raw projects.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Self {
        let params = ModelParams::init(&config, vocab.size(), seed);
        Self { config, vocab, params }
    }

    pub fn zeros(config: ModelConfig, vocab: Vocab) -> Self {
        let params = ModelParams::zeros(&config, vocab.size());
        Self { config, vocab, params }
    }
}

pub(crate) fn uniform_fill(values: &mut [f64], bound: f64, rng: &mut impl Rng) {
    for v in values {
        *v = rng.random_range(-bound..=bound);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { embed_dim: 3, hidden_dim: 4, release_hidden_dim: Some(3), mlp_hidden_dim: 5, ..Default::default() }
    }

    #[test]
    fn canonical_names_are_unique_and_stable() {
        let p = ModelParams::init(&small(), 7, 1);
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names[0], "embedding.table");
        assert!(names.contains(&"issue_lstm.W_f".to_string()));
        assert!(names.contains(&"issue_lstm.Q_i".to_string()));
        assert!(!names.contains(&"release_lstm.P_f".to_string()));
        assert_eq!(names.last().unwrap(), "project_head.b2");
        assert_eq!(p.tensors().len(), p.clone().tensors_mut().len());
    }

    #[test]
    fn shapes_follow_dims() {
        let p = ModelParams::zeros(&small(), 7);
        let shape = |n: &str| p.tensors().into_iter().find(|t| t.name == n).unwrap().shape;
        assert_eq!(shape("embedding.table"), vec![7, 3]);
        assert_eq!(shape("issue_lstm.W_o"), vec![4, 3 + 8]);
        assert_eq!(shape("issue_lstm.P_c"), vec![4, 3 + 5]);
        assert_eq!(shape("issue_lstm.Q_f"), vec![4, 2]);
        assert_eq!(shape("release_lstm.W_i"), vec![3, 4]);
        assert_eq!(shape("release_lstm.U_i"), vec![3, 3]);
        assert_eq!(shape("project_head.W1"), vec![5, 3]);
        assert_eq!(shape("release_head.w"), vec![3]);
    }

    #[test]
    fn time_tensors_trainable_only_in_parametric_mode() {
        let trainable = |mode, gate| {
            let cfg = ModelConfig { time_mode: mode, time_input_gate: gate, ..small() };
            let p = ModelParams::init(&cfg, 4, 0);
            let find = |n: &str| p.tensors().into_iter().find(|t| t.name == n).map(|t| t.trainable).unwrap();
            (find("issue_lstm.Q_f"), find("issue_lstm.Q_i"))
        };
        assert_eq!(trainable(TimeMode::None, true), (false, false));
        assert_eq!(trainable(TimeMode::Monotonic, true), (false, false));
        assert_eq!(trainable(TimeMode::Parametric, true), (true, true));
        assert_eq!(trainable(TimeMode::Parametric, false), (true, false));
    }

    #[test]
    fn init_is_seeded_and_time_weights_zero_when_unused() {
        let a = ModelParams::init(&small(), 7, 9);
        assert_eq!(a, ModelParams::init(&small(), 7, 9));
        assert_ne!(a, ModelParams::init(&small(), 7, 10));
        for q in a.issue_lstm.time.as_ref().unwrap() {
            assert!(q.as_slice().iter().all(|&v| v == 0.0));
        }
        assert!(a.issue_lstm.bias[0].iter().all(|&b| b == 1.0));
        assert!(a.issue_lstm.bias[1].iter().all(|&b| b == 0.0));
    }
}
