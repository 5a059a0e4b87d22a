//! Single-document JSON checkpoints.
//!
//! Layout: `format_version`, the model `config`, the `vocab`, every tensor as
//! `{name, shape, values}` in canonical order, and a `training` block. Floats
//! are written with round-trip precision, so save → load → save reproduces the
//! same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Vocab;
use crate::model::{Model, ModelConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("unsupported checkpoint format_version {found} (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error("tensor {name}: shape {found:?} does not match expected {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor {name}: {found} values for shape {shape:?}")]
    ValueCount { name: String, shape: Vec<usize>, found: usize },
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("unexpected tensor {0}")]
    UnexpectedTensor(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub seed: u64,
    /// Training loss after each epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub tensors: Vec<TensorRecord>,
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn from_model(model: &Model, training: TrainingMeta) -> Self {
        let tensors = model
            .params
            .tensors()
            .into_iter()
            .map(|t| TensorRecord { name: t.name, shape: t.shape, values: t.values.to_vec() })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            tensors,
            training,
        }
    }

    /// Rebuild the model, checking every tensor name and shape.
    pub fn to_model(&self) -> Result<Model, CheckpointError> {
        let mut model = Model::zeros(self.config.clone(), self.vocab.clone());
        let expected: Vec<(String, Vec<usize>)> =
            model.params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        for rec in &self.tensors {
            if !expected.iter().any(|(n, _)| *n == rec.name) {
                return Err(CheckpointError::UnexpectedTensor(rec.name.clone()));
            }
        }
        let mut slots = model.params.tensors_mut();
        for ((name, shape), slot) in expected.iter().zip(slots.iter_mut()) {
            let rec = self
                .tensors
                .iter()
                .find(|r| r.name == *name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
            if rec.shape != *shape {
                return Err(CheckpointError::Shape { name: name.clone(), expected: shape.clone(), found: rec.shape.clone() });
            }
            if rec.values.len() != slot.len() {
                return Err(CheckpointError::ValueCount {
                    name: name.clone(),
                    shape: shape.clone(),
                    found: rec.values.len(),
                });
            }
            slot.copy_from_slice(&rec.values);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(found) => return Err(CheckpointError::Version { found, expected: FORMAT_VERSION }),
            None => return Err(CheckpointError::Malformed("missing format_version".into())),
        }
        serde_json::from_value(value).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_json()).map_err(|source| CheckpointError::Io { path: path.to_owned(), source })
}

/// Load a checkpoint and rebuild its model.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Checkpoint, Model), CheckpointError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.to_owned(), source })?;
    let ckpt = Checkpoint::from_json(&text)?;
    let model = ckpt.to_model()?;
    Ok((ckpt, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, synth_projects, Scenario};
    use crate::tlstm::TimeMode;

    fn sample() -> Checkpoint {
        let projects = synth_projects(2, 8, Scenario::BugMassDelay);
        let config = ModelConfig {
            embed_dim: 3,
            hidden_dim: 4,
            mlp_hidden_dim: 2,
            time_mode: TimeMode::Parametric,
            ..Default::default()
        };
        let model = Model::new(config, build_vocab(&projects, 1), 5);
        Checkpoint::from_model(&model, TrainingMeta { epoch: 2, seed: 5, loss_history: vec![0.7, 0.1 + 0.2] })
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = sample();
        let text = ck.to_json();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json(), text);
        let model = back.to_model().unwrap();
        assert_eq!(Checkpoint::from_model(&model, back.training.clone()).to_json(), text);
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let text = sample().to_json().replacen("\"format_version\": 1", "\"format_version\": 999", 1);
        let err = Checkpoint::from_json(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("999") && msg.contains("expected 1"), "{msg}");
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let mut ck = sample();
        let rec = ck.tensors.iter_mut().find(|t| t.name == "release_head.w").unwrap();
        rec.shape = vec![rec.values.len() + 1];
        match ck.to_model() {
            Err(CheckpointError::Shape { name, .. }) => assert_eq!(name, "release_head.w"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_and_extra_tensors_rejected() {
        let mut ck = sample();
        ck.tensors.retain(|t| t.name != "issue_lstm.Q_f");
        assert!(matches!(ck.to_model(), Err(CheckpointError::MissingTensor(n)) if n == "issue_lstm.Q_f"));
        let mut ck = sample();
        ck.tensors.push(TensorRecord { name: "bogus".into(), shape: vec![1], values: vec![0.0] });
        assert!(matches!(ck.to_model(), Err(CheckpointError::UnexpectedTensor(n)) if n == "bogus"));
    }
}
