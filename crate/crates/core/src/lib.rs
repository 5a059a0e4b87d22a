//! A hierarchical, irregular-time LSTM over software issue and release
//! histories.
//!
//! Issues are encoded from text and categorical attributes and run through a
//! time-aware LSTM whose forget gate can decay with the gap since the previous
//! issue. Issue states are pooled per release, the release sequence runs
//! through a second LSTM, and its states are pooled into one project vector.
//! Logistic heads predict delay at every level.
//!
//! ```
//! use deepsoft::data::{synth_projects, Scenario, build_vocab};
//! use deepsoft::hierarchy::forward_project;
//! use deepsoft::model::{Model, ModelConfig};
//!
//! let projects = synth_projects(1, 7, Scenario::BugMassDelay);
//! let model = Model::new(ModelConfig::default(), build_vocab(&projects, 1), 7);
//! let out = forward_project(&model, &projects[0]).unwrap();
//! assert_eq!(out.release_probs().len(), projects[0].releases.len());
//! ```

pub mod cli;
pub mod data;
pub mod encoder;
pub mod hierarchy;
pub mod model;
pub mod tensor;
pub mod tlstm;
pub mod train;
