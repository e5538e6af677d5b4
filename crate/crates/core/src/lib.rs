//! RNN-based multi-label *set* prediction.
//!
//! A sequence decoder (GRU encoder-decoder with attention) defines
//! probabilities over label sequences; the set probability of a label set
//! is the sum over its permutations. This crate provides the trainable
//! model, a closed-form tabular oracle, set-restricted beam search, the
//! five permutation training objectives, the two-level most-probable-set
//! predictor, evaluation metrics, and dataset tooling.

pub mod beam;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod objectives;
pub mod predictor;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use types::{Document, LabelId, LabelSequence, LabelSet, StepDistribution, STOP};
