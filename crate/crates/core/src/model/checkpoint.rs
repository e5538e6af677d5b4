//! Model checkpoints: a self-describing JSON document holding the
//! configuration, every parameter array by name with its dimensions, the
//! optimizer moments, and where training left off. Loading validates the
//! format version and every array shape, so a checkpoint written for one
//! architecture can never be silently applied to another.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::adam::AdamState;
use crate::model::neural::NeuralModel;
use crate::model::params::{ModelConfig, Scalar};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedArray {
    pub dims: Vec<usize>,
    /// Row-major values, stored in f64.
    pub data: Vec<f64>,
}

/// Where training left off; enough to resume with an identical trajectory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingProgress {
    pub epochs_completed: usize,
    pub seed: u64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// 32 or 64: the floating-point width the model was trained with.
    pub precision: u32,
    pub config: ModelConfig,
    pub arrays: Vec<(String, NamedArray)>,
    pub optimizer: Option<AdamState>,
    pub progress: TrainingProgress,
}

impl Checkpoint {
    pub fn from_model<F: Scalar>(
        model: &NeuralModel<F>,
        optimizer: Option<&AdamState>,
        progress: TrainingProgress,
    ) -> Self {
        let arrays = model
            .params()
            .named_arrays()
            .into_iter()
            .map(|(name, view)| {
                (
                    name,
                    NamedArray {
                        dims: view.shape().to_vec(),
                        data: view.iter().map(|v| v.cast_to_f64()).collect(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            precision: std::mem::size_of::<F>() as u32 * 8,
            config: model.config().clone(),
            arrays,
            optimizer: optimizer.cloned(),
            progress,
        }
    }

    /// Rebuilds the model. Fails if the version, array names, or dimensions
    /// do not line up with what `config` implies.
    pub fn into_model<F: Scalar>(&self) -> Result<NeuralModel<F>> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint format version {} (expected {})",
                self.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        let mut model = NeuralModel::<F>::new(
            self.config.clone(),
            crate::model::params::ModelParameters::zeros(&self.config),
        )?;
        let mut targets = model.params_mut().named_arrays_mut();
        if targets.len() != self.arrays.len() {
            return Err(Error::config(format!(
                "checkpoint has {} arrays, model expects {}",
                self.arrays.len(),
                targets.len()
            )));
        }
        for ((name, stored), (expect_name, view)) in self.arrays.iter().zip(targets.iter_mut()) {
            if name != expect_name {
                return Err(Error::config(format!(
                    "checkpoint array '{name}' where '{expect_name}' was expected"
                )));
            }
            if stored.dims != view.shape() {
                return Err(Error::config(format!(
                    "array '{name}' has dims {:?}, expected {:?}",
                    stored.dims,
                    view.shape()
                )));
            }
            if stored.data.len() != view.len() {
                return Err(Error::config(format!(
                    "array '{name}' has {} values, dims imply {}",
                    stored.data.len(),
                    view.len()
                )));
            }
            for (dst, &src) in view.iter_mut().zip(stored.data.iter()) {
                *dst = F::cast_from(src);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
