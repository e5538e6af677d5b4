//! Batch training: for every instance the top permutations of its label set
//! are re-searched under the current parameters, the objective turns them
//! into weighted sequences, the batch gradient is averaged, and one Adam
//! step is applied. Fixed seed, fixed data, fixed config give a
//! bitwise-reproducible parameter trajectory.

use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::model::adam::{AdamConfig, AdamState};
use crate::model::checkpoint::{Checkpoint, TrainingProgress};
use crate::model::neural::NeuralModel;
use crate::model::params::{ModelParameters, Scalar};
use crate::model::SequenceModel;
use crate::objectives::{evaluate_objective, ObjectiveSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub objective: ObjectiveSpec,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables.
    #[serde(default)]
    pub checkpoint_interval: usize,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    /// Shuffle instance order each epoch (seed-derived, deterministic).
    #[serde(default = "default_true")]
    pub shuffle: bool,
    /// Compute per-instance gradients across threads. The reduction is
    /// ordered, so results are identical either way.
    #[serde(default)]
    pub parallel: bool,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.checkpoint_interval > 0 && self.checkpoint_path.is_none() {
            return Err(Error::config(
                "checkpoint_interval set but no checkpoint_path given",
            ));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_secs: f64,
}

pub fn epoch_loss_curve(log: &[EpochRecord]) -> Vec<f64> {
    log.iter().map(|r| r.mean_loss).collect()
}

/// Tab-separated epoch log: index, mean loss, wall time.
pub fn write_epoch_log(log: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "epoch\tmean_loss\twall_secs")?;
    for r in log {
        writeln!(out, "{}\t{:.17e}\t{:.3}", r.epoch, r.mean_loss, r.wall_secs)?;
    }
    Ok(())
}

fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    x ^= x >> 30;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}

pub struct Trainer<F: Scalar> {
    model: NeuralModel<F>,
    optimizer: AdamState,
    cfg: TrainConfig,
    epochs_completed: usize,
    epoch_losses: Vec<f64>,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(model: NeuralModel<F>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = AdamState::new(cfg.optimizer, model.params().num_params())?;
        Ok(Trainer {
            model,
            optimizer,
            cfg,
            epochs_completed: 0,
            epoch_losses: Vec::new(),
        })
    }

    /// Continues a run from a checkpoint; the trajectory matches
    /// uninterrupted training because every epoch derives its own RNG.
    pub fn resume(checkpoint: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model: NeuralModel<F> = checkpoint.into_model()?;
        let optimizer = match &checkpoint.optimizer {
            Some(state) => state.clone(),
            None => AdamState::new(cfg.optimizer, model.params().num_params())?,
        };
        if checkpoint.progress.seed != cfg.seed {
            return Err(Error::config(format!(
                "checkpoint was trained with seed {}, config says {}",
                checkpoint.progress.seed, cfg.seed
            )));
        }
        Ok(Trainer {
            model,
            optimizer,
            epochs_completed: checkpoint.progress.epochs_completed,
            epoch_losses: checkpoint.progress.epoch_losses.clone(),
            cfg,
        })
    }

    pub fn model(&self) -> &NeuralModel<F> {
        &self.model
    }

    pub fn into_model(self) -> NeuralModel<F> {
        self.model
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            Some(&self.optimizer),
            TrainingProgress {
                epochs_completed: self.epochs_completed,
                seed: self.cfg.seed,
                epoch_losses: self.epoch_losses.clone(),
            },
        )
    }

    fn check_dataset(&self, dataset: &[Instance]) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::input("training dataset is empty"));
        }
        let num_labels = self.model.num_labels();
        for inst in dataset {
            if inst.labels.is_empty() {
                return Err(Error::input(format!(
                    "instance '{}' has an empty label set",
                    inst.id
                )));
            }
            if let Some(&l) = inst.labels.labels().iter().find(|&&l| l > num_labels) {
                return Err(Error::input(format!(
                    "instance '{}' uses label {l}, model has {num_labels}",
                    inst.id
                )));
            }
        }
        Ok(())
    }

    fn frequency_table(&self, dataset: &[Instance]) -> Vec<u64> {
        let mut freq = vec![0u64; self.model.num_labels() + 1];
        for inst in dataset {
            for &l in inst.labels.labels() {
                freq[l] += 1;
            }
        }
        freq
    }

    fn instance_step(
        &self,
        inst: &Instance,
        epoch: usize,
        index: usize,
        freq: &[u64],
    ) -> Result<(f64, ModelParameters<F>)> {
        let ctx = self.model.context(&inst.doc)?;
        let kind = self.cfg.objective.effective_kind(epoch);
        let (loss, pairs) =
            evaluate_objective(&self.model, &ctx, &inst.labels, kind, self.cfg.objective.width, freq)
                .map_err(|e| {
                    Error::numeric(format!("instance '{}': {e}", inst.id))
                })?;
        if !loss.is_finite() {
            let seqs: Vec<_> = pairs.iter().map(|(s, w)| (s.0.clone(), *w)).collect();
            return Err(Error::numeric(format!(
                "non-finite loss on instance '{}'; sequences {seqs:?}",
                inst.id
            )));
        }
        let mut dropout_rng = if self.model.config().dropout > 0.0 {
            Some(ChaCha8Rng::seed_from_u64(derive_seed(
                self.cfg.seed,
                epoch as u64,
                index as u64,
            )))
        } else {
            None
        };
        let (_, grad) = self
            .model
            .weighted_nll_gradient(&inst.doc, &pairs, dropout_rng.as_mut())?;
        Ok((loss, grad))
    }

    /// Runs the remaining epochs; returns the per-epoch log (whole run,
    /// including epochs restored from a checkpoint).
    pub fn train(&mut self, dataset: &[Instance]) -> Result<Vec<EpochRecord>> {
        self.check_dataset(dataset)?;
        let freq = self.frequency_table(dataset);
        let mut log: Vec<EpochRecord> = self
            .epoch_losses
            .iter()
            .enumerate()
            .map(|(i, &l)| EpochRecord {
                epoch: i,
                mean_loss: l,
                wall_secs: 0.0,
            })
            .collect();

        for epoch in self.epochs_completed..self.cfg.epochs {
            let started = Instant::now();
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            if self.cfg.shuffle {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch as u64, 0));
                order.shuffle(&mut rng);
            }
            let mut loss_sum = 0.0;
            for batch in order.chunks(self.cfg.batch_size) {
                let results: Vec<Result<(f64, ModelParameters<F>)>> = if self.cfg.parallel {
                    batch
                        .par_iter()
                        .map(|&i| self.instance_step(&dataset[i], epoch, i, &freq))
                        .collect()
                } else {
                    batch
                        .iter()
                        .map(|&i| self.instance_step(&dataset[i], epoch, i, &freq))
                        .collect()
                };
                let mut batch_grad = ModelParameters::<F>::zeros(self.model.config());
                for result in results {
                    let (loss, grad) = result?;
                    loss_sum += loss;
                    batch_grad.add_scaled(&grad, F::one());
                }
                batch_grad.scale(F::cast_from(1.0 / batch.len() as f64));
                self.optimizer.apply(self.model.params_mut(), &batch_grad)?;
            }
            let mean_loss = loss_sum / dataset.len() as f64;
            self.epochs_completed = epoch + 1;
            self.epoch_losses.push(mean_loss);
            log.push(EpochRecord {
                epoch,
                mean_loss,
                wall_secs: started.elapsed().as_secs_f64(),
            });

            if self.cfg.checkpoint_interval > 0
                && self.epochs_completed % self.cfg.checkpoint_interval == 0
            {
                if let Some(path) = &self.cfg.checkpoint_path {
                    self.checkpoint().save(path)?;
                }
            }
        }
        Ok(log)
    }
}
