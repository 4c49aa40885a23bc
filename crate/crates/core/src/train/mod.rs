//! Training orchestration: configuration, early stopping, the fusion and
//! baseline loops, evaluation, multi-seed runs, checkpoints and gradient
//! checks of the loss compositions.

mod baseline;
mod checkpoint;
mod early_stop;
mod experiment;
mod fit;
mod fusion;
mod gradcheck;
mod model;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::optim::OptimizerKind;

pub use baseline::{train_baseline, train_baseline_with, BaselineConfig, BaselineKind, BaselineModel};
pub use checkpoint::{checkpoint_load, checkpoint_read, checkpoint_save, checkpoint_write, FORMAT_VERSION, MAGIC};
pub use early_stop::{EarlyStopping, Verdict};
pub use experiment::{
    multi_seed_run, prepare, run_experiment, Arch, ExperimentSpec, Modalities, MultiSeedReport, Prepared, SeedRun,
    SplitKind, Summary, TaskKind,
};
pub use fusion::{train_fusion, train_fusion_with};
pub use gradcheck::{gradcheck_target, GradTarget};
pub use model::{evaluate_model, Network, Predictions, TrainedModel};

/// How the vCLUB estimator and the fusion model share a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiSchedule {
    /// One estimator ascent step, then one model step with the estimator frozen.
    #[default]
    Alternating,
    /// A single step on the sum of both terms, updating both networks.
    Summed,
}

impl std::str::FromStr for MiSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alternating" => Ok(Self::Alternating),
            "summed" => Ok(Self::Summed),
            other => Err(Error::Config(format!("unknown MI schedule {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub optimizer: OptimizerKind,
    pub lambda_mi: f64,
    /// Learning rate of the vCLUB estimator, which has to track the moving
    /// fusion representations.
    pub estimator_lr: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    pub seeds: Vec<u64>,
    /// Fraction of the training split held out for early stopping.
    pub val_frac: f64,
    pub mi_schedule: MiSchedule,
    /// Weight the focal loss by inverse class frequency.
    pub class_weighted: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 200,
            batch_size: 32,
            patience: 7,
            optimizer: OptimizerKind::Adam,
            lambda_mi: 0.1,
            estimator_lr: 1e-2,
            gamma: 2.0,
            weight_decay: 1e-4,
            seeds: vec![1, 2, 3],
            val_frac: 0.15,
            mi_schedule: MiSchedule::Alternating,
            class_weighted: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.val_frac > 0.0 && self.val_frac < 0.5) {
            return Err(Error::Config(format!("val_frac must lie in (0, 0.5), got {}", self.val_frac)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.estimator_lr > 0.0 && self.estimator_lr.is_finite()) {
            return Err(Error::Config(format!(
                "estimator learning rate must be > 0, got {}",
                self.estimator_lr
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_mi) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda_mi)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// One epoch of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Digest of the model parameters at the end of the epoch.
    pub params_digest: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }
}

/// Parameter digests around one training step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepDigests {
    pub model_before: String,
    pub estimator_before: Option<String>,
    /// After the estimator update, before the model update.
    pub model_mid: String,
    pub estimator_mid: Option<String>,
    pub model_after: String,
    pub estimator_after: Option<String>,
}

/// Test and diagnostics hooks for the training loops.
#[derive(Default)]
pub struct Hooks<'a> {
    /// Replaces the computed validation loss of an epoch (1-based).
    pub val_loss: Option<Box<dyn FnMut(usize, f64) -> f64 + 'a>>,
    /// Called after every step with parameter digests; computing them is
    /// skipped when unset.
    pub on_step: Option<Box<dyn FnMut(&StepDigests) + 'a>>,
}
