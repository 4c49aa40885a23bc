use super::{EarlyStopping, EpochRecord, History, Hooks, StepDigests, TrainConfig, Verdict};
use crate::data::{split_chronological, split_random, split_random_stratified, MultimodalDataset, TargetScaler};
use crate::error::{Error, Result};
use crate::fusion::{Objective, Task};
use crate::numerics::{derive_seed, Rng};
use crate::objectives::ClassWeights;

/// A model being trained by [`fit`].
pub(crate) trait Learner {
    type Snapshot: Clone;

    /// One optimization step on the training rows `batch`; returns the batch
    /// loss and, when asked, parameter digests around the step.
    fn step(&mut self, batch: &[usize], digests: bool) -> Result<(f64, Option<StepDigests>)>;
    fn val_loss(&self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot) -> Result<()>;
    fn digest(&self) -> String;
}

/// Minibatch epochs with early stopping; the best snapshot is restored at
/// the end.
pub(crate) fn fit<L: Learner>(
    learner: &mut L,
    n_train: usize,
    tc: &TrainConfig,
    rng: &mut Rng,
    hooks: &mut Hooks,
) -> Result<History> {
    if n_train == 0 {
        return Err(Error::Data("empty training split".into()));
    }
    let mut stopper = EarlyStopping::new(tc.patience)?;
    let mut history = History::default();
    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 1..=tc.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for (k, batch) in order.chunks(tc.batch_size).enumerate() {
            let (loss, digests) = learner.step(batch, hooks.on_step.is_some()).map_err(|e| {
                log::error!("training aborted at epoch {epoch}, batch {k}: {e}");
                e
            })?;
            if !loss.is_finite() {
                log::error!("training aborted at epoch {epoch}, batch {k}: loss {loss}");
                return Err(Error::NonFinite { op: "training_loss" });
            }
            total += loss * batch.len() as f64;
            if let (Some(cb), Some(d)) = (hooks.on_step.as_mut(), digests) {
                cb(&d);
            }
        }
        let train_loss = total / n_train as f64;
        let mut val_loss = learner.val_loss()?;
        if let Some(f) = hooks.val_loss.as_mut() {
            val_loss = f(epoch, val_loss);
        }
        let verdict = stopper.observe(epoch, val_loss, || learner.snapshot())?;
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} {verdict:?}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            params_digest: learner.digest(),
        });
        if verdict == Verdict::Stop {
            history.stopped_early = true;
            log::info!("early stop at epoch {epoch}; best epoch {}", stopper.best_epoch);
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    if let Some(best) = stopper.into_best() {
        learner.restore(best)?;
    }
    Ok(history)
}

/// Holds out `val_frac` of `train` for early stopping: stratified for
/// classes, the tail of each series for temporal records, random otherwise.
pub(crate) fn carve_validation(
    train: &MultimodalDataset,
    task: Task,
    val_frac: f64,
    seed: u64,
) -> Result<(MultimodalDataset, MultimodalDataset)> {
    let keep = 1.0 - val_frac;
    let seed = derive_seed(seed, "val-split");
    if train.records().iter().all(|r| r.t.is_some()) && !train.is_empty() {
        split_chronological(train, keep)
    } else if task.is_classification() {
        split_random_stratified(train, keep, seed)
    } else {
        split_random(train, keep, seed)
    }
}

/// Training targets of the fit and validation splits.
pub(crate) enum Labels {
    Classes {
        fit: Vec<usize>,
        val: Vec<usize>,
        weights: ClassWeights,
        gamma: f64,
    },
    Values {
        fit: Vec<f64>,
        val: Vec<f64>,
        scaler: TargetScaler,
    },
}

impl Labels {
    pub(crate) fn new(
        task: Task,
        fit: &MultimodalDataset,
        val: &MultimodalDataset,
        tc: &TrainConfig,
    ) -> Result<Self> {
        if fit.is_empty() || val.is_empty() {
            return Err(Error::Data(format!(
                "training needs non-empty fit and validation splits (got {} and {})",
                fit.len(),
                val.len()
            )));
        }
        match task {
            Task::Classification { n_classes } => {
                let (f, v) = (fit.classes()?, val.classes()?);
                if let Some(c) = f.iter().chain(&v).find(|&&c| c >= n_classes) {
                    return Err(Error::Data(format!("label {c} outside {n_classes} classes")));
                }
                let weights = if tc.class_weighted {
                    ClassWeights::from_labels(&f, n_classes)?
                } else {
                    ClassWeights::uniform(n_classes)
                };
                Ok(Labels::Classes {
                    fit: f,
                    val: v,
                    weights,
                    gamma: tc.gamma,
                })
            }
            Task::Regression => {
                let scaler = TargetScaler::fit(&fit.values())?;
                Ok(Labels::Values {
                    fit: scaler.forward(&fit.values()),
                    val: scaler.forward(&val.values()),
                    scaler,
                })
            }
        }
    }

    pub(crate) fn scaler(&self) -> Option<TargetScaler> {
        match self {
            Labels::Classes { .. } => None,
            Labels::Values { scaler, .. } => Some(*scaler),
        }
    }

    /// Targets of the fit rows `idx`.
    pub(crate) fn batch(&self, idx: &[usize]) -> BatchTargets {
        match self {
            Labels::Classes { fit, .. } => BatchTargets::Classes(idx.iter().map(|&i| fit[i]).collect()),
            Labels::Values { fit, .. } => BatchTargets::Values(idx.iter().map(|&i| fit[i]).collect()),
        }
    }

    pub(crate) fn val(&self) -> BatchTargets {
        match self {
            Labels::Classes { val, .. } => BatchTargets::Classes(val.clone()),
            Labels::Values { val, .. } => BatchTargets::Values(val.clone()),
        }
    }

    pub(crate) fn objective<'a>(&'a self, targets: &'a BatchTargets) -> Objective<'a> {
        match (self, targets) {
            (Labels::Classes { weights, gamma, .. }, BatchTargets::Classes(t)) => Objective::Focal {
                targets: t,
                weights,
                gamma: *gamma,
            },
            (_, BatchTargets::Values(t)) => Objective::Mse { targets: t },
            (Labels::Values { .. }, BatchTargets::Classes(_)) => unreachable!("class targets for a regression task"),
        }
    }
}

pub(crate) enum BatchTargets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}
