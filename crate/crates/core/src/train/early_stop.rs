use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping that keeps a snapshot of the best state.
///
/// An epoch improves only if its validation loss is strictly below the best
/// so far. Training stops once `patience` consecutive epochs fail to improve.
#[derive(Debug, Clone)]
pub struct EarlyStopping<S> {
    pub patience: usize,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improve: usize,
    best: Option<S>,
}

impl<S: Clone> EarlyStopping<S> {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(Self {
            patience,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improve: 0,
            best: None,
        })
    }

    /// Records the validation loss of `epoch`; `snapshot` is called only on
    /// improvement.
    pub fn observe(&mut self, epoch: usize, val_loss: f64, snapshot: impl FnOnce() -> S) -> Result<Verdict> {
        if !val_loss.is_finite() {
            return Err(Error::NonFinite { op: "validation_loss" });
        }
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.best_epoch = epoch;
            self.epochs_since_improve = 0;
            self.best = Some(snapshot());
            return Ok(Verdict::Improved);
        }
        self.epochs_since_improve += 1;
        Ok(if self.epochs_since_improve >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        })
    }

    pub fn best(&self) -> Option<&S> {
        self.best.as_ref()
    }

    pub fn into_best(self) -> Option<S> {
        self.best
    }
}
