use serde::{Deserialize, Serialize};

use super::baseline::BaselineModel;
use super::experiment::Modalities;
use super::History;
use crate::data::{FeatureStats, MultimodalDataset, TargetScaler};
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, Task};
use crate::metrics::{group_report, MetricsReport, Outputs};
use crate::numerics::{ParamSet, Tape, Tensor};

/// A trained network of either family.
#[derive(Debug, Clone)]
pub enum Network {
    Fusion(FusionModel),
    Baseline(BaselineModel),
}

impl Network {
    pub fn task(&self) -> Task {
        match self {
            Network::Fusion(m) => m.config.task,
            Network::Baseline(m) => m.config.task,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Network::Fusion(m) => &m.params,
            Network::Baseline(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Network::Fusion(m) => &mut m.params,
            Network::Baseline(m) => &mut m.params,
        }
    }
}

/// Network plus everything needed to evaluate it on raw records.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub modalities: Modalities,
    /// Standardization of regression targets; predictions are mapped back.
    pub scaler: Option<TargetScaler>,
    /// Feature statistics of the training split, when the model was trained
    /// on normalized features.
    pub features: Option<FeatureStats>,
    /// Sliding-window length for temporal models.
    pub window: Option<usize>,
    pub history: History,
    pub seed: u64,
}

/// Model outputs in the units of the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predictions {
    Classes(Tensor),
    Values(Vec<f64>),
}

impl TrainedModel {
    /// Predicts on records that are already normalized and windowed.
    pub fn predict(&self, ds: &MultimodalDataset) -> Result<Predictions> {
        if ds.is_empty() {
            return Err(Error::Data("no records to predict".into()));
        }
        let raw = match &self.network {
            Network::Fusion(m) => m.predict(&ds.a_matrix()?, &ds.b_matrix()?)?,
            Network::Baseline(m) => m.predict(&self.modalities.features(ds)?)?,
        };
        Ok(match self.network.task() {
            Task::Classification { .. } => {
                let tape = Tape::new();
                Predictions::Classes(tape.constant(raw)?.softmax()?.value())
            }
            Task::Regression => {
                let scaler = self.scaler.unwrap_or_else(TargetScaler::identity);
                Predictions::Values(scaler.invert(raw.data()))
            }
        })
    }
}

/// Metrics of `model` on prepared test records; with `by_group`, adds a
/// per-group breakdown when the records carry groups.
pub fn evaluate_model(model: &TrainedModel, test: &MultimodalDataset, by_group: bool) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let preds = model.predict(test)?;
    let classes;
    let values;
    let outputs = match &preds {
        Predictions::Classes(probs) => {
            classes = test.classes()?;
            Outputs::Classes { probs, targets: &classes }
        }
        Predictions::Values(pred) => {
            values = test.values();
            Outputs::Values { pred, targets: &values }
        }
    };
    match test.groups().filter(|_| by_group) {
        Some(groups) => group_report(&outputs, &groups),
        None => outputs.report(),
    }
}
