use serde::{Deserialize, Serialize};

use super::experiment::Modalities;
use super::fit::{carve_validation, fit, Labels, Learner};
use super::model::{Network, TrainedModel};
use super::{Hooks, StepDigests, TrainConfig};
use crate::data::MultimodalDataset;
use crate::error::{Error, Result};
use crate::fusion::Task;
use crate::numerics::optim::{self, Optimizer};
use crate::numerics::{Bound, Linear, ParamSet, Rng, Tape, Tensor, Var};
use crate::objectives::l2_penalty;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// One linear layer: softmax regression for classes, linear regression
    /// for real targets.
    Logreg,
    /// Two relu hidden layers.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub inputs: usize,
    pub hidden: usize,
    pub task: Task,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, inputs: usize, task: Task) -> Self {
        Self {
            kind,
            inputs,
            hidden: 64,
            task,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.hidden == 0 {
            return Err(Error::Config("baseline widths must be positive".into()));
        }
        if let Task::Classification { n_classes } = self.task {
            if n_classes < 2 {
                return Err(Error::Config("classification needs at least 2 classes".into()));
            }
        }
        Ok(())
    }
}

/// Single-input feed-forward baseline.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub config: BaselineConfig,
    pub params: ParamSet,
    layers: Vec<Linear>,
}

impl BaselineModel {
    pub fn new(config: BaselineConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let outputs = config.task.outputs();
        let layers = match config.kind {
            BaselineKind::Logreg => vec![Linear::register(&mut params, rng, "base.out", config.inputs, outputs)?],
            BaselineKind::Mlp => vec![
                Linear::register(&mut params, rng, "base.h0", config.inputs, config.hidden)?,
                Linear::register(&mut params, rng, "base.h1", config.hidden, config.hidden)?,
                Linear::register(&mut params, rng, "base.out", config.hidden, outputs)?,
            ],
        };
        Ok(Self { config, params, layers })
    }

    /// Logits or regression values.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        let width = x.shape().get(1).copied();
        if x.shape().len() != 2 || width != Some(self.config.inputs) {
            return Err(Error::shape(
                "baseline_forward",
                format!("expected [batch, {}], got {:?}", self.config.inputs, x.shape()),
            ));
        }
        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        let mut h = *x;
        for layer in hidden {
            h = layer.forward(p, &h)?.relu()?;
        }
        last.forward(p, &h)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = tape.freeze(&self.params)?;
        Ok(self.forward(&p, &tape.constant(x.clone())?)?.value())
    }
}

struct BaselineLearner {
    model: BaselineModel,
    opt: Box<dyn Optimizer + Send>,
    weight_decay: f64,
    labels: Labels,
    fit_x: Tensor,
    val_x: Tensor,
}

impl Learner for BaselineLearner {
    type Snapshot = ParamSet;

    fn step(&mut self, batch: &[usize], digests: bool) -> Result<(f64, Option<StepDigests>)> {
        let before = digests.then(|| self.model.params.digest());
        let targets = self.labels.batch(batch);
        let objective = self.labels.objective(&targets);
        let tape = Tape::new();
        let p = tape.bind(&self.model.params)?;
        let y = self.model.forward(&p, &tape.constant(self.fit_x.select_rows(batch))?)?;
        let loss = objective.evaluate(&y)?;
        let total = loss.add(&l2_penalty(&tape, &self.model.params, &p, self.weight_decay)?)?;
        let grads = tape.backward(total)?;
        p.accumulate(&grads, &mut self.model.params);
        self.opt.step(&mut self.model.params)?;
        let record = before.map(|b| StepDigests {
            model_mid: b.clone(),
            model_before: b,
            estimator_before: None,
            estimator_mid: None,
            model_after: self.model.params.digest(),
            estimator_after: None,
        });
        Ok((loss.item()?, record))
    }

    fn val_loss(&self) -> Result<f64> {
        let targets = self.labels.val();
        let objective = self.labels.objective(&targets);
        let tape = Tape::new();
        let p = tape.freeze(&self.model.params)?;
        let y = self.model.forward(&p, &tape.constant(self.val_x.clone())?)?;
        objective.evaluate(&y)?.item()
    }

    fn snapshot(&self) -> ParamSet {
        self.model.params.clone()
    }

    fn restore(&mut self, snapshot: ParamSet) -> Result<()> {
        self.model.params.assign_from(&snapshot)
    }

    fn digest(&self) -> String {
        self.model.params.digest()
    }
}

/// Trains a baseline on the `modalities` features of `train`. The linear
/// model is fit without weight decay; the MLP uses `tc.weight_decay`.
pub fn train_baseline(
    train: &MultimodalDataset,
    kind: BaselineKind,
    modalities: Modalities,
    task: Task,
    tc: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    train_baseline_with(train, kind, modalities, task, tc, seed, &mut Hooks::default())
}

pub fn train_baseline_with(
    train: &MultimodalDataset,
    kind: BaselineKind,
    modalities: Modalities,
    task: Task,
    tc: &TrainConfig,
    seed: u64,
    hooks: &mut Hooks,
) -> Result<TrainedModel> {
    tc.validate()?;
    let config = BaselineConfig::new(kind, modalities.width(train), task);
    config.validate()?;
    let (fit_ds, val_ds) = carve_validation(train, task, tc.val_frac, seed)?;
    let labels = Labels::new(task, &fit_ds, &val_ds, tc)?;
    let root = Rng::new(seed);
    let model = BaselineModel::new(config, &mut root.derive("init-model"))?;
    let scaler = labels.scaler();
    let mut learner = BaselineLearner {
        model,
        opt: optim::build(tc.optimizer, tc.lr),
        weight_decay: match kind {
            BaselineKind::Logreg => 0.0,
            BaselineKind::Mlp => tc.weight_decay,
        },
        labels,
        fit_x: modalities.features(&fit_ds)?,
        val_x: modalities.features(&val_ds)?,
    };
    let history = fit(&mut learner, fit_ds.len(), tc, &mut root.derive("shuffle"), hooks)?;
    Ok(TrainedModel {
        network: Network::Baseline(learner.model),
        modalities,
        scaler,
        features: None,
        window: None,
        history,
        seed,
    })
}
