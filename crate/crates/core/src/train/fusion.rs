use super::experiment::Modalities;
use super::fit::{carve_validation, fit, Labels, Learner};
use super::model::{Network, TrainedModel};
use super::{Hooks, MiSchedule, StepDigests, TrainConfig};
use crate::club::{estimator_step, mi_loss, ClubEstimator};
use crate::data::MultimodalDataset;
use crate::error::{Error, Result};
use crate::fusion::{fusion_loss, FusionConfig, FusionModel};
use crate::numerics::optim::{self, Optimizer};
use crate::numerics::{ParamSet, Rng, Tape, Tensor, Var};
use crate::objectives::l2_penalty;

struct FusionLearner {
    model: FusionModel,
    estimator: ClubEstimator,
    model_opt: Box<dyn Optimizer + Send>,
    estimator_opt: Box<dyn Optimizer + Send>,
    lambda: f64,
    schedule: MiSchedule,
    weight_decay: f64,
    labels: Labels,
    fit_a: Tensor,
    fit_b: Tensor,
    val_a: Tensor,
    val_b: Tensor,
}

impl FusionLearner {
    /// `concat(S_a, S_b)` and `S_c` under the current model, as constants.
    fn branch_values(&self, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let p = tape.freeze(&self.model.params)?;
        let out = self.model.forward(&p, &tape.constant(a.clone())?, &tape.constant(b.clone())?)?;
        Ok((Var::concat(&[out.s_a, out.s_b])?.value(), out.s_c.value()))
    }

    fn digests(&self) -> (String, Option<String>) {
        (self.model.params.digest(), Some(self.estimator.params.digest()))
    }
}

impl Learner for FusionLearner {
    type Snapshot = (ParamSet, ParamSet);

    fn step(&mut self, batch: &[usize], digests: bool) -> Result<(f64, Option<StepDigests>)> {
        let before = digests.then(|| self.digests());
        let a = self.fit_a.select_rows(batch);
        let b = self.fit_b.select_rows(batch);
        let use_mi = self.lambda > 0.0;
        if use_mi && self.schedule == MiSchedule::Alternating {
            let (specific, common) = self.branch_values(&a, &b)?;
            estimator_step(&mut self.estimator, &specific, &common, self.estimator_opt.as_mut())?;
        }
        let mid = digests.then(|| self.digests());

        let targets = self.labels.batch(batch);
        let objective = self.labels.objective(&targets);
        let summed = use_mi && self.schedule == MiSchedule::Summed;
        let tape = Tape::new();
        let p = tape.bind(&self.model.params)?;
        let q = if summed {
            tape.bind(&self.estimator.params)?
        } else {
            tape.freeze(&self.estimator.params)?
        };
        let out = self.model.forward(&p, &tape.constant(a)?, &tape.constant(b)?)?;
        let loss = fusion_loss(&out, &objective, &self.estimator, &q, self.lambda)?;
        let mut total = loss.add(&l2_penalty(&tape, &self.model.params, &p, self.weight_decay)?)?;
        if summed {
            total = total.add(&mi_loss(&out.s_a, &out.s_b, &out.s_c, &self.estimator, &q)?.estimator_term)?;
        }
        let grads = tape.backward(total)?;
        p.accumulate(&grads, &mut self.model.params);
        self.model_opt.step(&mut self.model.params)?;
        if summed {
            q.accumulate(&grads, &mut self.estimator.params);
            self.estimator_opt.step(&mut self.estimator.params)?;
        }

        let record = match (before, mid) {
            (Some((model_before, estimator_before)), Some((model_mid, estimator_mid))) => {
                let (model_after, estimator_after) = self.digests();
                Some(StepDigests {
                    model_before,
                    estimator_before,
                    model_mid,
                    estimator_mid,
                    model_after,
                    estimator_after,
                })
            }
            _ => None,
        };
        Ok((loss.item()?, record))
    }

    fn val_loss(&self) -> Result<f64> {
        let targets = self.labels.val();
        let objective = self.labels.objective(&targets);
        let tape = Tape::new();
        let p = tape.freeze(&self.model.params)?;
        let out = self
            .model
            .forward(&p, &tape.constant(self.val_a.clone())?, &tape.constant(self.val_b.clone())?)?;
        objective.evaluate(&out.y)?.item()
    }

    fn snapshot(&self) -> Self::Snapshot {
        (self.model.params.clone(), self.estimator.params.clone())
    }

    fn restore(&mut self, (model, estimator): Self::Snapshot) -> Result<()> {
        self.model.params.assign_from(&model)?;
        self.estimator.params.assign_from(&estimator)
    }

    fn digest(&self) -> String {
        self.model.params.digest()
    }
}

/// Trains the fusion network on `train` with early stopping on a held-out
/// part of it. The MI weight is taken from `tc.lambda_mi`.
pub fn train_fusion(train: &MultimodalDataset, config: &FusionConfig, tc: &TrainConfig, seed: u64) -> Result<TrainedModel> {
    train_fusion_with(train, config, tc, seed, &mut Hooks::default())
}

pub fn train_fusion_with(
    train: &MultimodalDataset,
    config: &FusionConfig,
    tc: &TrainConfig,
    seed: u64,
    hooks: &mut Hooks,
) -> Result<TrainedModel> {
    tc.validate()?;
    let mut config = config.clone();
    config.lambda = tc.lambda_mi;
    config.validate()?;
    if train.dim_a() != config.input_width_a() || train.dim_b() != config.input_width_b() {
        return Err(Error::shape(
            "train_fusion",
            format!(
                "data widths ({}, {}) vs model inputs ({}, {})",
                train.dim_a(),
                train.dim_b(),
                config.input_width_a(),
                config.input_width_b()
            ),
        ));
    }
    let (fit_ds, val_ds) = carve_validation(train, config.task, tc.val_frac, seed)?;
    let labels = Labels::new(config.task, &fit_ds, &val_ds, tc)?;
    let root = Rng::new(seed);
    let model = FusionModel::new(config, &mut root.derive("init-model"))?;
    let estimator = model.new_estimator(&mut root.derive("init-estimator"))?;
    let scaler = labels.scaler();
    let mut learner = FusionLearner {
        model,
        estimator,
        model_opt: optim::build(tc.optimizer, tc.lr),
        estimator_opt: optim::build(tc.optimizer, tc.estimator_lr),
        lambda: tc.lambda_mi,
        schedule: tc.mi_schedule,
        weight_decay: tc.weight_decay,
        labels,
        fit_a: fit_ds.a_matrix()?,
        fit_b: fit_ds.b_matrix()?,
        val_a: val_ds.a_matrix()?,
        val_b: val_ds.b_matrix()?,
    };
    let history = fit(&mut learner, fit_ds.len(), tc, &mut root.derive("shuffle"), hooks)?;
    Ok(TrainedModel {
        network: Network::Fusion(learner.model),
        modalities: Modalities::Ab,
        scaler,
        features: None,
        window: None,
        history,
        seed,
    })
}
