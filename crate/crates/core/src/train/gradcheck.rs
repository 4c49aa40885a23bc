use std::fmt;
use std::str::FromStr;

use super::baseline::{BaselineConfig, BaselineKind, BaselineModel};
use crate::club::mi_loss;
use crate::error::{Error, Result};
use crate::fusion::{fusion_loss, FusionConfig, FusionModel, Objective, Task};
use crate::numerics::{finite_diff_check, GradCheck, ParamSet, Rng, Tensor};
use crate::objectives::{l2_penalty, ClassWeights};
use crate::vae::{vae_loss, Noise, VaeConfig, VaeModel};

/// Loss compositions covered by `gradcheck`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    /// Class-weighted focal loss plus L2 on the MLP baseline.
    Baseline,
    /// Fusion loss with the MI term and L2, plus the estimator likelihood.
    Fusion,
    /// Temporal regression fusion loss.
    Temporal,
    /// Reconstruction plus KL with sampled noise.
    Vae,
}

impl GradTarget {
    pub const ALL: [GradTarget; 4] = [GradTarget::Baseline, GradTarget::Fusion, GradTarget::Temporal, GradTarget::Vae];
}

impl FromStr for GradTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "fusion" => Ok(Self::Fusion),
            "temporal" => Ok(Self::Temporal),
            "vae" => Ok(Self::Vae),
            other => Err(Error::Config(format!(
                "unknown gradcheck model {other:?}; expected baseline, fusion, temporal or vae"
            ))),
        }
    }
}

impl fmt::Display for GradTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::Fusion => "fusion",
            Self::Temporal => "temporal",
            Self::Vae => "vae",
        })
    }
}

fn jitter_biases(params: &mut ParamSet, rng: &mut Rng) {
    for (name, p) in params.iter_mut() {
        if name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
    }
}

fn batch(rng: &mut Rng, n: usize, d: usize) -> Result<Tensor> {
    Tensor::new(&[n, d], rng.normals(n * d))
}

fn small_fusion(d_a: usize, d_b: usize, task: Task) -> FusionConfig {
    let mut c = FusionConfig::new(d_a, d_b, task);
    c.n_tokens = 3;
    c.d_tok = 4;
    c.d_attn = 4;
    c.d_common = 5;
    c.d_specific = 4;
    c.d_hidden = 6;
    c.club_hidden = 5;
    c
}

fn worst(a: GradCheck, b: GradCheck) -> GradCheck {
    let entries = a.entries + b.entries;
    let mut out = if b.max_rel_error > a.max_rel_error { b } else { a };
    out.entries = entries;
    out
}

fn fusion_check(config: FusionConfig, eps: f64, rng: &mut Rng) -> Result<GradCheck> {
    let task = config.task;
    let (d_a, d_b) = (config.input_width_a(), config.input_width_b());
    let mut model = FusionModel::new(config, rng)?;
    jitter_biases(&mut model.params, rng);
    let mut est = model.new_estimator(rng)?;
    jitter_biases(&mut est.params, rng);
    let a = batch(rng, 5, d_a)?;
    let b = batch(rng, 5, d_b)?;
    let classes = [0usize, 2, 1, 2, 0];
    let values = [0.5, -1.0, 0.2, 1.3, -0.4];
    let weights = ClassWeights::from_counts(&[2, 1, 2])?;
    let objective = match task {
        Task::Classification { .. } => Objective::Focal {
            targets: &classes,
            weights: &weights,
            gamma: 2.0,
        },
        Task::Regression => Objective::Mse { targets: &values },
    };
    let lambda = 0.5;
    let model_check = finite_diff_check(&model.params, eps, |tape, p| {
        let e = tape.freeze(&est.params)?;
        let out = model.forward(p, &tape.constant(a.clone())?, &tape.constant(b.clone())?)?;
        fusion_loss(&out, &objective, &est, &e, lambda)?.add(&l2_penalty(tape, &model.params, p, 1e-2)?)
    })?;
    let estimator_check = finite_diff_check(&est.params, eps, |tape, q| {
        let p = tape.freeze(&model.params)?;
        let out = model.forward(&p, &tape.constant(a.clone())?, &tape.constant(b.clone())?)?;
        Ok(mi_loss(&out.s_a, &out.s_b, &out.s_c, &est, q)?.estimator_term)
    })?;
    Ok(worst(model_check, estimator_check))
}

/// Central-difference check of one loss composition on a small random
/// instance.
pub fn gradcheck_target(target: GradTarget, eps: f64, seed: u64) -> Result<GradCheck> {
    let mut rng = Rng::new(seed).derive(&format!("gradcheck-{target}"));
    match target {
        GradTarget::Baseline => {
            let mut config = BaselineConfig::new(BaselineKind::Mlp, 4, Task::Classification { n_classes: 3 });
            config.hidden = 6;
            let mut model = BaselineModel::new(config, &mut rng)?;
            jitter_biases(&mut model.params, &mut rng);
            let x = batch(&mut rng, 6, 4)?;
            let targets = [0usize, 1, 2, 2, 1, 2];
            let weights = ClassWeights::from_labels(&targets, 3)?;
            finite_diff_check(&model.params, eps, |tape, p| {
                let logits = model.forward(p, &tape.constant(x.clone())?)?;
                let obj = Objective::Focal {
                    targets: &targets,
                    weights: &weights,
                    gamma: 2.0,
                };
                obj.evaluate(&logits)?.add(&l2_penalty(tape, &model.params, p, 1e-2)?)
            })
        }
        GradTarget::Fusion => fusion_check(small_fusion(3, 4, Task::Classification { n_classes: 3 }), eps, &mut rng),
        GradTarget::Temporal => fusion_check(small_fusion(2, 3, Task::Regression).temporal(3), eps, &mut rng),
        GradTarget::Vae => {
            let mut model = VaeModel::new(
                VaeConfig {
                    input_dim: 6,
                    hidden: 5,
                    latent: 2,
                },
                &mut rng,
            )?;
            jitter_biases(&mut model.params, &mut rng);
            let x = Tensor::new(&[4, 6], (0..24).map(|_| rng.uniform(0.0, 1.0)).collect())?;
            let noise_seed = rng.derive("noise").seed();
            finite_diff_check(&model.params, eps, |tape, p| {
                let mut noise = Rng::new(noise_seed);
                let xv = tape.constant(x.clone())?;
                let out = model.forward(p, &xv, Noise::Sample(&mut noise))?;
                vae_loss(&xv, &out)
            })
        }
    }
}
