//! Task losses and regularizers.
//!
//! All losses are mean-reduced over the batch so that learning rates and the
//! mutual-information weight do not depend on batch size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamKind, ParamSet, Tape, Tensor, Var};

/// Floor applied to the true-class probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_GAMMA: f64 = 2.0;

/// Per-class loss weights `α(c) = N / (K · N_c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
}

impl ClassWeights {
    /// All-ones weights (unweighted loss).
    pub fn uniform(n_classes: usize) -> Self {
        Self {
            weights: vec![1.0; n_classes],
        }
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        class_weights(counts)
    }

    /// Counts the labels of a training split and derives weights from them.
    pub fn from_labels(labels: &[usize], n_classes: usize) -> Result<Self> {
        let mut counts = vec![0usize; n_classes];
        for &l in labels {
            if l >= n_classes {
                return Err(Error::Data(format!(
                    "label {l} outside {n_classes} classes"
                )));
            }
            counts[l] += 1;
        }
        class_weights(&counts)
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }
}

pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::Data("no classes to weight".into()));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!(
            "class {c} has no training samples; cannot weight an unseen class"
        )));
    }
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(ClassWeights {
        weights: counts
            .iter()
            .map(|&nc| n as f64 / (k * nc as f64))
            .collect(),
    })
}

/// Class-weighted focal loss on predicted probabilities `[n, c]`.
///
/// Mean over samples of `-α_t (1 - p_t)^γ log p_t`, where `p_t` is the
/// probability of the true class clamped to `[PROB_FLOOR, 1]`.
pub fn focal_loss<'t>(
    probs: &Var<'t>,
    targets: &[usize],
    weights: &ClassWeights,
    gamma: f64,
) -> Result<Var<'t>> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("focal gamma must be >= 0, got {gamma}")));
    }
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::shape(
            "focal_loss",
            format!("probabilities {shape:?} for {} targets", targets.len()),
        ));
    }
    let c = shape[1];
    if weights.n_classes() != c {
        return Err(Error::shape(
            "focal_loss",
            format!("{} class weights for {c} classes", weights.n_classes()),
        ));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Data(format!("target {t} outside {c} classes")));
    }
    {
        let v = probs.value();
        for (i, row) in v.data().chunks(c).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::domain(
                    "focal_loss",
                    format!("row {i} sums to {s}, not 1"),
                ));
            }
        }
    }
    let tape = probs.tape();
    let p_t = probs.pick(targets)?.clamp(PROB_FLOOR, 1.0)?;
    let alpha = tape.constant(Tensor::vector(
        targets.iter().map(|&t| weights.weights[t]).collect(),
    ))?;
    let nll = p_t.log()?.neg()?;
    let weighted = if gamma == 0.0 {
        nll
    } else {
        let modulating = p_t.neg()?.add_scalar(1.0)?.powf(gamma)?;
        modulating.mul(&nll)?
    };
    alpha.mul(&weighted)?.mean()
}

/// Softmax over logits followed by [`focal_loss`].
pub fn focal_loss_from_logits<'t>(
    logits: &Var<'t>,
    targets: &[usize],
    weights: &ClassWeights,
    gamma: f64,
) -> Result<Var<'t>> {
    focal_loss(&logits.softmax()?, targets, weights, gamma)
}

/// `(λ/2) Σ θ²` over every weight matrix of `params`; biases are excluded.
pub fn l2_penalty<'t>(
    tape: &'t Tape,
    params: &ParamSet,
    bound: &Bound<'t>,
    lambda: f64,
) -> Result<Var<'t>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("weight decay must be >= 0, got {lambda}")));
    }
    let mut total = tape.scalar(0.0)?;
    if lambda == 0.0 {
        return Ok(total);
    }
    for (name, p) in params.iter() {
        if p.kind == ParamKind::Weight {
            total = total.add(&bound.get(name)?.square()?.sum()?)?;
        }
    }
    total.scale(lambda / 2.0)
}

/// Mean squared error; `target` is reshaped to `pred`'s shape.
pub fn mse_loss<'t>(pred: &Var<'t>, target: &Var<'t>) -> Result<Var<'t>> {
    let (ps, ts) = (pred.shape(), target.shape());
    let n: usize = ps.iter().product();
    if n == 0 || ps.is_empty() {
        return Err(Error::shape("mse_loss", "empty input"));
    }
    if n != ts.iter().product::<usize>() {
        return Err(Error::shape("mse_loss", format!("{ps:?} vs {ts:?}")));
    }
    pred.sub(&target.reshape(&ps)?)?.square()?.mean()
}

/// [`mse_loss`] on plain slices.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::shape("mse_loss", "empty input"));
    }
    let tape = Tape::new();
    let p = tape.constant(Tensor::vector(pred.to_vec()))?;
    let t = tape.constant(Tensor::vector(target.to_vec()))?;
    mse_loss(&p, &t)?.item()
}

/// [`focal_loss`] evaluated on a probability matrix.
pub fn focal_loss_value(
    probs: &Tensor,
    targets: &[usize],
    weights: &ClassWeights,
    gamma: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let p = tape.constant(probs.clone())?;
    focal_loss(&p, targets, weights, gamma)?.item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, ParamKind, Rng, DEFAULT_EPS};
    use proptest::prelude::*;

    fn binary(pt: f64) -> Tensor {
        Tensor::new(&[1, 2], vec![pt, 1.0 - pt]).unwrap()
    }

    #[test]
    fn class_weight_examples() {
        assert_eq!(class_weights(&[50, 50]).unwrap().weights, vec![1.0, 1.0]);
        let w = class_weights(&[10, 90]).unwrap().weights;
        assert!((w[0] - 5.0).abs() < 1e-12);
        assert!((w[1] - 100.0 / 180.0).abs() < 1e-12);
        // ICDR-0 share of the retinal image set: 16266 images, 5 grades, 15210 of grade 0.
        let mut counts = vec![15210, 500, 300, 200, 56];
        let total: usize = counts.iter().sum();
        counts[4] += 16266 - total;
        let w0 = class_weights(&counts).unwrap().weights[0];
        assert!((w0 - 16266.0 / (5.0 * 15210.0)).abs() < 1e-15);
        assert!((w0 - 0.2139).abs() < 5e-5);
    }

    #[test]
    fn unseen_class_cannot_be_weighted() {
        let e = class_weights(&[3, 0, 2]).unwrap_err();
        assert!(e.to_string().contains("class 1"));
    }

    #[test]
    fn focal_examples() {
        let w = ClassWeights::uniform(2);
        let ce = focal_loss_value(&binary(0.5), &[0], &w, 0.0).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-15);
        assert_eq!(focal_loss_value(&binary(1.0), &[0], &w, 2.0).unwrap(), 0.0);
        let v = focal_loss_value(&binary(0.9), &[0], &w, 2.0).unwrap();
        assert!((v - 0.01 * -(0.9f64.ln())).abs() < 1e-15);
        assert!((v - 1.0536e-3).abs() < 1e-7);
    }

    #[test]
    fn focal_rejects_bad_input() {
        let w = ClassWeights::uniform(2);
        assert!(focal_loss_value(&binary(0.5), &[2], &w, 2.0).is_err());
        let bad = Tensor::new(&[1, 2], vec![0.5, 0.6]).unwrap();
        assert!(focal_loss_value(&bad, &[0], &w, 2.0).is_err());
    }

    #[test]
    fn l2_examples() {
        let mut set = ParamSet::new();
        set.insert("w", Tensor::vector(vec![1.0, 2.0]), ParamKind::Weight).unwrap();
        set.insert("b", Tensor::vector(vec![10.0]), ParamKind::Bias).unwrap();
        let tape = Tape::new();
        let b = tape.bind(&set).unwrap();
        assert_eq!(l2_penalty(&tape, &set, &b, 0.0).unwrap().item().unwrap(), 0.0);
        assert_eq!(l2_penalty(&tape, &set, &b, 1.0).unwrap().item().unwrap(), 2.5);
    }

    #[test]
    fn l2_gradient_is_lambda_theta() {
        let mut set = ParamSet::new();
        let mut rng = Rng::new(11);
        set.insert("w", Tensor::vector(rng.normals(6)), ParamKind::Weight).unwrap();
        let lambda = 0.37;
        let tape = Tape::new();
        let b = tape.bind(&set).unwrap();
        let loss = l2_penalty(&tape, &set, &b, lambda).unwrap();
        let g = tape.backward(loss).unwrap();
        let grad = g.wrt(b.get("w").unwrap()).unwrap();
        for (gv, t) in grad.iter().zip(set.get("w").unwrap().data()) {
            assert!((gv - lambda * t).abs() < 1e-10);
        }
        let check = finite_diff_check(&set, DEFAULT_EPS, |tape, p| {
            l2_penalty(tape, &set, p, lambda)
        })
        .unwrap();
        assert!(check.max_rel_error < 1e-8);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(mse(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 2.5);
        assert!(mse(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn weights_invariant_to_count_scaling(counts in prop::collection::vec(1usize..500, 2..6), k in 2usize..20) {
            let a = class_weights(&counts).unwrap();
            let scaled: Vec<usize> = counts.iter().map(|c| c * k).collect();
            let b = class_weights(&scaled).unwrap();
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn focal_non_increasing_in_pt(p1 in 0.001f64..0.999, p2 in 0.001f64..0.999, gamma in 0.0f64..5.0) {
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            let w = ClassWeights::uniform(2);
            let l_lo = focal_loss_value(&binary(lo), &[0], &w, gamma).unwrap();
            let l_hi = focal_loss_value(&binary(hi), &[0], &w, gamma).unwrap();
            prop_assert!(l_hi <= l_lo + 1e-15);
        }
    }
}
