//! Contrastive log-ratio upper bound (vCLUB) on mutual information.
//!
//! A diagonal Gaussian `q(b|a) = N(μ(a), diag(exp(logvar(a))))` is fit by
//! maximum likelihood on paired samples. The bound is
//!
//! ```text
//! vCLUB = 1/N² Σ_i Σ_j [log q(b_i|a_i) − log q(b_j|a_i)]
//! ```
//!
//! For a Gaussian `q` the normalizer and the log-variance terms cancel inside
//! each log-ratio, and the inner mean over `j` only needs the first two batch
//! moments of `b`, so the batched evaluation is `O(N·d)` instead of `O(N²·d)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::optim::Optimizer;
use crate::numerics::{Bound, Linear, ParamSet, Rng, Tape, Tensor, Var};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Variational network `q_θ(b|a)` used by the bound.
#[derive(Debug, Clone)]
pub struct ClubEstimator {
    pub params: ParamSet,
    mu_hidden: Linear,
    mu_out: Linear,
    logvar_hidden: Linear,
    logvar_out: Linear,
    a_dim: usize,
    b_dim: usize,
}

impl ClubEstimator {
    pub fn new(a_dim: usize, b_dim: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        let mu_hidden = Linear::register(&mut params, rng, "club.mu.0", a_dim, hidden)?;
        let mu_out = Linear::register(&mut params, rng, "club.mu.1", hidden, b_dim)?;
        let logvar_hidden = Linear::register(&mut params, rng, "club.logvar.0", a_dim, hidden)?;
        let logvar_out = Linear::register(&mut params, rng, "club.logvar.1", hidden, b_dim)?;
        Ok(Self {
            params,
            mu_hidden,
            mu_out,
            logvar_hidden,
            logvar_out,
            a_dim,
            b_dim,
        })
    }

    pub fn a_dim(&self) -> usize {
        self.a_dim
    }

    pub fn b_dim(&self) -> usize {
        self.b_dim
    }

    fn check(&self, a: &[usize], b: &[usize]) -> Result<()> {
        if a.len() != 2 || b.len() != 2 {
            return Err(Error::shape("club", format!("{a:?}, {b:?} are not matrices")));
        }
        if a[0] == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        if a[0] != b[0] {
            return Err(Error::shape("club", format!("{} vs {} rows", a[0], b[0])));
        }
        if a[1] != self.a_dim || b[1] != self.b_dim {
            return Err(Error::shape(
                "club",
                format!(
                    "estimator maps {} -> {}, got {} -> {}",
                    self.a_dim, self.b_dim, a[1], b[1]
                ),
            ));
        }
        Ok(())
    }

    /// Mean and clamped log-variance of `q(·|a)` for each row of `a`.
    pub fn gaussian<'t>(&self, p: &Bound<'t>, a: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let mu = self.mu_out.forward(p, &self.mu_hidden.forward(p, a)?.relu()?)?;
        let logvar = self
            .logvar_out
            .forward(p, &self.logvar_hidden.forward(p, a)?.relu()?)?
            .clamp(LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mu, logvar))
    }

    /// `log q(b_i | a_i)` per row, shape `[N]`.
    pub fn paired_log_density<'t>(
        &self,
        p: &Bound<'t>,
        a: &Var<'t>,
        b: &Var<'t>,
    ) -> Result<Var<'t>> {
        self.check(&a.shape(), &b.shape())?;
        let (mu, logvar) = self.gaussian(p, a)?;
        let sq = b.sub(&mu)?.square()?.mul(&logvar.neg()?.exp()?)?;
        sq.add(&logvar)?
            .add_scalar((2.0 * PI).ln())?
            .sum_last()?
            .scale(-0.5)
    }

    /// `1/N Σ_i log q(b_i|a_i)`, the quantity the estimator maximizes.
    pub fn loglik<'t>(&self, p: &Bound<'t>, a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        self.paired_log_density(p, a, b)?.mean()
    }

    /// Batched vCLUB estimate on paired rows of `a` and `b`.
    pub fn vclub<'t>(&self, p: &Bound<'t>, a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        self.check(&a.shape(), &b.shape())?;
        let (mu, logvar) = self.gaussian(p, a)?;
        let precision = logvar.neg()?.exp()?;
        let m1 = b.mean_axis(0)?;
        let m2 = b.square()?.mean_axis(0)?;
        // Σ_k w_ik/2 · [m2_k − b_ik² − 2 μ_ik (m1_k − b_ik)], averaged over i
        let spread = b.square()?.neg()?.add_row(&m2)?;
        let centered = b.neg()?.add_row(&m1)?;
        let cross = mu.mul(&centered)?.scale(2.0)?;
        precision
            .mul(&spread.sub(&cross)?)?
            .scale(0.5)?
            .sum_last()?
            .mean()
    }
}

/// The double sum `1/N² Σ_i Σ_j [log_q(i,i) − log_q(i,j)]`, where
/// `log_q(i, j)` is `log q(b_j | a_i)`.
pub fn contrastive_log_ratio(n: usize, log_q: impl Fn(usize, usize) -> f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let positive = log_q(i, i);
        for j in 0..n {
            total += positive - log_q(i, j);
        }
    }
    Ok(total / (n * n) as f64)
}

fn frozen<T>(est: &ClubEstimator, f: impl for<'t> FnOnce(&'t Tape, &Bound<'t>) -> Result<T>) -> Result<T> {
    let tape = Tape::new();
    let p = tape.freeze(&est.params)?;
    f(&tape, &p)
}

/// Diagonal-Gaussian `log q(b | a)` for a single pair.
pub fn log_density(a: &[f64], b: &[f64], est: &ClubEstimator) -> Result<f64> {
    frozen(est, |tape, p| {
        let av = tape.constant(Tensor::new(&[1, a.len()], a.to_vec())?)?;
        let bv = tape.constant(Tensor::new(&[1, b.len()], b.to_vec())?)?;
        let v = est.paired_log_density(p, &av, &bv)?.item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "log_density" })
        }
    })
}

pub fn vclub(a_batch: &Tensor, b_batch: &Tensor, est: &ClubEstimator) -> Result<f64> {
    frozen(est, |tape, p| {
        let a = tape.constant(a_batch.clone())?;
        let b = tape.constant(b_batch.clone())?;
        est.vclub(p, &a, &b)?.item()
    })
}

pub fn estimator_loglik(a_batch: &Tensor, b_batch: &Tensor, est: &ClubEstimator) -> Result<f64> {
    frozen(est, |tape, p| {
        let a = tape.constant(a_batch.clone())?;
        let b = tape.constant(b_batch.clone())?;
        est.loglik(p, &a, &b)?.item()
    })
}

/// The two halves of the mutual-information loss.
pub struct MiTerms<'t> {
    /// vCLUB(concat(S_a, S_b), S_c); weighted by λ in the fusion objective.
    pub model_term: Var<'t>,
    /// Negative estimator log-likelihood; minimized by estimator updates only.
    pub estimator_term: Var<'t>,
}

pub fn mi_loss<'t>(
    s_a: &Var<'t>,
    s_b: &Var<'t>,
    s_c: &Var<'t>,
    est: &ClubEstimator,
    p: &Bound<'t>,
) -> Result<MiTerms<'t>> {
    let specific = Var::concat(&[*s_a, *s_b])?;
    Ok(MiTerms {
        model_term: est.vclub(p, &specific, s_c)?,
        estimator_term: est.loglik(p, &specific, s_c)?.neg()?,
    })
}

/// One gradient-ascent step on the estimator log-likelihood with any optimizer.
/// Returns the log-likelihood before the step.
pub fn estimator_step(
    est: &mut ClubEstimator,
    a_batch: &Tensor,
    b_batch: &Tensor,
    opt: &mut dyn Optimizer,
) -> Result<f64> {
    let loglik = {
        let tape = Tape::new();
        let p = tape.bind(&est.params)?;
        let a = tape.constant(a_batch.clone())?;
        let b = tape.constant(b_batch.clone())?;
        let ll = est.loglik(&p, &a, &b)?;
        let value = ll.item()?;
        let grads = tape.backward(ll.neg()?)?;
        est.params.zero_grad();
        p.accumulate(&grads, &mut est.params);
        value
    };
    opt.step(&mut est.params)?;
    Ok(loglik)
}

/// Runs `steps` full-batch estimator updates; returns the log-likelihood
/// trace (value before each step).
pub fn fit_estimator(
    est: &mut ClubEstimator,
    a_batch: &Tensor,
    b_batch: &Tensor,
    steps: usize,
    opt: &mut dyn Optimizer,
) -> Result<Vec<f64>> {
    (0..steps)
        .map(|_| estimator_step(est, a_batch, b_batch, opt))
        .collect()
}

/// Plain gradient ascent on the estimator log-likelihood with step `lr`.
pub fn estimator_update(
    est: &mut ClubEstimator,
    a_batch: &Tensor,
    b_batch: &Tensor,
    lr: f64,
) -> Result<f64> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
    }
    let mut sgd = crate::numerics::optim::Sgd::new(lr);
    estimator_step(est, a_batch, b_batch, &mut sgd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(a_dim: usize, b_dim: usize) -> ClubEstimator {
        let mut est = ClubEstimator::new(a_dim, b_dim, 4, &mut Rng::new(0)).unwrap();
        for (_, p) in est.params.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        est
    }

    #[test]
    fn unit_gaussian_peak() {
        let est = zeroed(2, 3);
        let v = log_density(&[0.4, -1.0], &[0.0, 0.0, 0.0], &est).unwrap();
        assert!((v + 1.5 * (2.0 * PI).ln()).abs() < 1e-14);
        let one = zeroed(1, 1);
        let v = log_density(&[0.0], &[1.0], &one).unwrap();
        assert!((v - (-0.5 * (2.0 * PI).ln() - 0.5)).abs() < 1e-14);
        assert!((v + 1.4189).abs() < 1e-4);
    }

    #[test]
    fn logvar_is_clamped() {
        let mut est = zeroed(1, 1);
        est.params.get_mut("club.logvar.1.bias").unwrap().data_mut()[0] = 50.0;
        let v = log_density(&[0.0], &[0.0], &est).unwrap();
        assert!((v - (-0.5 * ((2.0 * PI).ln() + LOGVAR_MAX))).abs() < 1e-12);
    }

    #[test]
    fn stubbed_double_sum() {
        let table = [[-1.0, -3.0], [-4.0, -2.0]];
        let v = contrastive_log_ratio(2, |i, j| table[i][j]).unwrap();
        assert_eq!(v, 1.0);
        let loglik = (table[0][0] + table[1][1]) / 2.0;
        assert_eq!(loglik, -1.5);
        assert!(contrastive_log_ratio(0, |_, _| 0.0).is_err());
    }

    #[test]
    fn single_pair_vclub_is_exactly_zero() {
        let est = ClubEstimator::new(3, 2, 5, &mut Rng::new(4)).unwrap();
        let a = Tensor::new(&[1, 3], vec![0.2, -0.7, 1.3]).unwrap();
        let b = Tensor::new(&[1, 2], vec![1.1, -0.4]).unwrap();
        assert_eq!(vclub(&a, &b, &est).unwrap(), 0.0);
        let ll = estimator_loglik(&a, &b, &est).unwrap();
        assert_eq!(ll, log_density(a.data(), b.data(), &est).unwrap());
    }

    #[test]
    fn identical_targets_cancel() {
        let mut rng = Rng::new(9);
        let est = ClubEstimator::new(2, 2, 5, &mut rng).unwrap();
        let a = Tensor::new(&[4, 2], rng.normals(8)).unwrap();
        let b = Tensor::from_rows(&vec![vec![0.3, -2.0]; 4]).unwrap();
        assert!(vclub(&a, &b, &est).unwrap().abs() < 1e-12);
        // Duplicating a sample leaves the average likelihood unchanged.
        let a1 = a.select_rows(&[0]);
        let b1 = b.select_rows(&[0]);
        let a2 = a.select_rows(&[0, 0]);
        let b2 = b.select_rows(&[0, 0]);
        assert_eq!(
            estimator_loglik(&a1, &b1, &est).unwrap(),
            estimator_loglik(&a2, &b2, &est).unwrap()
        );
    }

    #[test]
    fn empty_and_mismatched_batches() {
        let est = ClubEstimator::new(2, 1, 3, &mut Rng::new(1)).unwrap();
        let a = Tensor::new(&[2, 2], vec![0.0; 4]).unwrap();
        let b = Tensor::new(&[2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(vclub(&a, &b, &est), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_step_leaves_parameters() {
        let mut rng = Rng::new(2);
        let mut est = ClubEstimator::new(1, 1, 4, &mut rng).unwrap();
        let before = est.params.clone();
        let a = Tensor::new(&[8, 1], rng.normals(8)).unwrap();
        let b = Tensor::new(&[8, 1], rng.normals(8)).unwrap();
        estimator_update(&mut est, &a, &b, 0.0).unwrap();
        for (name, p) in before.iter() {
            assert_eq!(p.value.data(), est.params.get(name).unwrap().data());
            assert_eq!(p.kind, est.params.kind(name).unwrap());
        }
    }
}
