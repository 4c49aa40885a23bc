//! Variational autoencoder for embedding extraction.
//!
//! Feed-forward encoder and decoder over flattened inputs. The embedding of
//! an input is the posterior mean `μ(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::optim::{self, OptimizerKind};
use crate::numerics::{Bound, Linear, ParamSet, Rng, Tape, Tensor, Var};
use crate::objectives::mse_loss;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub hidden: usize,
    /// Latent dimensionality `J`.
    pub latent: usize,
}

impl VaeConfig {
    pub fn new(input_dim: usize, latent: usize) -> Self {
        Self {
            input_dim,
            hidden: 64,
            latent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config("VAE dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub params: ParamSet,
    encoder: Linear,
    mu_head: Linear,
    logvar_head: Linear,
    decoder_hidden: Linear,
    decoder_out: Linear,
}

/// Source of the reparameterization noise `ε`.
pub enum Noise<'a> {
    /// `ε = 0`, so `z = μ`.
    Zero,
    Sample(&'a mut Rng),
}

#[derive(Debug, Clone, Copy)]
pub struct VaeOutput<'t> {
    pub x_hat: Var<'t>,
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
}

impl VaeModel {
    pub fn new(config: VaeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut set = ParamSet::new();
        let encoder = Linear::register(&mut set, rng, "vae.enc", c.input_dim, c.hidden)?;
        let mu_head = Linear::register(&mut set, rng, "vae.mu", c.hidden, c.latent)?;
        let logvar_head = Linear::register(&mut set, rng, "vae.logvar", c.hidden, c.latent)?;
        let decoder_hidden = Linear::register(&mut set, rng, "vae.dec", c.latent, c.hidden)?;
        let decoder_out = Linear::register(&mut set, rng, "vae.out", c.hidden, c.input_dim)?;
        Ok(Self {
            config,
            params: set,
            encoder,
            mu_head,
            logvar_head,
            decoder_hidden,
            decoder_out,
        })
    }

    fn check_input(&self, x: &[usize]) -> Result<()> {
        if x.len() != 2 || x[1] != self.config.input_dim || x[0] == 0 {
            return Err(Error::shape(
                "vae_forward",
                format!("expected [batch, {}], got {x:?}", self.config.input_dim),
            ));
        }
        Ok(())
    }

    /// Posterior mean and clamped log-variance.
    pub fn encode<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.check_input(&x.shape())?;
        let h = self.encoder.forward(p, x)?.relu()?;
        let mu = self.mu_head.forward(p, &h)?;
        let logvar = self.logvar_head.forward(p, &h)?.clamp(LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mu, logvar))
    }

    pub fn decode<'t>(&self, p: &Bound<'t>, z: &Var<'t>) -> Result<Var<'t>> {
        let h = self.decoder_hidden.forward(p, z)?.relu()?;
        self.decoder_out.forward(p, &h)
    }

    /// `z = μ + σ ⊙ ε`, `x̂ = decode(z)`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>, noise: Noise<'_>) -> Result<VaeOutput<'t>> {
        let (mu, logvar) = self.encode(p, x)?;
        let z = match noise {
            Noise::Zero => mu,
            Noise::Sample(rng) => {
                let shape = mu.shape();
                let n: usize = shape.iter().product();
                let eps = x.tape().constant(Tensor::new(&shape, rng.normals(n))?)?;
                mu.add(&logvar.scale(0.5)?.exp()?.mul(&eps)?)?
            }
        };
        Ok(VaeOutput {
            x_hat: self.decode(p, &z)?,
            mu,
            logvar,
        })
    }
}

/// Mean squared reconstruction error over pixels and batch.
pub fn recon_loss<'t>(x: &Var<'t>, x_hat: &Var<'t>) -> Result<Var<'t>> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape("recon_loss", format!("{:?} vs {:?}", x.shape(), x_hat.shape())));
    }
    mse_loss(x_hat, x)
}

/// `−½ Σ_j (1 + log σ² − μ² − σ²)`, averaged over the batch.
pub fn kl_divergence<'t>(mu: &Var<'t>, logvar: &Var<'t>) -> Result<Var<'t>> {
    if mu.shape() != logvar.shape() {
        return Err(Error::shape("kl_divergence", format!("{:?} vs {:?}", mu.shape(), logvar.shape())));
    }
    let inner = logvar.add_scalar(1.0)?.sub(&mu.square()?)?.sub(&logvar.exp()?)?;
    let per_sample = if mu.shape().len() > 1 { inner.sum_last()? } else { inner.sum()? };
    per_sample.mean()?.scale(-0.5)
}

/// Reconstruction plus KL, unweighted.
pub fn vae_loss<'t>(x: &Var<'t>, out: &VaeOutput<'t>) -> Result<Var<'t>> {
    recon_loss(x, &out.x_hat)?.add(&kl_divergence(&out.mu, &out.logvar)?)
}

/// Deterministic embeddings `μ(x)`.
pub fn vae_encode(model: &VaeModel, x: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let p = tape.freeze(&model.params)?;
    let (mu, _) = model.encode(&p, &tape.constant(x.clone())?)?;
    Ok(mu.value())
}

/// Total loss on `x` with zero noise.
pub fn vae_eval_loss(model: &VaeModel, x: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let p = tape.freeze(&model.params)?;
    let xv = tape.constant(x.clone())?;
    let out = model.forward(&p, &xv, Noise::Zero)?;
    vae_loss(&xv, &out)?.item()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Minibatch training with sampled noise. Returns the mean training loss of
/// each epoch.
pub fn train_vae(model: &mut VaeModel, x: &Tensor, cfg: &VaeTrainConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    model.check_input(x.shape())?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let mut opt = optim::build(cfg.optimizer, cfg.lr);
    let n = x.shape()[0];
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(chunk);
            let tape = Tape::new();
            let p = tape.bind(&model.params)?;
            let xv = tape.constant(xb)?;
            let out = model.forward(&p, &xv, Noise::Sample(rng))?;
            let loss = vae_loss(&xv, &out)?;
            total += loss.item()? * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            p.accumulate(&grads, &mut model.params);
            opt.step(&mut model.params)?;
        }
        let mean = total / n as f64;
        log::debug!("vae epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    Ok(history)
}

/// Synthetic grayscale images driven by two factors in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct FactorImages {
    /// `[n, side²]`, row-major pixels in `[0, 1]`.
    pub pixels: Tensor,
    /// Illumination of the whole scene; the dominant factor.
    pub factor_1: Vec<f64>,
    /// Column of a small bright spot.
    pub factor_2: Vec<f64>,
    pub side: usize,
}

/// `n` images of a fixed smooth scene lit with intensity `factor_1`, plus a
/// faint Gaussian spot whose column follows `factor_2`.
pub fn synth_factor_images(n: usize, side: usize, seed: u64) -> Result<FactorImages> {
    if n == 0 || side < 4 {
        return Err(Error::Config("need n >= 1 and side >= 4".into()));
    }
    let mut rng = Rng::new(seed).derive("factor-images");
    let s = side as f64;
    let scene: Vec<f64> = (0..side * side)
        .map(|i| {
            let (r, c) = ((i / side) as f64 / s, (i % side) as f64 / s);
            0.45 + 0.25 * (std::f64::consts::TAU * (r + 0.5 * c)).sin() + 0.1 * (2.0 * c - 1.0)
        })
        .collect();
    let width = s / 8.0;
    let mut pixels = Vec::with_capacity(n * side * side);
    let mut f1 = Vec::with_capacity(n);
    let mut f2 = Vec::with_capacity(n);
    for _ in 0..n {
        let light = rng.uniform(0.0, 1.0);
        let spot = rng.uniform(0.0, 1.0);
        let cx = 1.5 + spot * (s - 4.0);
        let cy = (s - 1.0) / 2.0;
        for (i, base) in scene.iter().enumerate() {
            let d2 = ((i % side) as f64 - cx).powi(2) + ((i / side) as f64 - cy).powi(2);
            let v = (0.2 + 0.8 * light) * base + 0.3 * (-d2 / (2.0 * width * width)).exp();
            pixels.push(v.clamp(0.0, 1.0));
        }
        f1.push(light);
        f2.push(spot);
    }
    Ok(FactorImages {
        pixels: Tensor::new(&[n, side * side], pixels)?,
        factor_1: f1,
        factor_2: f2,
        side,
    })
}

/// In-sample R² of an ordinary least-squares fit (with intercept) of
/// `target` on the columns of `features`.
pub fn linear_probe_r2(features: &Tensor, target: &[f64]) -> Result<f64> {
    let (n, d) = (features.shape()[0], features.shape()[1]);
    if n != target.len() || n <= d + 1 {
        return Err(Error::shape("linear_probe", format!("{n} samples, {d} features")));
    }
    let k = d + 1;
    // normal equations with a small ridge for conditioning
    let mut a = vec![vec![0.0; k + 1]; k];
    for i in 0..n {
        let mut row = features.row(i).to_vec();
        row.push(1.0);
        for r in 0..k {
            for c in 0..k {
                a[r][c] += row[r] * row[c];
            }
            a[r][k] += row[r] * target[i];
        }
    }
    for (r, row) in a.iter_mut().enumerate().take(d) {
        row[r] += 1e-9;
    }
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap_or(col);
        a.swap(col, piv);
        if a[col][col].abs() < 1e-300 {
            return Err(Error::domain("linear_probe", "singular design"));
        }
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..k).map(|r| a[r][k] / a[r][r]).collect();
    let pred: Vec<f64> = (0..n)
        .map(|i| features.row(i).iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() + beta[d])
        .collect();
    crate::metrics::r2_score(&pred, target)
}
