use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamSet;

/// Applies the gradients held in a [`ParamSet`]'s slots, then clears them.
pub trait Optimizer {
    fn step(&mut self, params: &mut ParamSet) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

pub fn build(kind: OptimizerKind, lr: f64) -> Box<dyn Optimizer + Send> {
    match kind {
        OptimizerKind::Sgd => Box::new(Sgd::new(lr)),
        OptimizerKind::Adam => Box::new(Adam::new(lr)),
    }
}

fn grads_finite(params: &ParamSet) -> Result<()> {
    for (name, p) in params.iter() {
        if let Some(g) = p.value.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Graph(format!("non-finite gradient for {name}")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        grads_finite(params)?;
        for (_, p) in params.iter_mut() {
            let g = p.value.grad().map(<[f64]>::to_vec);
            if let Some(g) = g {
                for (v, gv) in p.value.data_mut().iter_mut().zip(&g) {
                    *v -= self.lr * gv;
                }
            }
            p.value.zero_grad();
        }
        Ok(())
    }
}

/// Adaptive moment estimation with the usual constants (0.9, 0.999, 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        grads_finite(params)?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = p.value.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (i, x) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.value.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamKind, Tape, Tensor};

    fn minimize(opt: &mut dyn Optimizer) -> f64 {
        let mut set = ParamSet::new();
        set.insert("x", Tensor::vector(vec![3.0, -2.0]), ParamKind::Weight).unwrap();
        for _ in 0..500 {
            let tape = Tape::new();
            let b = tape.bind(&set).unwrap();
            let loss = b.get("x").unwrap().square().unwrap().sum().unwrap();
            let g = tape.backward(loss).unwrap();
            b.accumulate(&g, &mut set);
            opt.step(&mut set).unwrap();
        }
        set.get("x").unwrap().data().iter().map(|v| v.abs()).sum()
    }

    #[test]
    fn both_optimizers_descend() {
        assert!(minimize(&mut Sgd::new(0.1)) < 1e-6);
        assert!(minimize(&mut Adam::new(0.05)) < 1e-2);
    }
}
