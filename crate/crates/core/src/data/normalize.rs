use serde::{Deserialize, Serialize};

use super::MultimodalDataset;
use crate::error::{Error, Result};

/// Per-feature mean and population standard deviation of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean_a: Vec<f64>,
    pub std_a: Vec<f64>,
    pub mean_b: Vec<f64>,
    pub std_b: Vec<f64>,
}

fn moments(rows: impl Iterator<Item = Vec<f64>> + Clone, d: usize, n: f64) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for r in rows.clone() {
        for (m, v) in mean.iter_mut().zip(&r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(&r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

fn scale(values: &mut [f64], mean: &[f64], std: &[f64]) {
    for ((v, m), s) in values.iter_mut().zip(mean).zip(std) {
        if *s > 0.0 {
            *v = (*v - m) / s;
        }
    }
}

impl FeatureStats {
    pub fn fit(train: &MultimodalDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot normalize with an empty training split".into()));
        }
        let n = train.len() as f64;
        let (mean_a, std_a) = moments(train.records().iter().map(|r| r.a.clone()), train.dim_a(), n);
        let (mean_b, std_b) = moments(train.records().iter().map(|r| r.b.clone()), train.dim_b(), n);
        for (m, stds) in [("a", &std_a), ("b", &std_b)] {
            for (k, _) in stds.iter().enumerate().filter(|(_, s)| **s == 0.0) {
                log::warn!("feature {m}_{k} is constant on the training split; left unscaled");
            }
        }
        Ok(Self {
            mean_a,
            std_a,
            mean_b,
            std_b,
        })
    }

    /// `(x − μ)/σ` per feature; constant features are passed through.
    pub fn apply(&self, ds: &mut MultimodalDataset) -> Result<()> {
        if ds.dim_a() != self.mean_a.len() || ds.dim_b() != self.mean_b.len() {
            if ds.is_empty() {
                return Ok(());
            }
            return Err(Error::Data("dataset widths differ from the normalization statistics".into()));
        }
        for r in ds.records_mut() {
            scale(&mut r.a, &self.mean_a, &self.std_a);
            scale(&mut r.b, &self.mean_b, &self.std_b);
        }
        Ok(())
    }
}

/// Fits statistics on `train` only and applies them to `train` and every
/// dataset in `others`.
pub fn zscore_normalize(train: &mut MultimodalDataset, others: &mut [&mut MultimodalDataset]) -> Result<FeatureStats> {
    let stats = FeatureStats::fit(train)?;
    stats.apply(train)?;
    for ds in others.iter_mut() {
        stats.apply(ds)?;
    }
    Ok(stats)
}

/// Standardization of regression targets; metrics are reported after
/// [`TargetScaler::invert`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("no targets to standardize".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        })
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn forward(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| (v - self.mean) / self.std).collect()
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| v * self.std + self.mean).collect()
    }
}
