//! Multimodal datasets: CSV ingestion, splits, normalization, windowing and
//! a synthetic generator with known latents.

mod csv_io;
mod normalize;
mod split;
mod synth;
mod window;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use csv_io::{load_embedding_csv, read_embedding_csv, write_embedding_csv, write_latents_csv, LoadReport, Schema};
pub use normalize::{zscore_normalize, FeatureStats, TargetScaler};
pub use split::{split_chronological, split_random, split_random_stratified};
pub use synth::{synth_multimodal, Latents, SynthConfig, SynthOutput, SynthTask};
pub use window::{dense_reindex, sliding_window, windowed};

/// One aligned sample. Class labels are stored as non-negative integral
/// values of `label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub label: f64,
    pub group: Option<String>,
    pub t: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MultimodalDataset {
    records: Vec<Record>,
}

impl MultimodalDataset {
    /// Validates uniform widths and unique ids.
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        if let Some(first) = records.first() {
            let (da, db) = (first.a.len(), first.b.len());
            for r in &records {
                if r.a.len() != da || r.b.len() != db {
                    return Err(Error::Data(format!(
                        "record {} has widths ({}, {}), expected ({da}, {db})",
                        r.id,
                        r.a.len(),
                        r.b.len()
                    )));
                }
                if !seen.insert(r.id.as_str()) {
                    return Err(Error::Data(format!("duplicate id {}", r.id)));
                }
                if r.a.iter().chain(&r.b).chain([&r.label]).any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("record {} has a non-finite value", r.id)));
                }
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim_a(&self) -> usize {
        self.records.first().map_or(0, |r| r.a.len())
    }

    pub fn dim_b(&self) -> usize {
        self.records.first().map_or(0, |r| r.b.len())
    }

    /// Records at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn a_matrix(&self) -> Result<Tensor> {
        matrix(&self.records, |r| &r.a)
    }

    pub fn b_matrix(&self) -> Result<Tensor> {
        matrix(&self.records, |r| &r.b)
    }

    /// `[a | b]` per row, the early-fusion input.
    pub fn concat_matrix(&self) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = self.records.iter().map(|r| [r.a.as_slice(), &r.b].concat()).collect();
        Tensor::from_rows(&rows)
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Labels as class ids; errors on negative or fractional labels.
    pub fn classes(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .map(|r| {
                if r.label >= 0.0 && r.label.fract() == 0.0 {
                    Ok(r.label as usize)
                } else {
                    Err(Error::Data(format!("record {} has non-class label {}", r.id, r.label)))
                }
            })
            .collect()
    }

    /// `1 + max class id`.
    pub fn n_classes(&self) -> Result<usize> {
        Ok(self.classes()?.into_iter().max().map_or(0, |m| m + 1))
    }

    pub fn groups(&self) -> Option<Vec<String>> {
        self.records.iter().map(|r| r.group.clone()).collect()
    }

    pub(crate) fn records_mut(&mut self) -> &mut [Record] {
        &mut self.records
    }
}

fn matrix(records: &[Record], f: impl Fn(&Record) -> &Vec<f64>) -> Result<Tensor> {
    if records.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let rows: Vec<Vec<f64>> = records.iter().map(|r| f(r).clone()).collect();
    Tensor::from_rows(&rows)
}
