use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::{train_baseline, BaselineKind};
use super::fusion::train_fusion;
use super::model::{evaluate_model, TrainedModel};
use super::TrainConfig;
use crate::data::{
    split_chronological, split_random, split_random_stratified, windowed, zscore_normalize, FeatureStats,
    MultimodalDataset,
};
use crate::error::{Error, Result};
use crate::fusion::{Branches, CrossSource, FusionConfig, Task};
use crate::metrics::MetricsReport;
use crate::numerics::Tensor;

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " {:?}; expected one of: ", $($name, " ",)+),
                        other
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($ty::$variant => $name,)+
                })
            }
        }
    };
}

/// Which modality features a model reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modalities {
    A,
    B,
    Ab,
}

named_enum!(Modalities { A => "a", B => "b", Ab => "ab" });

impl Modalities {
    pub fn width(&self, ds: &MultimodalDataset) -> usize {
        match self {
            Modalities::A => ds.dim_a(),
            Modalities::B => ds.dim_b(),
            Modalities::Ab => ds.dim_a() + ds.dim_b(),
        }
    }

    /// Feature matrix; `Ab` is the early-fusion concatenation.
    pub fn features(&self, ds: &MultimodalDataset) -> Result<Tensor> {
        match self {
            Modalities::A => ds.a_matrix(),
            Modalities::B => ds.b_matrix(),
            Modalities::Ab => ds.concat_matrix(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Logreg,
    Mlp,
    /// Dense fusion: attention branches replaced by pooling, no MI term.
    Dense,
    Ddf,
}

named_enum!(Arch { Logreg => "logreg", Mlp => "mlp", Dense => "dense", Ddf => "ddf" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Cls,
    Reg,
    Temporal,
}

named_enum!(TaskKind { Cls => "cls", Reg => "reg", Temporal => "temporal" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// 70/30 random split, stratified by class for classification.
    Stratified70,
    /// First 80% of every series for training.
    Chrono80,
}

named_enum!(SplitKind { Stratified70 => "stratified70", Chrono80 => "chrono80" });

/// One experiment: data handling, architecture and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub arch: Arch,
    pub modalities: Modalities,
    pub task: TaskKind,
    pub split: SplitKind,
    pub window: usize,
    /// Seed of the train/test split; training seeds come from `train.seeds`.
    pub split_seed: u64,
    pub by_group: bool,
    pub train: TrainConfig,
    pub n_tokens: usize,
    pub d_tok: usize,
    pub d_attn: usize,
    pub d_common: usize,
    pub d_specific: usize,
    pub d_hidden: usize,
    pub club_hidden: usize,
    pub cross_source: CrossSource,
}

impl ExperimentSpec {
    pub fn new(arch: Arch, task: TaskKind) -> Self {
        let f = FusionConfig::new(1, 1, Task::Regression);
        Self {
            arch,
            modalities: Modalities::Ab,
            task,
            split: match task {
                TaskKind::Temporal => SplitKind::Chrono80,
                _ => SplitKind::Stratified70,
            },
            window: f.window,
            split_seed: 0,
            by_group: false,
            train: TrainConfig::default(),
            n_tokens: f.n_tokens,
            d_tok: f.d_tok,
            d_attn: f.d_attn,
            d_common: f.d_common,
            d_specific: f.d_specific,
            d_hidden: f.d_hidden,
            club_hidden: f.club_hidden,
            cross_source: f.cross_source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if matches!(self.arch, Arch::Dense | Arch::Ddf) && self.modalities != Modalities::Ab {
            return Err(Error::Config(format!("{} fuses both modalities; use modalities ab", self.arch)));
        }
        if self.task == TaskKind::Temporal && self.split != SplitKind::Chrono80 {
            return Err(Error::Config("temporal tasks need the chrono80 split".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        self.fusion_config(1, 1, Task::Regression).validate()
    }

    /// Fusion network settings for raw per-step widths `d_a`, `d_b`.
    pub fn fusion_config(&self, d_a: usize, d_b: usize, task: Task) -> FusionConfig {
        let mut c = FusionConfig::new(d_a, d_b, task);
        c.n_tokens = self.n_tokens;
        c.d_tok = self.d_tok;
        c.d_attn = self.d_attn;
        c.d_common = self.d_common;
        c.d_specific = self.d_specific;
        c.d_hidden = self.d_hidden;
        c.club_hidden = self.club_hidden;
        c.cross_source = self.cross_source;
        c.branches = match self.arch {
            Arch::Dense => Branches::Identity,
            _ => Branches::Disentangled,
        };
        c.lambda = match self.arch {
            Arch::Ddf => self.train.lambda_mi,
            _ => 0.0,
        };
        if self.task == TaskKind::Temporal {
            c = c.temporal(self.window);
        }
        c
    }
}

/// Normalized (and, for temporal tasks, windowed) train and test splits.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: MultimodalDataset,
    pub test: MultimodalDataset,
    pub features: FeatureStats,
    pub task: Task,
    pub window: Option<usize>,
}

/// Splits `ds`, z-scores features with training statistics and windows
/// temporal series within each split.
pub fn prepare(ds: &MultimodalDataset, spec: &ExperimentSpec) -> Result<Prepared> {
    spec.validate()?;
    let task = match spec.task {
        TaskKind::Cls => Task::Classification {
            n_classes: ds.n_classes()?,
        },
        _ => Task::Regression,
    };
    let (mut train, mut test) = match (spec.split, spec.task) {
        (SplitKind::Stratified70, TaskKind::Cls) => split_random_stratified(ds, 0.7, spec.split_seed)?,
        (SplitKind::Stratified70, _) => split_random(ds, 0.7, spec.split_seed)?,
        (SplitKind::Chrono80, _) => split_chronological(ds, 0.8)?,
    };
    let features = zscore_normalize(&mut train, &mut [&mut test])?;
    let window = (spec.task == TaskKind::Temporal).then_some(spec.window);
    if let Some(w) = window {
        train = windowed(&train, w)?;
        test = windowed(&test, w)?;
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "split left {} training and {} test records",
            train.len(),
            test.len()
        )));
    }
    Ok(Prepared {
        train,
        test,
        features,
        task,
        window,
    })
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub model: TrainedModel,
    pub report: MetricsReport,
}

/// Trains and evaluates one seed.
pub fn run_experiment(prep: &Prepared, spec: &ExperimentSpec, seed: u64) -> Result<SeedRun> {
    let mut tc = spec.train.clone();
    let mut model = match spec.arch {
        Arch::Logreg | Arch::Mlp => {
            let kind = if spec.arch == Arch::Logreg {
                BaselineKind::Logreg
            } else {
                BaselineKind::Mlp
            };
            train_baseline(&prep.train, kind, spec.modalities, prep.task, &tc, seed)?
        }
        Arch::Dense | Arch::Ddf => {
            let config = spec.fusion_config(prep.features.mean_a.len(), prep.features.mean_b.len(), prep.task);
            tc.lambda_mi = config.lambda;
            train_fusion(&prep.train, &config, &tc, seed)?
        }
    };
    model.features = Some(prep.features.clone());
    model.window = prep.window;
    let report = evaluate_model(&model, &prep.test, spec.by_group)?;
    Ok(SeedRun { seed, model, report })
}

/// Sample mean and standard deviation of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// `None` with fewer than two values.
    pub std: Option<f64>,
    pub values: Vec<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("no values to summarize".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Ok(Self {
            mean,
            std,
            values: values.to_vec(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct MultiSeedReport {
    pub runs: Vec<SeedRun>,
    /// Metrics reported by every run.
    pub summary: BTreeMap<String, Summary>,
}

/// Runs every seed (in parallel) and summarizes the metrics. Runs are
/// returned in seed order.
pub fn multi_seed_run(prep: &Prepared, spec: &ExperimentSpec, seeds: &[u64]) -> Result<MultiSeedReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let runs: Vec<SeedRun> = seeds
        .par_iter()
        .map(|&seed| {
            run_experiment(prep, spec, seed).map_err(|e| Error::Seed {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let scalars: Vec<BTreeMap<String, f64>> = runs.iter().map(|r| r.report.scalars()).collect();
    let mut summary = BTreeMap::new();
    for name in scalars[0].keys() {
        let values: Option<Vec<f64>> = scalars.iter().map(|s| s.get(name).copied()).collect();
        if let Some(values) = values {
            summary.insert(name.clone(), Summary::of(&values)?);
        }
    }
    Ok(MultiSeedReport { runs, summary })
}
