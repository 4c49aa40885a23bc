use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ddf_core::data::{load_embedding_csv, Schema};
use ddf_core::metrics::MetricsReport;
use ddf_core::train::{checkpoint_write, multi_seed_run, prepare, Arch, Modalities, MultiSeedReport, TaskKind};

use crate::settings::{load_config, resolve, RunConfig};
use crate::{Invalid, TrainArgs};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.json";
pub const LOG: &str = "train.log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub seeds: Vec<u64>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: Option<f64>,
}

/// `metrics.json` of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub arch: Arch,
    pub modalities: Modalities,
    pub task: TaskKind,
    pub n_train: usize,
    pub n_test: usize,
    pub runs: Vec<SeedMetrics>,
    pub summary: BTreeMap<String, MetricSummary>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve_args(args: &TrainArgs) -> Result<(RunConfig, PathBuf, Option<RunManifest>)> {
    if let Some(path) = &args.manifest {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Invalid(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Invalid(format!("malformed manifest {}: {e}", path.display())))?;
        manifest.config.spec.validate().context("invalid manifest configuration")?;
        let out_dir = args
            .out_dir
            .clone()
            .ok_or_else(|| Invalid("--out-dir is required when replaying a manifest".into()))?;
        return Ok((manifest.config.clone(), out_dir, Some(manifest)));
    }
    let file = match &args.config {
        Some(p) => load_config(p)?,
        None => BTreeMap::new(),
    };
    let (config, out_dir) = resolve(file, args.flag_values())?;
    Ok((config, out_dir, None))
}

fn training_log(config: &RunConfig, result: &MultiSeedReport) -> String {
    let spec = &config.spec;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "arch {} modalities {} task {} split {} seeds {:?}",
        spec.arch, spec.modalities, spec.task, spec.split, config.seeds
    );
    for run in &result.runs {
        let h = &run.model.history;
        for e in &h.epochs {
            let _ = writeln!(
                s,
                "seed {} epoch {:>3} train_loss {:.6} val_loss {:.6}",
                run.seed, e.epoch, e.train_loss, e.val_loss
            );
        }
        let _ = writeln!(
            s,
            "seed {} finished after {} epochs (early stop: {}), best epoch {}",
            run.seed,
            h.epochs.len(),
            h.stopped_early,
            h.best_epoch
        );
        for (name, value) in run.report.scalars() {
            let _ = writeln!(s, "seed {} test {name} {value:.6}", run.seed);
        }
    }
    for (name, sum) in &result.summary {
        match sum.std {
            Some(std) => {
                let _ = writeln!(s, "{name} {:.4} ± {:.4}", sum.mean, std);
            }
            None => {
                let _ = writeln!(s, "{name} {:.4}", sum.mean);
            }
        }
    }
    s
}

fn write_output(dir: &Path, name: &str, bytes: &[u8], outputs: &mut Vec<FileDigest>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    outputs.push(FileDigest {
        path: name.to_string(),
        sha256: sha256_hex(bytes),
    });
    Ok(())
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let (config, out_dir, replay) = resolve_args(args)?;
    let data_bytes = std::fs::read(&config.data)
        .map_err(|e| Invalid(format!("cannot read data file {}: {e}", config.data.display())))?;
    let data_digest = sha256_hex(&data_bytes);
    if let Some(m) = &replay {
        if let Some(recorded) = m.inputs.iter().find(|d| d.path == config.data.display().to_string()) {
            if recorded.sha256 != data_digest {
                return Err(Invalid(format!(
                    "data file {} differs from the one recorded in the manifest",
                    config.data.display()
                ))
                .into());
            }
        }
    }
    let (ds, load) = load_embedding_csv(&config.data, &Schema::default())?;
    if load.dropped > 0 {
        log::warn!("dropped {} rows without a label", load.dropped);
    }
    let prep = prepare(&ds, &config.spec)?;
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    log::info!(
        "training {} on {} records ({} test), seeds {:?}",
        config.spec.arch,
        prep.train.len(),
        prep.test.len(),
        config.seeds
    );
    let result = multi_seed_run(&prep, &config.spec, &config.seeds)?;

    let mut outputs = Vec::new();
    for run in &result.runs {
        let mut buf = Vec::new();
        checkpoint_write(&mut buf, &run.model)?;
        write_output(&out_dir, &format!("seed-{}.ckpt", run.seed), &buf, &mut outputs)?;
        let history = serde_json::to_string_pretty(&run.model.history)? + "\n";
        write_output(&out_dir, &format!("seed-{}.history.json", run.seed), history.as_bytes(), &mut outputs)?;
    }
    let metrics = MetricsFile {
        arch: config.spec.arch,
        modalities: config.spec.modalities,
        task: config.spec.task,
        n_train: prep.train.len(),
        n_test: prep.test.len(),
        runs: result
            .runs
            .iter()
            .map(|r| SeedMetrics {
                seed: r.seed,
                epochs: r.model.history.epochs.len(),
                best_epoch: r.model.history.best_epoch,
                stopped_early: r.model.history.stopped_early,
                report: r.report.clone(),
            })
            .collect(),
        summary: result
            .summary
            .iter()
            .map(|(k, s)| {
                (
                    k.clone(),
                    MetricSummary {
                        mean: s.mean,
                        std: s.std,
                    },
                )
            })
            .collect(),
    };
    let metrics_text = serde_json::to_string_pretty(&metrics)? + "\n";
    write_output(&out_dir, METRICS, metrics_text.as_bytes(), &mut outputs)?;
    write_output(&out_dir, LOG, training_log(&config, &result).as_bytes(), &mut outputs)?;

    let manifest = RunManifest {
        inputs: vec![FileDigest {
            path: config.data.display().to_string(),
            sha256: data_digest,
        }],
        seeds: config.seeds.clone(),
        config,
        outputs,
    };
    if let Some(recorded) = &replay {
        for (old, new) in recorded.outputs.iter().zip(&manifest.outputs) {
            if old != new {
                log::warn!("{} differs from the recorded run", new.path);
            }
        }
    }
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(out_dir.join(MANIFEST), text)?;
    for (name, s) in &result.summary {
        match s.std {
            Some(std) => println!("{name}: {:.4} ± {:.4}", s.mean, std),
            None => println!("{name}: {:.4}", s.mean),
        }
    }
    Ok(())
}
