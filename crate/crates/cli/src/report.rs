use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use ddf_core::train::{Arch, Modalities, Summary, TaskKind};

use crate::train::{MetricSummary, MetricsFile, METRICS};
use crate::Invalid;

#[derive(Args)]
pub struct ReportArgs {
    /// Run directories written by `train`.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// One table row: a modality set and an architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub modalities: Modalities,
    pub arch: Arch,
    pub task: TaskKind,
    pub seeds: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Per-group metric means across seeds.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub groups: Option<BTreeMap<String, BTreeMap<String, f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

fn group_means(run: &MetricsFile) -> Option<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut acc: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for seed in &run.runs {
        for (g, rep) in &seed.report.groups.as_ref()?.per_group {
            for (k, v) in rep.scalars() {
                acc.entry(g.clone()).or_default().entry(k).or_default().push(v);
            }
        }
    }
    Some(
        acc.into_iter()
            .map(|(g, ms)| {
                let means = ms
                    .into_iter()
                    .filter_map(|(k, vs)| Some((k, Summary::of(&vs).ok()?.mean)))
                    .collect();
                (g, means)
            })
            .collect(),
    )
}

/// Rows keyed by (modalities, architecture), in that order.
pub fn build_report(results: &[MetricsFile]) -> Result<Report> {
    if results.is_empty() {
        return Err(Invalid("report needs at least one completed run".into()).into());
    }
    let mut rows: BTreeMap<(Modalities, Arch), ReportRow> = BTreeMap::new();
    for r in results {
        let key = (r.modalities, r.arch);
        if rows.contains_key(&key) {
            return Err(Invalid(format!("two runs for modalities {} and arch {}", r.modalities, r.arch)).into());
        }
        rows.insert(
            key,
            ReportRow {
                modalities: r.modalities,
                arch: r.arch,
                task: r.task,
                seeds: r.runs.len(),
                metrics: r.summary.clone(),
                groups: group_means(r),
            },
        );
    }
    Ok(Report {
        rows: rows.into_values().collect(),
    })
}

pub fn emit_report(results: &[MetricsFile], path: &Path) -> Result<()> {
    let report = build_report(results)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let results = args
        .runs
        .iter()
        .map(|dir| {
            let path = dir.join(METRICS);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Invalid(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Invalid(format!("malformed {}: {e}", path.display())).into())
        })
        .collect::<Result<Vec<MetricsFile>>>()?;
    emit_report(&results, &args.out)
}
