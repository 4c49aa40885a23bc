//! Flat `key = value` settings with flag > file > default precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ddf_core::numerics::derive_seed;
use ddf_core::train::{Arch, ExperimentSpec, TaskKind};

use crate::Invalid;

/// Keys accepted by `train`, in flag spelling with underscores.
pub const TRAIN_KEYS: &[&str] = &[
    "data",
    "arch",
    "modalities",
    "task",
    "split",
    "window",
    "lambda",
    "gamma",
    "patience",
    "seeds",
    "seed",
    "epochs",
    "lr",
    "batch_size",
    "weight_decay",
    "estimator_lr",
    "val_frac",
    "mi_schedule",
    "optimizer",
    "class_weighted",
    "by_group",
    "out_dir",
    "n_tokens",
    "d_tok",
    "d_attn",
    "d_common",
    "d_specific",
    "d_hidden",
    "club_hidden",
    "cross_source",
];

/// Parses a config file: one `key = value` per line, `#` starts a comment.
pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Invalid(format!("{}:{}: expected `key = value`", origin.display(), n + 1)).into());
        };
        let key = key.trim().replace('-', "_");
        if !TRAIN_KEYS.contains(&key.as_str()) {
            return Err(Invalid(format!("{}:{}: unknown key {key:?}", origin.display(), n + 1)).into());
        }
        let value = value.trim().trim_matches('"').to_string();
        if out.insert(key.clone(), value).is_some() {
            return Err(Invalid(format!("{}:{}: duplicate key {key:?}", origin.display(), n + 1)).into());
        }
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Invalid(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config(&text, path)
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn parse<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Invalid(format!("invalid value {v:?} for {key}: {e}")).into())
            })
            .transpose()
    }

    /// Enum values, spelled as in the serialized config.
    fn choice<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.0
            .get(key)
            .map(|v| {
                serde_json::from_value(serde_json::Value::String(v.clone()))
                    .map_err(|e| Invalid(format!("invalid value {v:?} for {key}: {e}")).into())
            })
            .transpose()
    }

    fn set<T>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.parse(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_choice<T: DeserializeOwned>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.choice(key)? {
            *slot = v;
        }
        Ok(())
    }
}

/// Fully resolved settings of a training run. Replaying one reproduces the
/// run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    /// Root seed. The split seed is derived from it; training seeds count up
    /// from it unless listed explicitly.
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub spec: ExperimentSpec,
}

fn seed_list(value: &str, root: u64) -> Result<Vec<u64>> {
    let bad = || Invalid(format!("invalid value {value:?} for seeds: expected a count or a comma-separated list"));
    if value.contains(',') {
        return value
            .split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|_| bad().into()))
            .collect();
    }
    let n: usize = value.parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(Invalid("seeds must be at least 1".into()).into());
    }
    Ok((0..n as u64).map(|i| root.wrapping_add(i)).collect())
}

/// Merges flag values over file values and materializes all defaults.
pub fn resolve(file: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Result<(RunConfig, PathBuf)> {
    let mut merged = file;
    merged.extend(flags);
    let v = Values(merged);

    let data: PathBuf = v
        .parse::<PathBuf>("data")?
        .ok_or_else(|| Invalid("no input data; pass --data or set `data` in the config file".into()))?;
    let arch: Arch = v.choice("arch")?.unwrap_or(Arch::Ddf);
    let task: TaskKind = v.choice("task")?.unwrap_or(TaskKind::Cls);
    let mut spec = ExperimentSpec::new(arch, task);
    v.set_choice("modalities", &mut spec.modalities)?;
    v.set_choice("split", &mut spec.split)?;
    v.set("window", &mut spec.window)?;
    v.set("by_group", &mut spec.by_group)?;
    v.set("n_tokens", &mut spec.n_tokens)?;
    v.set("d_tok", &mut spec.d_tok)?;
    v.set("d_attn", &mut spec.d_attn)?;
    v.set("d_common", &mut spec.d_common)?;
    v.set("d_specific", &mut spec.d_specific)?;
    v.set("d_hidden", &mut spec.d_hidden)?;
    v.set("club_hidden", &mut spec.club_hidden)?;
    v.set_choice("cross_source", &mut spec.cross_source)?;

    let tc = &mut spec.train;
    v.set("lambda", &mut tc.lambda_mi)?;
    v.set("gamma", &mut tc.gamma)?;
    v.set("patience", &mut tc.patience)?;
    v.set("epochs", &mut tc.epochs)?;
    v.set("lr", &mut tc.lr)?;
    v.set("batch_size", &mut tc.batch_size)?;
    v.set("weight_decay", &mut tc.weight_decay)?;
    v.set("estimator_lr", &mut tc.estimator_lr)?;
    v.set("val_frac", &mut tc.val_frac)?;
    v.set("class_weighted", &mut tc.class_weighted)?;
    v.set_choice("mi_schedule", &mut tc.mi_schedule)?;
    v.set_choice("optimizer", &mut tc.optimizer)?;

    let seed: u64 = v.parse("seed")?.unwrap_or(1);
    let seeds = seed_list(v.0.get("seeds").map_or("3", String::as_str), seed)?;
    spec.split_seed = derive_seed(seed, "split");
    spec.train.seeds = seeds.clone();
    let out_dir: PathBuf = v.parse("out_dir")?.unwrap_or_else(|| PathBuf::from("runs"));
    let config = RunConfig {
        data,
        seed,
        seeds,
        spec,
    };
    config.spec.validate().context("invalid run configuration")?;
    Ok((config, out_dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn config_file_syntax() {
        let text = "# comment\narch = mlp  # trailing\n\nbatch-size = 16\ndata = \"x.csv\"\n";
        let m = parse_config(text, Path::new("c.conf")).unwrap();
        assert_eq!(m, map(&[("arch", "mlp"), ("batch_size", "16"), ("data", "x.csv")]));
        assert!(parse_config("arch mlp", Path::new("c")).is_err());
        assert!(parse_config("colour = red", Path::new("c")).is_err());
        assert!(parse_config("lr = 1\nlr = 2", Path::new("c")).is_err());
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = map(&[("data", "f.csv"), ("lambda", "0.3"), ("patience", "4")]);
        let flags = map(&[("lambda", "0.2")]);
        let (c, out) = resolve(file, flags).unwrap();
        assert_eq!(c.data, PathBuf::from("f.csv"));
        assert_eq!(c.spec.train.lambda_mi, 0.2);
        assert_eq!(c.spec.train.patience, 4);
        assert_eq!(c.spec.train.gamma, 2.0);
        assert_eq!(c.spec.window, 3);
        assert_eq!(c.seeds.len(), 3);
        assert_eq!(out, PathBuf::from("runs"));
    }

    #[test]
    fn seeds_are_counts_or_lists() {
        assert_eq!(seed_list("4,5", 1).unwrap(), vec![4, 5]);
        assert_eq!(seed_list("3", 9).unwrap(), vec![9, 10, 11]);
        assert!(seed_list("0", 1).is_err());
        assert!(seed_list("x", 1).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for (k, v) in [("arch", "cnn"), ("patience", "0"), ("lambda", "2"), ("task", "rank"), ("window", "-1")] {
            let flags = map(&[("data", "d.csv"), (k, v)]);
            assert!(resolve(BTreeMap::new(), flags).is_err(), "{k} = {v}");
        }
        assert!(resolve(BTreeMap::new(), BTreeMap::new()).is_err());
    }
}
