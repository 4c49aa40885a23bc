use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use ddf_core::numerics::{Rng, Tensor};
use ddf_core::vae::{train_vae, vae_encode, vae_eval_loss, VaeConfig, VaeModel, VaeTrainConfig};

use crate::Invalid;

#[derive(Args)]
pub struct VaeTrainArgs {
    /// CSV with an `id` column and numeric feature columns.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 8)]
    latent: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Model file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct VaeEncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Embedding CSV: id plus `<prefix>0..` columns.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "a_")]
    prefix: String,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct VaeFile {
    config: VaeConfig,
    train: VaeTrainConfig,
    seed: u64,
    initial_loss: f64,
    losses: Vec<f64>,
    params: BTreeMap<String, StoredTensor>,
}

/// Reads `id` plus every other column as a feature.
fn read_features(path: &Path) -> Result<(Vec<String>, Tensor)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Invalid(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| Invalid(format!("{} has no id column", path.display())))?;
    let width = headers.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        for (col, cell) in rec.iter().enumerate() {
            if col == id_col {
                ids.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                Invalid(format!(
                    "{} row {}: non-numeric value {cell:?} in column {}",
                    path.display(),
                    line + 2,
                    &headers[col]
                ))
            })?;
            values.push(v);
        }
    }
    if ids.is_empty() || width == 0 {
        return Err(Invalid(format!("{} has no feature rows", path.display())).into());
    }
    Ok((ids.clone(), Tensor::new(&[ids.len(), width], values)?))
}

pub fn train(args: &VaeTrainArgs) -> Result<()> {
    let (_, x) = read_features(&args.data)?;
    let config = VaeConfig {
        input_dim: x.shape()[1],
        hidden: args.hidden,
        latent: args.latent,
    };
    config.validate()?;
    let tc = VaeTrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        ..VaeTrainConfig::default()
    };
    let root = Rng::new(args.seed);
    let mut model = VaeModel::new(config.clone(), &mut root.derive("init"))?;
    let initial_loss = vae_eval_loss(&model, &x)?;
    let losses = train_vae(&mut model, &x, &tc, &mut root.derive("train"))?;
    let final_loss = vae_eval_loss(&model, &x)?;
    println!("vae loss {initial_loss:.6} -> {final_loss:.6}");
    let params = model
        .params
        .iter()
        .map(|(name, p)| {
            (
                name.to_string(),
                StoredTensor {
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                },
            )
        })
        .collect();
    let file = VaeFile {
        config,
        train: tc,
        seed: args.seed,
        initial_loss,
        losses,
        params,
    };
    std::fs::write(&args.out, serde_json::to_string(&file)? + "\n")
        .with_context(|| format!("writing {}", args.out.display()))
}

fn load_model(path: &Path) -> Result<VaeModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("cannot read {}: {e}", path.display())))?;
    let file: VaeFile =
        serde_json::from_str(&text).map_err(|e| Invalid(format!("malformed model file {}: {e}", path.display())))?;
    let mut model = VaeModel::new(file.config, &mut Rng::new(0))?;
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for name in names {
        let stored = file
            .params
            .get(&name)
            .ok_or_else(|| Invalid(format!("model file lacks parameter {name}")))?;
        let slot = model.params.get_mut(&name).expect("name from the set");
        if slot.shape() != stored.shape.as_slice() {
            return Err(Invalid(format!(
                "parameter {name} has shape {:?}, model expects {:?}",
                stored.shape,
                slot.shape()
            ))
            .into());
        }
        *slot = Tensor::new(&stored.shape, stored.data.clone())?;
    }
    Ok(model)
}

pub fn encode(args: &VaeEncodeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let (ids, x) = read_features(&args.data)?;
    let mu = vae_encode(&model, &x)?;
    let mut w = csv::Writer::from_path(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..mu.shape()[1]).map(|k| format!("{}{k}", args.prefix)));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(mu.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
