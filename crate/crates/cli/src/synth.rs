use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;

use ddf_core::data::{synth_multimodal, write_embedding_csv, write_latents_csv, SynthConfig, SynthTask};
use ddf_core::vae::synth_factor_images;

use crate::Invalid;

#[derive(Args)]
pub struct SynthArgs {
    /// classification | regression | temporal | images
    #[arg(long, default_value = "classification")]
    task: String,
    /// Records (classification, regression, images).
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Fraction of each modality's features driven by the shared latent.
    #[arg(long, default_value_t = 0.7)]
    redundancy: f64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// Weight of the cross-modal product term in the label.
    #[arg(long, default_value_t = 0.0)]
    interaction: f64,
    /// Temporal series count.
    #[arg(long, default_value_t = 10)]
    series: usize,
    /// Temporal steps per series.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    d_a: usize,
    #[arg(long, default_value_t = 16)]
    d_b: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 8)]
    side: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// `d.csv` -> `d.latents.csv`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.latents.csv"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_images(args: &SynthArgs, sidecar: &Path) -> Result<()> {
    let img = synth_factor_images(args.n, args.side, args.seed)?;
    let d = img.side * img.side;
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    let mut header = vec!["id".to_string()];
    header.extend((0..d).map(|k| format!("x_{k}")));
    w.write_record(&header)?;
    for i in 0..args.n {
        let mut row = vec![format!("img{i}")];
        row.extend(img.pixels.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut f = csv::Writer::from_writer(create(sidecar)?);
    f.write_record(["id", "factor_1", "factor_2"])?;
    for i in 0..args.n {
        f.write_record([format!("img{i}"), img.factor_1[i].to_string(), img.factor_2[i].to_string()])?;
    }
    f.flush()?;
    Ok(())
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let sidecar = sidecar_path(&args.out);
    let task = match args.task.as_str() {
        "classification" | "cls" => SynthTask::Classification {
            n_classes: args.classes,
        },
        "regression" | "reg" => SynthTask::Regression,
        "temporal" => SynthTask::Temporal {
            series: args.series,
            steps: args.steps,
        },
        "images" => return write_images(args, &sidecar),
        other => {
            return Err(Invalid(format!(
                "unknown synth task {other:?}; expected classification, regression, temporal or images"
            ))
            .into())
        }
    };
    let mut cfg = SynthConfig::new(task, args.seed);
    cfg.n = args.n;
    cfg.redundancy = args.redundancy;
    cfg.noise_std = args.noise;
    cfg.interaction = args.interaction;
    cfg.d_a = args.d_a;
    cfg.d_b = args.d_b;
    let out = synth_multimodal(&cfg)?;
    write_embedding_csv(create(&args.out)?, &out.dataset)?;
    write_latents_csv(create(&sidecar)?, &out.latents)?;
    log::info!(
        "wrote {} records to {} and latents to {}",
        out.dataset.len(),
        args.out.display(),
        sidecar.display()
    );
    Ok(())
}
