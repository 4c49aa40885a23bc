//! `ddf`: synthetic data, VAE embeddings, fusion and baseline training,
//! evaluation, gradient checks and report tables.

mod report;
mod settings;
mod synth;
mod train;
mod vae;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ddf_core::data::{load_embedding_csv, windowed, Schema};
use ddf_core::numerics::DEFAULT_EPS;
use ddf_core::train::{checkpoint_load, evaluate_model, gradcheck_target, GradTarget};

/// Bad user input; exits with status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "ddf", version, about = "Disentangled dense fusion of multimodal embeddings")]
struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding CSV plus a ground-truth latent sidecar.
    Synth(synth::SynthArgs),
    /// Train one architecture over several seeds.
    Train(TrainArgs),
    /// Evaluate a checkpoint on an embedding CSV.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train a VAE on a feature CSV.
    VaeTrain(vae::VaeTrainArgs),
    /// Write posterior-mean embeddings of a feature CSV.
    VaeEncode(vae::VaeEncodeArgs),
    /// Collect finished runs into one table.
    Report(report::ReportArgs),
}

#[derive(Args, Default)]
pub struct TrainArgs {
    /// Embedding CSV with id, a_*, b_*, label and optional group, t columns.
    #[arg(long)]
    data: Option<PathBuf>,
    /// logreg | mlp | dense | ddf
    #[arg(long)]
    arch: Option<String>,
    /// a | b | ab
    #[arg(long)]
    modalities: Option<String>,
    /// cls | reg | temporal
    #[arg(long)]
    task: Option<String>,
    /// MI weight λ of the ddf loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Focal loss γ.
    #[arg(long)]
    gamma: Option<f64>,
    /// Early-stopping patience in epochs [default: 7]
    #[arg(long)]
    patience: Option<usize>,
    /// Sliding-window length for temporal tasks [default: 3]
    #[arg(long)]
    window: Option<usize>,
    /// stratified70 | chrono80
    #[arg(long)]
    split: Option<String>,
    /// Number of seeds, or a comma-separated seed list [default: 3]
    #[arg(long)]
    seeds: Option<String>,
    /// Root seed for the split and derived training seeds [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// alternating | summed
    #[arg(long)]
    mi_schedule: Option<String>,
    /// Add per-group metrics (group column, or series id for temporal data).
    #[arg(long)]
    by_group: bool,
    /// Output directory [default: runs]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replay the run recorded in a manifest.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
}

impl TrainArgs {
    fn flag_values(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("data", self.data.as_ref().map(|p| p.display().to_string()));
        put("arch", self.arch.clone());
        put("modalities", self.modalities.clone());
        put("task", self.task.clone());
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("patience", self.patience.map(|v| v.to_string()));
        put("window", self.window.map(|v| v.to_string()));
        put("split", self.split.clone());
        put("seeds", self.seeds.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("weight_decay", self.weight_decay.map(|v| v.to_string()));
        put("mi_schedule", self.mi_schedule.clone());
        put("by_group", self.by_group.then(|| "true".to_string()));
        put("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string()));
        m
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw (unnormalized) embedding CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    by_group: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// baseline | fusion | temporal | vae | all
    #[arg(long, default_value = "all")]
    model: String,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let targets: Vec<GradTarget> = if args.model == "all" {
        GradTarget::ALL.to_vec()
    } else {
        vec![args.model.parse()?]
    };
    let mut max = 0.0f64;
    for t in targets {
        let check = gradcheck_target(t, args.eps, args.seed)?;
        println!(
            "{:<9} entries {:>5}  max relative error {:.3e}",
            t.to_string(),
            check.entries, check.max_rel_error
        );
        max = max.max(check.max_rel_error);
    }
    println!("max relative error: {max:.3e}");
    Ok(max < GRADCHECK_TOLERANCE)
}

fn eval(args: &EvalArgs) -> Result<()> {
    let model = checkpoint_load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let (mut ds, _) = load_embedding_csv(&args.data, &Schema::default())?;
    if let Some(stats) = &model.features {
        stats.apply(&mut ds)?;
    }
    if let Some(w) = model.window {
        ds = windowed(&ds, w)?;
    }
    let report = evaluate_model(&model, &ds, args.by_group)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<Invalid>().is_some()
            || e.downcast_ref::<ddf_core::Error>().is_some_and(ddf_core::Error::is_validation)
    })
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth(a) => synth::run(&a).map(|_| true),
        Command::Train(a) => train::run(&a).map(|_| true),
        Command::Eval(a) => eval(&a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::VaeTrain(a) => vae::train(&a).map(|_| true),
        Command::VaeEncode(a) => vae::encode(&a).map(|_| true),
        Command::Report(a) => report::run(&a).map(|_| true),
    }
}

fn run(argv: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_validation(&e) {
                1
            } else {
                2
            }
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
