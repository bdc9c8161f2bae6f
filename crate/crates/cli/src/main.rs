use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use trackctl::diffusion::Checkpoint;
use trackctl_cli::eval::{eval, inspect_attn};
use trackctl_cli::gen_data::gen_data;
use trackctl_cli::infer::{infer_dataset, infer_user, summarize, Sampling};
use trackctl_cli::preprocess::{default_preprocessed, preprocess_dataset, preprocess_user};
use trackctl_cli::train::train;
use trackctl_cli::RunConfig;

#[derive(Parser)]
#[command(name = "trackctl", version, about = "Trajectory-conditioned toy video diffusion")]
struct Cli {
    /// Flat JSON config; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    steps: Option<u64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Inference fill for masked logits; 0 leaves unspecified areas free.
    #[arg(long, global = true, allow_hyphen_values = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    sample_steps: Option<usize>,
    #[arg(long, global = true)]
    count: Option<usize>,
    /// Train the ablation without the adapter branch.
    #[arg(long, global = true)]
    no_adapter: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the synthetic dataset.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Build trajectories and point maps, from a dataset or from masks and arrows.
    Preprocess {
        #[arg(long, conflicts_with = "masks")]
        dataset: Option<PathBuf>,
        /// Directory holding `mask_f1_c{j}.pgm`.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, requires = "masks")]
        arrows: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the model, writing checkpoints and the loss log to the run directory
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        preprocessed: Option<PathBuf>,
        #[arg(long)]
        run: Option<PathBuf>,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Sample videos from a checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Generate every clip of a preprocessed dataset.
        #[arg(long, conflicts_with_all = ["first_frame", "masks"])]
        dataset: Option<PathBuf>,
        #[arg(long)]
        preprocessed: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, requires = "masks")]
        first_frame: Option<PathBuf>,
        #[arg(long, requires = "first_frame")]
        masks: Option<PathBuf>,
        #[arg(long)]
        arrows: Option<PathBuf>,
    },
    /// Score generated clips against the dataset.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Adds attention activation fractions to the report.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        preprocessed: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump one clip's attention maps.
    InspectAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        preprocessed: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let o = &cli.overrides;
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.steps {
        cfg.steps = v;
    }
    if let Some(v) = o.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = o.tau {
        cfg.tau = v;
    }
    if let Some(v) = o.sample_steps {
        cfg.sample_steps = v;
    }
    if let Some(v) = o.count {
        cfg.count = v;
    }
    if o.no_adapter {
        cfg.adapter = false;
    }
    Ok(cfg)
}

fn load_checkpoint(path: &PathBuf) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = resolve(&cli)?;
    let data_or = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let sampling = Sampling { tau: cfg.tau, steps: cfg.sample_steps, seed: cfg.seed };
    match &cli.cmd {
        Cmd::GenData { out, force } => {
            gen_data(&cfg, &data_or(out), *force)?;
        }
        Cmd::Preprocess { dataset, masks, arrows, out } => match masks {
            Some(m) => {
                let out = out.clone().context("--out is required with --masks")?;
                let c = preprocess_user(&cfg, m, arrows.as_deref(), &out)?;
                log::info!("wrote {} trajectories to {}", c.trajectories.len(), out.display());
            }
            None => {
                let data = data_or(dataset);
                let out = out.clone().unwrap_or_else(|| default_preprocessed(&data));
                let n = preprocess_dataset(&cfg, &data, &out)?;
                log::info!("preprocessed {n} clips into {}", out.display());
            }
        },
        Cmd::Train { data, preprocessed, run, resume } => {
            let data = data_or(data);
            let pre = preprocessed.clone().unwrap_or_else(|| default_preprocessed(&data));
            let run = run.clone().unwrap_or_else(|| cfg.run_dir.clone());
            let st = train(&cfg, &data, &pre, &run, *resume)?;
            log::info!("trained to step {}; checkpoint in {}", st.step(), run.display());
        }
        Cmd::Infer { checkpoint, out, dataset, preprocessed, limit, first_frame, masks, arrows } => {
            let ckpt = load_checkpoint(checkpoint)?;
            match (first_frame, masks) {
                (Some(f), Some(m)) => {
                    infer_user(&ckpt, &cfg, f, m, arrows.as_deref(), out, sampling)?;
                }
                _ => {
                    let data = data_or(dataset);
                    let pre = preprocessed.clone().unwrap_or_else(|| default_preprocessed(&data));
                    let scores = infer_dataset(&ckpt, &data, &pre, out, sampling, *limit)?;
                    cfg.echo_into(out)?;
                    println!("{}", serde_json::to_string_pretty(&summarize(&scores))?);
                }
            }
        }
        Cmd::Eval { generated, data, checkpoint, preprocessed, out } => {
            let data = data_or(data);
            let ckpt = checkpoint.as_ref().map(load_checkpoint).transpose()?;
            let pre = preprocessed.clone().unwrap_or_else(|| default_preprocessed(&data));
            let report = eval(&cfg, generated, &data, ckpt.as_ref().map(|c| (c, pre.as_path())))?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
        }
        Cmd::InspectAttn { checkpoint, clip, data, preprocessed, out } => {
            let ckpt = load_checkpoint(checkpoint)?;
            let data = data_or(data);
            let pre = preprocessed.clone().unwrap_or_else(|| default_preprocessed(&data));
            let r = inspect_attn(&cfg, &ckpt, &data, &pre, clip, out)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
    }
    Ok(())
}
