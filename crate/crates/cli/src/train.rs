use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use trackctl::diffusion::{train_step, Checkpoint, LossBreakdown, Model, TrainBatch, TrainState};
use trackctl::evalkit::load_dataset;

use crate::config::RunConfig;
use crate::preprocess::Conditioning;

pub const CHECKPOINT_FILE: &str = "checkpoint.tgc";
pub const LOSS_FILE: &str = "loss.csv";
const LOSS_HEADER: &str = "step,mse,attn,total,lambda";

pub fn checkpoint_path(run: &Path) -> PathBuf {
    run.join(CHECKPOINT_FILE)
}

/// Clips of `data` paired with their preprocessed maps from `pre`.
pub fn load_batches(data: &Path, pre: &Path) -> Result<Vec<TrainBatch<f32>>> {
    let samples = load_dataset(data)?;
    if samples.is_empty() {
        bail!("no clips under {}", data.display());
    }
    samples
        .iter()
        .map(|s| {
            let c = Conditioning::load(&pre.join(&s.id)).with_context(|| format!("preprocessed maps of clip {}", s.id))?;
            Ok(TrainBatch::from_sample(s, &c.p)?)
        })
        .collect()
}

fn loss_line(l: &LossBreakdown) -> String {
    format!("{},{},{},{},{}", l.step, l.mse, l.attn, l.total, l.lambda)
}

/// Keeps the header and the rows of steps before `step`.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut kept = vec![LOSS_HEADER.to_string()];
    for line in text.lines().skip(1) {
        let s: u64 = line.split(',').next().and_then(|v| v.parse().ok()).with_context(|| format!("bad row in {}: {line}", path.display()))?;
        if s < step {
            kept.push(line.to_string());
        }
    }
    std::fs::write(path, kept.join("\n") + "\n").with_context(|| format!("writing {}", path.display()))
}

fn save(state: &TrainState<f32>, cfg: &RunConfig, run: &Path) -> Result<()> {
    let ckpt = Checkpoint { state: state.clone(), run_config: cfg.to_json() };
    // Write then rename so an interrupted save never clobbers the last good checkpoint.
    let tmp = run.join(format!("{CHECKPOINT_FILE}.tmp"));
    ckpt.save(&tmp)?;
    std::fs::rename(&tmp, checkpoint_path(run)).with_context(|| format!("finalizing checkpoint in {}", run.display()))
}

/// Trains until `cfg.steps` updates have been applied. With `resume`, continues
/// from the checkpoint in `run` and reproduces the uninterrupted run exactly.
pub fn train(cfg: &RunConfig, data: &Path, pre: &Path, run: &Path, resume: bool) -> Result<TrainState<f32>> {
    let batches = load_batches(data, pre)?;
    std::fs::create_dir_all(run).with_context(|| format!("creating {}", run.display()))?;
    let log_path = run.join(LOSS_FILE);
    let ckpt = checkpoint_path(run);
    let mut state = if resume && ckpt.exists() {
        let loaded = Checkpoint::load(&ckpt)?.state;
        if loaded.model.config != cfg.model() || loaded.settings != cfg.train() {
            bail!("checkpoint in {} was trained with a different model or optimizer configuration", run.display());
        }
        if loaded.step() > cfg.steps {
            bail!("checkpoint is at step {}, beyond the requested {}", loaded.step(), cfg.steps);
        }
        truncate_log(&log_path, loaded.step())?;
        log::info!("resuming at step {}", loaded.step());
        loaded
    } else {
        std::fs::write(&log_path, format!("{LOSS_HEADER}\n")).with_context(|| format!("writing {}", log_path.display()))?;
        TrainState::new(Model::new(cfg.model(), cfg.seed)?, cfg.train())
    };
    cfg.echo_into(run)?;
    let mut log = std::fs::OpenOptions::new().append(true).open(&log_path).with_context(|| format!("opening {}", log_path.display()))?;
    while state.step() < cfg.steps {
        let l = match train_step(&mut state, &batches) {
            Ok(l) => l,
            Err(e) => {
                log.flush()?;
                return Err(e).context("training aborted; the last checkpoint is kept");
            }
        };
        writeln!(log, "{}", loss_line(&l))?;
        if cfg.checkpoint_every > 0 && state.step() % cfg.checkpoint_every == 0 {
            log.flush()?;
            save(&state, cfg, run)?;
            log::info!("step {} mse {:.4} attn {:.4}", state.step(), l.mse, l.attn);
        }
    }
    log.flush()?;
    save(&state, cfg, run)?;
    Ok(state)
}
