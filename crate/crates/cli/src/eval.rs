use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use trackctl::attention::AttentionMapSet;
use trackctl::diffusion::{evaluate_objective, step_noise, Checkpoint, Model, TrainBatch};
use trackctl::evalkit::{activation_report, load_dataset, ActivationReport};
use trackctl::numerics::io::write_tensor;
use trackctl::trajgen::io::read_trajectories;

use crate::config::RunConfig;
use crate::infer::{read_frames, score_clip, summarize, ClipScore, ScoreSummary};
use crate::preprocess::{Conditioning, TRAJECTORIES_FILE};

/// Diffusion time at which attention maps are probed.
pub const PROBE_TIME: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: ScoreSummary,
    pub clips: Vec<ClipScore>,
    /// Per-block motion-mass fractions averaged over the clips; present when a checkpoint was given.
    pub activation: Option<ActivationReport>,
    pub config: RunConfig,
}

/// Original-branch maps of one clip at [`PROBE_TIME`] with noise drawn from `seed`.
pub fn probe_maps(model: &Model<f32>, batch: &TrainBatch<f32>, alpha: f64, seed: u64, item: usize) -> Result<AttentionMapSet> {
    let (_, eps) = step_noise::<f32>(seed, 0, item, batch.z0.shape());
    Ok(evaluate_objective(model, batch, PROBE_TIME, &eps, 0.0, alpha)?.1)
}

/// Activation fractions per block, averaged over `batches`.
pub fn mean_activation(model: &Model<f32>, batches: &[TrainBatch<f32>], alpha: f64, seed: u64) -> Result<ActivationReport> {
    if batches.is_empty() {
        bail!("activation needs at least one clip");
    }
    let mut acc: Option<ActivationReport> = None;
    for (i, b) in batches.iter().enumerate() {
        let r = activation_report(&probe_maps(model, b, alpha, seed, i)?, &b.masks)?;
        acc = Some(match acc {
            None => r,
            Some(mut a) => {
                a.original.iter_mut().zip(&r.original).for_each(|(x, y)| *x += y);
                a.adapter.iter_mut().zip(&r.adapter).for_each(|(x, y)| *x += y);
                a
            }
        });
    }
    let mut a = acc.expect("non-empty");
    let n = batches.len() as f64;
    a.original.iter_mut().chain(a.adapter.iter_mut()).for_each(|x| *x /= n);
    Ok(a)
}

/// Scores every clip directory under `generated` against the dataset clip of the
/// same id. Reference trajectories come from the generated clip's
/// `trajectories.json` when present, otherwise from the clip's center tracks.
pub fn eval(cfg: &RunConfig, generated: &Path, data: &Path, model: Option<(&Checkpoint, &Path)>) -> Result<EvalReport> {
    let samples = load_dataset(data)?;
    let mut ids: Vec<String> = std::fs::read_dir(generated)
        .with_context(|| format!("reading {}", generated.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("frame_1.ppm").exists())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    if ids.is_empty() {
        bail!("no generated clips under {}", generated.display());
    }
    let mut clips = Vec::with_capacity(ids.len());
    let mut matched = Vec::with_capacity(ids.len());
    for id in &ids {
        let sample = samples.iter().find(|s| &s.id == id).with_context(|| format!("generated clip {id} has no counterpart in {}", data.display()))?;
        let dir = generated.join(id);
        let video = read_frames(&dir)?;
        if video.shape() != sample.clip.shape() {
            bail!("generated clip {id} is {:?}, dataset clip is {:?}", video.shape(), sample.clip.shape());
        }
        let traj_path = dir.join(TRAJECTORIES_FILE);
        let reference = if traj_path.exists() { read_trajectories(&traj_path)? } else { sample.center_tracks() };
        clips.push(score_clip(&video, sample, &reference).with_context(|| format!("clip {id}"))?);
        matched.push(sample);
    }
    let activation = match model {
        None => None,
        Some((ckpt, pre)) => {
            let batches = matched
                .iter()
                .map(|s| Ok(TrainBatch::from_sample(s, &Conditioning::load(&pre.join(&s.id))?.p)?))
                .collect::<Result<Vec<_>>>()?;
            let st = &ckpt.state;
            Some(mean_activation(&st.model, &batches, st.settings.alpha, cfg.seed)?)
        }
    };
    Ok(EvalReport { summary: summarize(&clips), clips, activation, config: cfg.clone() })
}

/// Writes `attn_block{q}.tgt` (and `adapter_block{q}.tgt`) for one clip plus its activation report.
pub fn inspect_attn(cfg: &RunConfig, ckpt: &Checkpoint, data: &Path, pre: &Path, clip: &str, out: &Path) -> Result<ActivationReport> {
    let samples = load_dataset(data)?;
    let sample = samples.iter().find(|s| s.id == clip).with_context(|| format!("no clip {clip} in {}", data.display()))?;
    let batch = TrainBatch::from_sample(sample, &Conditioning::load(&pre.join(clip))?.p)?;
    let st = &ckpt.state;
    let maps = probe_maps(&st.model, &batch, st.settings.alpha, cfg.seed, 0)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (q, m) in maps.maps.iter().enumerate() {
        write_tensor(out.join(format!("attn_block{q}.tgt")), m)?;
    }
    for (q, m) in maps.adapter_maps.iter().enumerate() {
        write_tensor(out.join(format!("adapter_block{q}.tgt")), m)?;
    }
    let report = activation_report(&maps, &batch.masks)?;
    std::fs::write(out.join("activation.json"), serde_json::to_vec_pretty(&report)?)?;
    cfg.echo_into(out)?;
    Ok(report)
}
