use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use trackctl::attention::SuppressionConfig;
use trackctl::diffusion::{sample, Checkpoint, Model};
use trackctl::evalkit::{load_dataset, motion_energy, objmc, track_generated, SyntheticSample};
use trackctl::imageio::Raster;
use trackctl::trajgen::io::{read_frame_masks, write_trajectories};
use trackctl::trajgen::{ComponentMask, TrajectorySet};
use trackctl::Tensor;

use crate::config::RunConfig;
use crate::preprocess::{user_conditioning, Conditioning, TRAJECTORIES_FILE};

pub const TRACKS_FILE: &str = "tracks.json";

/// Frame `i` of an `[L, 3, H, W]` video.
pub fn video_frame(video: &Tensor<f32>, i: usize) -> Tensor<f32> {
    let s = video.shape();
    let n = s[1] * s[2] * s[3];
    Tensor::new(&[s[1], s[2], s[3]], video.data()[i * n..(i + 1) * n].to_vec()).expect("frame slice")
}

pub fn write_frames(dir: &Path, video: &Tensor<f32>) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for i in 0..video.shape()[0] {
        Raster::from_planar(&video_frame(video, i))?.write(dir.join(format!("frame_{}.ppm", i + 1)))?;
    }
    Ok(())
}

/// The video as it reads back from 8-bit frames.
pub fn quantize(video: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(video.len());
    for i in 0..video.shape()[0] {
        data.extend_from_slice(Raster::from_planar(&video_frame(video, i))?.to_planar().data());
    }
    Ok(Tensor::new(video.shape(), data)?)
}

/// Reads `frame_1.ppm ..` from `dir` into `[L, 3, H, W]`.
pub fn read_frames(dir: &Path) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut l = 0;
    loop {
        let path = dir.join(format!("frame_{}.ppm", l + 1));
        if !path.exists() {
            break;
        }
        let img = Raster::read(&path, 3)?;
        let d = (img.height as usize, img.width as usize);
        if *dims.get_or_insert(d) != d {
            bail!("{}: frame size differs from frame 1", path.display());
        }
        data.extend_from_slice(img.to_planar().data());
        l += 1;
    }
    let Some((h, w)) = dims else { bail!("no frame_1.ppm in {}", dir.display()) };
    Ok(Tensor::new(&[l, 3, h, w], data)?)
}

/// Mean first-frame color inside each mask; the tracker's color key.
pub fn mask_colors(first: &Tensor<f32>, masks: &[ComponentMask]) -> Vec<(u32, [f64; 3])> {
    let hw = first.shape()[1] * first.shape()[2];
    masks
        .iter()
        .map(|m| {
            let mut c = [0.0; 3];
            let n = m.area().max(1) as f64;
            for (p, &inside) in m.cells().iter().enumerate() {
                if inside {
                    for (ch, v) in c.iter_mut().enumerate() {
                        *v += first.data()[ch * hw + p] as f64 / n;
                    }
                }
            }
            (m.component, c)
        })
        .collect()
}

/// Scores of one generated clip against its reference trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub id: String,
    /// Absent when every component went missing.
    pub objmc: Option<f64>,
    pub points: usize,
    pub frames: usize,
    pub missing: usize,
    pub motion_energy_outside: f64,
}

/// Tracks `video` from the reference's frame-1 points and compares; motion
/// energy is measured outside everything the clip's components sweep.
pub fn score_clip(video: &Tensor<f32>, sample: &SyntheticSample, reference: &TrajectorySet) -> Result<ClipScore> {
    let init: Vec<_> = reference.points.iter().map(|t| (t.component, t.xy[0])).collect();
    let tracked = track_generated(video, &init, &sample.colors())?;
    let objmc = if tracked.tracks.is_empty() { None } else { Some(objmc(&tracked.tracks, &tracked.select(reference)?)?.mean) };
    let sweep = sample.motion_sweep();
    let outside = ComponentMask::new(0, sweep.height, sweep.width, sweep.cells().iter().map(|b| !b).collect())?;
    Ok(ClipScore {
        id: sample.id.clone(),
        objmc,
        points: tracked.kept.len(),
        frames: reference.frames,
        missing: tracked.missing.len(),
        motion_energy_outside: motion_energy(video, &outside)?,
    })
}

/// Aggregates over clips. ObjMC is reported both per point-frame and per clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub clips: usize,
    pub objmc: Option<f64>,
    pub objmc_per_clip: Option<f64>,
    pub points: usize,
    pub missing: usize,
    pub motion_energy_outside: f64,
}

pub fn summarize(scores: &[ClipScore]) -> ScoreSummary {
    let scored: Vec<_> = scores.iter().filter_map(|s| s.objmc.map(|m| (m, s.points * s.frames))).collect();
    let weight: usize = scored.iter().map(|&(_, w)| w).sum();
    ScoreSummary {
        clips: scores.len(),
        objmc: (weight > 0).then(|| scored.iter().map(|&(m, w)| m * w as f64).sum::<f64>() / weight as f64),
        objmc_per_clip: (!scored.is_empty()).then(|| scored.iter().map(|&(m, _)| m).sum::<f64>() / scored.len() as f64),
        points: scores.iter().map(|s| s.points).sum(),
        missing: scores.iter().map(|s| s.missing).sum(),
        motion_energy_outside: if scores.is_empty() {
            0.0
        } else {
            scores.iter().map(|s| s.motion_energy_outside).sum::<f64>() / scores.len() as f64
        },
    }
}

/// Generation settings shared by the infer entry points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub tau: f64,
    pub steps: usize,
    pub seed: u64,
}

/// Samples a video conditioned on a clip's first frame and its trajectories.
pub fn generate(model: &Model<f32>, alpha: f64, first: &Tensor<f32>, cond: &Conditioning, s: Sampling) -> Result<Tensor<f32>> {
    let sup = SuppressionConfig::inference(alpha, s.tau);
    Ok(sample(model, first, &cond.p, s.steps, sup.alpha, sup.fill(), s.seed)?)
}

/// Generates every clip of a preprocessed dataset (the first `limit`, if given)
/// into `out/{id}/`.
pub fn infer_dataset(ckpt: &Checkpoint, data: &Path, pre: &Path, out: &Path, s: Sampling, limit: Option<usize>) -> Result<Vec<ClipScore>> {
    let st = &ckpt.state;
    let samples = load_dataset(data)?;
    let n = limit.unwrap_or(samples.len()).min(samples.len());
    log::info!("sampling {n} clips with tau = {}", s.tau);
    let mut scores = Vec::with_capacity(n);
    for sample in &samples[..n] {
        let cond = Conditioning::load(&pre.join(&sample.id)).with_context(|| format!("clip {}", sample.id))?;
        let video = generate(&st.model, st.settings.alpha, &sample.frame(0), &cond, s)?;
        let dir = out.join(&sample.id);
        write_frames(&dir, &video)?;
        write_trajectories(dir.join(TRAJECTORIES_FILE), &cond.trajectories)?;
        let score = score_clip(&quantize(&video)?, sample, &cond.trajectories)?;
        std::fs::write(dir.join("score.json"), serde_json::to_vec_pretty(&score)?)?;
        scores.push(score);
    }
    Ok(scores)
}

/// Generates from a user first frame, frame-1 masks and arrows into `out`.
pub fn infer_user(ckpt: &Checkpoint, cfg: &RunConfig, first_frame: &Path, masks: &Path, arrows: Option<&Path>, out: &Path, s: Sampling) -> Result<Tensor<f32>> {
    let st = &ckpt.state;
    let mc = &st.model.config;
    let img = Raster::read(first_frame, 3)?;
    if (img.height as usize, img.width as usize) != (mc.height, mc.width) {
        bail!("first frame is {}x{} but the model was trained at {}x{}", img.width, img.height, mc.width, mc.height);
    }
    let first = img.to_planar();
    let cfg = RunConfig { frames: mc.frames, height: mc.height, width: mc.width, ..cfg.clone() };
    let cond = user_conditioning(&cfg, masks, arrows)?;
    log::info!("sampling with tau = {}", s.tau);
    let video = generate(&st.model, st.settings.alpha, &first, &cond, s)?;
    write_frames(out, &video)?;
    write_trajectories(out.join(TRAJECTORIES_FILE), &cond.trajectories)?;
    let masks: Vec<_> = read_frame_masks(masks, 1)?.into_values().collect();
    let init: Vec<_> = cond.trajectories.points.iter().map(|t| (t.component, t.xy[0])).collect();
    let tracked = track_generated(&video, &init, &mask_colors(&first, &masks))?;
    std::fs::write(out.join(TRACKS_FILE), serde_json::to_vec_pretty(&tracked)?)?;
    cfg.echo_into(out)?;
    Ok(video)
}
