use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use trackctl::evalkit::{load_dataset, SyntheticSample};
use trackctl::numerics::io::{read_tensor_file, write_tensor};
use trackctl::trajgen::io::{read_arrows, read_frame_masks, read_trajectories, write_trajectories};
use trackctl::trajgen::{arrow_trajectories, rasterize, sample_trajectories, PointTrajectoryTensor, TrajectorySet};

use crate::config::RunConfig;

pub const TRAJECTORIES_FILE: &str = "trajectories.json";
pub const POINT_MAP_FILE: &str = "p.tgt";

/// Trajectories and their rasterized maps for one clip or one user input.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub trajectories: TrajectorySet,
    pub p: PointTrajectoryTensor,
}

impl Conditioning {
    pub fn rasterized(cfg: &RunConfig, trajectories: TrajectorySet) -> Result<Self> {
        let p = rasterize(&trajectories, cfg.frames, cfg.height, cfg.width, cfg.radius)?;
        Ok(Self { trajectories, p })
    }

    /// Training-mode conditioning: control points followed by the clip's own motion.
    pub fn from_sample(cfg: &RunConfig, sample: &SyntheticSample) -> Result<Self> {
        Self::rasterized(cfg, sample_trajectories(sample, cfg.k, cfg.seed)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_trajectories(dir.join(TRAJECTORIES_FILE), &self.trajectories)?;
        write_tensor(dir.join(POINT_MAP_FILE), &self.p.0)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let trajectories = read_trajectories(dir.join(TRAJECTORIES_FILE))?;
        let p = PointTrajectoryTensor::from_tensor(read_tensor_file(dir.join(POINT_MAP_FILE))?)?;
        Ok(Self { trajectories, p })
    }
}

/// Default location of the preprocessed maps of a dataset.
pub fn default_preprocessed(data: &Path) -> PathBuf {
    data.join("preprocessed")
}

/// Writes `out/{id}/trajectories.json` and `out/{id}/p.tgt` for every clip of the dataset.
pub fn preprocess_dataset(cfg: &RunConfig, data: &Path, out: &Path) -> Result<usize> {
    let samples = load_dataset(data)?;
    for s in &samples {
        Conditioning::from_sample(cfg, s).with_context(|| format!("clip {}", s.id))?.save(&out.join(&s.id))?;
    }
    cfg.echo_into(out)?;
    Ok(samples.len())
}

/// Inference-mode conditioning from frame-1 masks (`mask_f1_c{j}.pgm` in `masks`)
/// and an arrow file. Without arrows every component stays still.
pub fn user_conditioning(cfg: &RunConfig, masks: &Path, arrows: Option<&Path>) -> Result<Conditioning> {
    let masks = read_frame_masks(masks, 1)?;
    if masks.is_empty() {
        anyhow::bail!("no mask_f1_c*.pgm files found");
    }
    let arrows = match arrows {
        Some(p) => read_arrows(p)?,
        None => Vec::new(),
    };
    Conditioning::rasterized(cfg, arrow_trajectories(&masks, &arrows, cfg.k, cfg.frames, cfg.seed)?)
}

pub fn preprocess_user(cfg: &RunConfig, masks: &Path, arrows: Option<&Path>, out: &Path) -> Result<Conditioning> {
    let c = user_conditioning(cfg, masks, arrows)?;
    c.save(out)?;
    cfg.echo_into(out)?;
    Ok(c)
}
