//! Flat JSON run configuration.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use trackctl::diffusion::{ModelConfig, TrainSettings};
use trackctl::evalkit::{DatasetConfig, MotionKind, ShapeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Clip length L.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Control points per component.
    pub k: usize,
    /// Rasterized dot radius, pixels.
    pub radius: f64,
    /// Adapter-map threshold.
    pub alpha: f64,
    /// Attention-loss weight.
    pub lambda: f64,
    /// Inference fill for masked logits.
    pub tau: f64,
    pub c_f: usize,
    pub d: usize,
    pub d_model: usize,
    pub blocks: usize,
    /// False trains the ablation without the adapter branch.
    pub adapter: bool,
    pub anchor_var: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub steps: u64,
    pub batch: usize,
    /// Root seed; each stage derives its own stream from it.
    pub seed: u64,
    pub checkpoint_every: u64,
    pub sample_steps: usize,

    pub count: usize,
    pub components: Vec<usize>,
    pub motion_kinds: Vec<MotionKind>,
    pub shapes: Vec<ShapeKind>,
    pub size_range: [f64; 2],
    pub speed_range: [f64; 2],
    pub rotation_range: [f64; 2],
    pub margin: f64,
    pub contrast: f64,

    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainSettings::default();
        let ds = DatasetConfig::default();
        Self {
            frames: m.frames,
            height: m.height,
            width: m.width,
            k: 8,
            radius: 1.0,
            alpha: t.alpha,
            lambda: t.lambda,
            tau: 0.0,
            c_f: m.c_f,
            d: m.d,
            d_model: m.d_model,
            blocks: m.blocks,
            adapter: m.adapter,
            anchor_var: m.anchor_var,
            lr: t.lr,
            weight_decay: t.weight_decay,
            steps: 2000,
            batch: t.batch,
            seed: 0,
            checkpoint_every: 500,
            sample_steps: 20,
            count: ds.count,
            components: ds.components,
            motion_kinds: ds.motion_kinds,
            shapes: ds.shapes,
            size_range: ds.size_range,
            speed_range: ds.speed_range,
            rotation_range: ds.rotation_range,
            margin: ds.margin,
            contrast: ds.contrast,
            data_dir: "data".into(),
            run_dir: "run".into(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the file at `path`, if any.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes `config.json` into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.json");
        std::fs::write(&path, self.to_json()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            count: self.count,
            frames: self.frames,
            height: self.height,
            width: self.width,
            components: self.components.clone(),
            motion_kinds: self.motion_kinds.clone(),
            shapes: self.shapes.clone(),
            size_range: self.size_range,
            speed_range: self.speed_range,
            rotation_range: self.rotation_range,
            margin: self.margin,
            contrast: self.contrast,
            seed: self.seed,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            frames: self.frames,
            height: self.height,
            width: self.width,
            c_f: self.c_f,
            d: self.d,
            d_model: self.d_model,
            blocks: self.blocks,
            adapter: self.adapter,
            anchor_var: self.anchor_var,
        }
    }

    pub fn train(&self) -> TrainSettings {
        TrainSettings {
            lambda: self.lambda,
            alpha: self.alpha,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch: self.batch,
            seed: self.seed,
        }
    }
}
