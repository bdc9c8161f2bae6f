//! Synthetic clips of colored shapes moving by known laws over a textured background.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::Raster;
use crate::numerics::Tensor;
use crate::trajgen::{self, component_color, ComponentMask, Trajectory, TrajectorySet, Xy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Circle,
}

/// Analytic per-frame motion; frame indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    Translate { velocity: Xy },
    /// Rigid rotation about `pivot`, positive angles clockwise on screen (y down).
    Rotate { pivot: Xy, degrees_per_frame: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Static,
    Translate,
    Rotate,
}

impl Motion {
    pub fn position(&self, p: Xy, frame: usize) -> Xy {
        match *self {
            Motion::Translate { velocity } => [p[0] + velocity[0] * frame as f64, p[1] + velocity[1] * frame as f64],
            Motion::Rotate { pivot, degrees_per_frame } => rotate(p, pivot, (degrees_per_frame * frame as f64).to_radians()),
        }
    }

    /// Frame-0 location of whatever sits at `p` in `frame`.
    pub fn origin_of(&self, p: Xy, frame: usize) -> Xy {
        match *self {
            Motion::Translate { velocity } => [p[0] - velocity[0] * frame as f64, p[1] - velocity[1] * frame as f64],
            Motion::Rotate { pivot, degrees_per_frame } => rotate(p, pivot, -(degrees_per_frame * frame as f64).to_radians()),
        }
    }

    pub fn is_static(&self) -> bool {
        match *self {
            Motion::Translate { velocity } => velocity == [0.0, 0.0],
            Motion::Rotate { degrees_per_frame, .. } => degrees_per_frame == 0.0,
        }
    }
}

fn rotate(p: Xy, pivot: Xy, angle: f64) -> Xy {
    // Exact quarter turns keep lattice points on the lattice.
    let quarter = angle / std::f64::consts::FRAC_PI_2;
    let (s, c) = if quarter == quarter.round() {
        match (quarter.round() as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        angle.sin_cos()
    };
    let (dx, dy) = (p[0] - pivot[0], p[1] - pivot[1]);
    [pivot[0] + c * dx - s * dy, pivot[1] + s * dx + c * dy]
}

/// One moving shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: u32,
    pub shape: ShapeKind,
    /// Frame-0 center.
    pub center: Xy,
    /// Half side (square) or radius (circle), in pixels.
    pub size: f64,
    pub color: [f64; 3],
    pub motion: Motion,
}

impl Component {
    pub fn covers(&self, p: Xy, frame: usize) -> bool {
        let q = self.motion.origin_of(p, frame);
        let (dx, dy) = (q[0] - self.center[0], q[1] - self.center[1]);
        match self.shape {
            ShapeKind::Square => dx.abs() <= self.size && dy.abs() <= self.size,
            ShapeKind::Circle => dx * dx + dy * dy <= self.size * self.size,
        }
    }

    pub fn center_at(&self, frame: usize) -> Xy {
        self.motion.position(self.center, frame)
    }
}

/// Checkerboard with `contrast` between its two gray levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: f64,
    pub contrast: f64,
    pub cell: usize,
    pub phase: [usize; 2],
}

impl Background {
    pub fn value(&self, col: usize, row: usize) -> f64 {
        let parity = ((col + self.phase[0]) / self.cell + (row + self.phase[1]) / self.cell) % 2;
        self.base + if parity == 0 { -0.5 } else { 0.5 } * self.contrast
    }
}

/// Everything needed to re-render a clip; serialized as `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub background: Background,
    pub components: Vec<Component>,
}

/// A rendered clip with its masks and analytic motion.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub background: Background,
    pub components: Vec<Component>,
    /// `[L, 3, H, W]` in `[0, 1]`.
    pub clip: Tensor<f32>,
    /// `masks[frame][k]` belongs to `components[k]`.
    pub masks: Vec<Vec<ComponentMask>>,
}

impl SyntheticSample {
    pub fn render(meta: &ClipMeta) -> Self {
        let ClipMeta { frames: l, height: h, width: w, .. } = *meta;
        let mut clip = Tensor::zeros(&[l, 3, h, w]);
        let mut masks = Vec::with_capacity(l);
        for i in 0..l {
            let frame_masks: Vec<ComponentMask> = meta
                .components
                .iter()
                .map(|c| ComponentMask::from_fn(c.id, h, w, |x, y| c.covers([x as f64, y as f64], i)))
                .collect();
            let data = clip.data_mut();
            for y in 0..h {
                for x in 0..w {
                    let g = meta.background.value(x, y);
                    let mut rgb = [g, g, g];
                    if let Some(k) = frame_masks.iter().position(|m| m.get(x, y)) {
                        rgb = meta.components[k].color;
                    }
                    for (ch, v) in rgb.iter().enumerate() {
                        data[((i * 3 + ch) * h + y) * w + x] = *v as f32;
                    }
                }
            }
            masks.push(frame_masks);
        }
        Self {
            id: meta.id.clone(),
            frames: l,
            height: h,
            width: w,
            seed: meta.seed,
            background: meta.background,
            components: meta.components.clone(),
            clip,
            masks,
        }
    }

    pub fn meta(&self) -> ClipMeta {
        ClipMeta {
            id: self.id.clone(),
            frames: self.frames,
            height: self.height,
            width: self.width,
            seed: self.seed,
            background: self.background,
            components: self.components.clone(),
        }
    }

    pub fn mask(&self, frame: usize, component: u32) -> Option<&ComponentMask> {
        let k = self.components.iter().position(|c| c.id == component)?;
        self.masks.get(frame).map(|m| &m[k])
    }

    /// Union of the masks of all moving components in `frame`.
    pub fn motion_mask(&self, frame: usize) -> ComponentMask {
        let mut out = ComponentMask::from_fn(0, self.height, self.width, |_, _| false);
        for (k, c) in self.components.iter().enumerate() {
            if !c.motion.is_static() {
                out.union_with(&self.masks[frame][k]);
            }
        }
        out
    }

    /// Pixels any moving component covers in any frame.
    pub fn motion_sweep(&self) -> ComponentMask {
        let mut out = ComponentMask::from_fn(0, self.height, self.width, |_, _| false);
        for i in 0..self.frames {
            out.union_with(&self.motion_mask(i));
        }
        out
    }

    /// Frame `i` as `[3, H, W]`.
    pub fn frame(&self, i: usize) -> Tensor<f32> {
        let n = 3 * self.height * self.width;
        Tensor::new(&[3, self.height, self.width], self.clip.data()[i * n..(i + 1) * n].to_vec()).expect("frame extents")
    }

    pub fn colors(&self) -> Vec<(u32, [f64; 3])> {
        self.components.iter().map(|c| (c.id, c.color)).collect()
    }

    /// Closed-form tracks of each component's center.
    pub fn center_tracks(&self) -> TrajectorySet {
        let points = self
            .components
            .iter()
            .map(|c| Trajectory { component: c.id, xy: (0..self.frames).map(|i| c.center_at(i)).collect() })
            .collect();
        TrajectorySet::new(self.frames, points).expect("tracks have L frames")
    }

    /// Writes `frame_{i}.ppm`, `mask_f{i}_c{j}.pgm` (1-based), `tracks.json` and `meta.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for i in 0..self.frames {
            Raster::from_planar(&self.frame(i))?.write(dir.join(format!("frame_{}.ppm", i + 1)))?;
            for m in &self.masks[i] {
                trajgen::io::write_mask(dir.join(trajgen::io::mask_file_name(i + 1, m.component)), m)?;
            }
        }
        trajgen::io::write_trajectories(dir.join("tracks.json"), &self.center_tracks())?;
        let meta = dir.join("meta.json");
        std::fs::write(&meta, serde_json::to_vec_pretty(&self.meta())?).map_err(|e| Error::io(&meta, e))
    }

    /// Loads a clip directory. Frames and masks come from the image files.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.json");
        let meta: ClipMeta =
            serde_json::from_slice(&std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?;
        let mut sample = Self::render(&meta);
        let n = 3 * meta.height * meta.width;
        for i in 0..meta.frames {
            let img = Raster::read(dir.join(format!("frame_{}.ppm", i + 1)), 3)?;
            if (img.width as usize, img.height as usize) != (meta.width, meta.height) {
                return Err(Error::format("clip", format!("{}: frame {} has the wrong size", meta.id, i + 1)));
            }
            sample.clip.data_mut()[i * n..(i + 1) * n].copy_from_slice(img.to_planar().data());
            for (k, c) in meta.components.iter().enumerate() {
                sample.masks[i][k] = trajgen::io::read_mask(dir.join(trajgen::io::mask_file_name(i + 1, c.id)), c.id)?;
            }
        }
        Ok(sample)
    }
}

/// Parameters of [`gen_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Allowed component counts per clip.
    pub components: Vec<usize>,
    pub motion_kinds: Vec<MotionKind>,
    pub shapes: Vec<ShapeKind>,
    /// Half side / radius range, pixels.
    pub size_range: [f64; 2],
    /// Translation speed range, pixels per frame.
    pub speed_range: [f64; 2],
    /// Rotation rate range, degrees per frame.
    pub rotation_range: [f64; 2],
    /// Minimum distance between a shape and the frame edge.
    pub margin: f64,
    pub contrast: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 64,
            frames: 8,
            height: 32,
            width: 32,
            components: vec![1, 2],
            motion_kinds: vec![MotionKind::Translate],
            shapes: vec![ShapeKind::Square, ShapeKind::Circle],
            size_range: [2.5, 4.0],
            speed_range: [0.75, 1.5],
            rotation_range: [8.0, 15.0],
            margin: 1.0,
            contrast: 0.1,
            seed: 0,
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 1000;

fn pick<T: Copy>(rng: &mut crate::rng::Rng, options: &[T]) -> T {
    options[rng.random_range(0..options.len())]
}

fn uniform(rng: &mut crate::rng::Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn clip_id(index: usize) -> String {
    format!("{index:04}")
}

/// Renders `config.count` clips; clip `i` depends only on `(config, i)`.
pub fn gen_dataset(config: &DatasetConfig) -> Result<Vec<SyntheticSample>> {
    if config.components.is_empty() || config.motion_kinds.is_empty() || config.shapes.is_empty() {
        return Err(Error::invalid("component counts, motion kinds and shapes must be non-empty"));
    }
    if config.frames == 0 || config.height == 0 || config.width == 0 {
        return Err(Error::invalid("clip extents must be positive"));
    }
    (0..config.count).map(|i| gen_clip(config, i)).collect()
}

fn gen_clip(config: &DatasetConfig, index: usize) -> Result<SyntheticSample> {
    let id = clip_id(index);
    let extent = config.height.min(config.width) as f64;
    let needed = 2.0 * (config.size_range[1] + config.margin) + 1.0;
    if needed > extent {
        return Err(Error::invalid(format!(
            "clip {id}: shapes of half-size up to {} with margin {} do not fit a {}x{} frame",
            config.size_range[1], config.margin, config.width, config.height
        )));
    }
    let seed = crate::rng::derive(config.seed, "clip", index as u64);
    let mut rng = crate::rng::stream(seed, "layout", 0);
    let background = Background {
        base: rng.random_range(0.35..0.65),
        contrast: config.contrast,
        cell: rng.random_range(3..=6),
        phase: [rng.random_range(0..6), rng.random_range(0..6)],
    };
    let count = pick(&mut rng, &config.components);
    let mut components: Vec<Component> = Vec::with_capacity(count);
    for j in 1..=count as u32 {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let Some(c) = propose(config, &mut rng, j) else { continue };
            if fits(config, &c) && components.iter().all(|o| apart(config, o, &c)) {
                placed = Some(c);
                break;
            }
        }
        components.push(placed.ok_or_else(|| {
            Error::invalid(format!("clip {id}: could not place component {j} inside the frame"))
        })?);
    }
    Ok(SyntheticSample::render(&ClipMeta {
        id,
        frames: config.frames,
        height: config.height,
        width: config.width,
        seed,
        background,
        components,
    }))
}

/// Draws a shape and its motion, then a center from the box that keeps a
/// translating shape inside the frame for the whole clip.
fn propose(config: &DatasetConfig, rng: &mut crate::rng::Rng, id: u32) -> Option<Component> {
    let size = uniform(rng, config.size_range);
    let shape = pick(rng, &config.shapes);
    let reach = size * std::f64::consts::SQRT_2 + config.margin;
    let (w, h) = (config.width as f64 - 1.0, config.height as f64 - 1.0);
    let motion = match pick(rng, &config.motion_kinds) {
        MotionKind::Static => Motion::Translate { velocity: [0.0, 0.0] },
        MotionKind::Translate => {
            let speed = uniform(rng, config.speed_range);
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            Motion::Translate { velocity: [speed * heading.cos(), speed * heading.sin()] }
        }
        MotionKind::Rotate => {
            let rate = uniform(rng, config.rotation_range) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let pivot = [rng.random_range(0.0..w), rng.random_range(0.0..h)];
            Motion::Rotate { pivot, degrees_per_frame: rate }
        }
    };
    let span = match motion {
        Motion::Translate { velocity } => velocity.map(|v| v * config.frames.saturating_sub(1) as f64),
        Motion::Rotate { .. } => [0.0, 0.0],
    };
    let lo = [reach - span[0].min(0.0), reach - span[1].min(0.0)];
    let hi = [w - reach - span[0].max(0.0), h - reach - span[1].max(0.0)];
    if lo[0] >= hi[0] || lo[1] >= hi[1] {
        return None;
    }
    let center = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
    Some(Component { id, shape, center, size, color: component_color(id), motion })
}

fn fits(config: &DatasetConfig, c: &Component) -> bool {
    let reach = c.size * std::f64::consts::SQRT_2 + config.margin;
    (0..config.frames).all(|i| {
        let p = c.center_at(i);
        p[0] - reach >= 0.0
            && p[1] - reach >= 0.0
            && p[0] + reach <= config.width as f64 - 1.0
            && p[1] + reach <= config.height as f64 - 1.0
    })
}

fn apart(config: &DatasetConfig, a: &Component, b: &Component) -> bool {
    let gap = (a.size + b.size) * std::f64::consts::SQRT_2 + 1.0;
    (0..config.frames).all(|i| {
        let (p, q) = (a.center_at(i), b.center_at(i));
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() > gap
    })
}

/// Writes `clips/{id}/...` under `root`.
pub fn save_dataset(root: impl AsRef<Path>, samples: &[SyntheticSample]) -> Result<()> {
    let clips = root.as_ref().join("clips");
    for s in samples {
        s.save(clips.join(&s.id))?;
    }
    Ok(())
}

/// Loads every clip under `root/clips`, sorted by id.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<SyntheticSample>> {
    let clips = root.as_ref().join("clips");
    let mut dirs: Vec<_> = std::fs::read_dir(&clips)
        .map_err(|e| Error::io(&clips, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();
    dirs.iter().map(SyntheticSample::load).collect()
}
