//! Point-trajectory conditioning: masks plus arrows (inference) or masks plus a
//! known motion field (training) become a rasterized `L x H x W x 3` tensor.
//!
//! Coordinates are continuous `[x, y]` pairs in pixel units; pixel `(col, row)`
//! is centered on the integer point `[col, row]`.

mod arrow;
pub mod io;
mod kmeans;
mod palette;
mod raster;
mod sampling;

use serde::{Deserialize, Serialize};

pub use arrow::{arrow_to_trajectories, resample_polyline};
pub use kmeans::{kmeans, kmeans_reduce, KMeansOutcome, MAX_LLOYD_ITERATIONS};
pub use palette::component_color;
pub use raster::{rasterize, PointTrajectoryTensor};
pub use sampling::sample_candidates;

use crate::error::{Error, Result};
use crate::evalkit::SyntheticSample;

/// Continuous pixel coordinate `[x, y]`.
pub type Xy = [f64; 2];

/// Binary occupancy grid of one component in one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMask {
    pub component: u32,
    pub height: usize,
    pub width: usize,
    cells: Vec<bool>,
}

impl ComponentMask {
    pub fn new(component: u32, height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::shape("mask", format!("{height}x{width} needs {} cells, got {}", height * width, cells.len())));
        }
        Ok(Self { component, height, width, cells })
    }

    pub fn from_fn(component: u32, height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let cells = (0..height * width).map(|i| f(i % width, i / width)).collect();
        Self { component, height, width, cells }
    }

    pub fn full(component: u32, height: usize, width: usize) -> Self {
        Self::from_fn(component, height, width, |_, _| true)
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.width + col]
    }

    /// Membership of the pixel nearest to a continuous point; out of frame is outside.
    pub fn contains(&self, p: Xy) -> bool {
        let (c, r) = (p[0].round(), p[1].round());
        c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height && self.get(c as usize, r as usize)
    }

    pub fn area(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Inside cells as `[col, row]` points, in row-major order.
    pub fn inside_points(&self) -> Vec<Xy> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| [(i % self.width) as f64, (i / self.width) as f64])
            .collect()
    }

    pub fn union_with(&mut self, other: &ComponentMask) {
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= b;
        }
    }

    /// `[H, W]` tensor of zeros and ones.
    pub fn to_tensor(&self) -> crate::Tensor<f32> {
        crate::Tensor::from_fn(&[self.height, self.width], |i| if self.cells[i] { 1.0 } else { 0.0 })
    }
}

/// User arrow for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrowPath {
    pub component: u32,
    pub waypoints: Vec<Xy>,
}

/// One tracked point: its component and per-frame positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub component: u32,
    pub xy: Vec<Xy>,
}

/// `s * K` trajectories of a common length `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    #[serde(rename = "L")]
    pub frames: usize,
    pub points: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn new(frames: usize, points: Vec<Trajectory>) -> Result<Self> {
        let set = Self { frames, points };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::invalid("trajectory length must be at least 1"));
        }
        if let Some(bad) = self.points.iter().find(|p| p.xy.len() != self.frames) {
            return Err(Error::shape(
                "trajectories",
                format!("point of component {} has {} frames, expected {}", bad.component, bad.xy.len(), self.frames),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn merge(sets: impl IntoIterator<Item = TrajectorySet>, frames: usize) -> Result<Self> {
        let mut points = Vec::new();
        for s in sets {
            if s.frames != frames {
                return Err(Error::shape("trajectories", format!("cannot merge L={} into L={frames}", s.frames)));
            }
            points.extend(s.points);
        }
        Self::new(frames, points)
    }

    pub fn component_of(&self, index: usize) -> u32 {
        self.points[index].component
    }

    pub fn first_positions(&self) -> Vec<Xy> {
        self.points.iter().map(|p| p.xy[0]).collect()
    }
}

/// Tracks control points with the sample's analytic motion; stands in for a learned tracker.
pub fn oracle_track(sample: &SyntheticSample, control_points: &[Xy], frames: usize) -> Result<TrajectorySet> {
    if frames == 0 {
        return Err(Error::invalid("trajectory length must be at least 1"));
    }
    let points = control_points
        .iter()
        .map(|&p| {
            let comp = sample
                .components
                .iter()
                .find(|c| sample.mask(0, c.id).map(|m| m.contains(p)).unwrap_or(false))
                .ok_or_else(|| Error::invalid(format!("point ({}, {}) lies outside every component", p[0], p[1])))?;
            Ok(Trajectory { component: comp.id, xy: (0..frames).map(|i| comp.motion.position(p, i)).collect() })
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectorySet::new(frames, points)
}

/// Candidate sampling followed by K-means: `k` control points inside the mask.
pub fn select_control_points(mask: &ComponentMask, k: usize, seed: u64) -> Result<Vec<Xy>> {
    let candidates = sample_candidates(mask, 3 * k, crate::rng::derive(seed, "candidates", mask.component as u64))?;
    kmeans_reduce(&candidates, k, crate::rng::derive(seed, "kmeans", mask.component as u64))
}

/// Training-mode trajectories: `k` control points per component of frame 0,
/// followed through the clip by its analytic motion.
pub fn sample_trajectories(sample: &SyntheticSample, k: usize, seed: u64) -> Result<TrajectorySet> {
    let mut points = Vec::new();
    for c in &sample.components {
        let mask = sample.mask(0, c.id).ok_or_else(|| Error::invalid(format!("clip {}: no mask for component {}", sample.id, c.id)))?;
        points.extend(select_control_points(mask, k, seed)?);
    }
    oracle_track(sample, &points, sample.frames)
}

/// Inference-mode trajectories: `k` control points per mask, moved along the
/// component's arrow. Components without an arrow stay still.
pub fn arrow_trajectories(
    masks: &std::collections::BTreeMap<u32, ComponentMask>,
    arrows: &[ArrowPath],
    k: usize,
    frames: usize,
    seed: u64,
) -> Result<TrajectorySet> {
    if let Some(a) = arrows.iter().find(|a| !masks.contains_key(&a.component)) {
        return Err(Error::invalid(format!("arrow references unknown component {}", a.component)));
    }
    let mut sets = Vec::new();
    for (&id, mask) in masks {
        let cps = select_control_points(mask, k, seed)?;
        let set = match arrows.iter().find(|a| a.component == id) {
            Some(a) => arrow_to_trajectories(&cps, a, frames)?,
            None => TrajectorySet::new(frames, cps.iter().map(|&p| Trajectory { component: id, xy: vec![p; frames] }).collect())?,
        };
        sets.push(set);
    }
    TrajectorySet::merge(sets, frames)
}
