//! Synthetic moving-shape clips with exact masks and tracks, plus the scores
//! used to judge generated video.

mod dataset;
mod metrics;

pub use dataset::{
    gen_dataset, load_dataset, save_dataset, Background, ClipMeta, Component, DatasetConfig, Motion, MotionKind,
    ShapeKind, SyntheticSample,
};
pub use metrics::{motion_energy, objmc, track_generated, ObjMcReport, TrackedPoints, TRACK_COLOR_TOLERANCE};

use serde::{Deserialize, Serialize};

use crate::attention::{mask_grid, AttentionMapSet};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::trajgen::ComponentMask;

/// Share of diagonal attention mass that falls inside the motion masks, per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationReport {
    pub original: Vec<f64>,
    /// Empty when the maps came from a model without the adapter.
    pub adapter: Vec<f64>,
}

fn diagonal_fraction(map: &Tensor<f32>, weights: &Tensor<f64>) -> Result<f64> {
    let [p, l, l2] = map.shape()[..] else {
        return Err(Error::shape("activation_report", format!("map {:?}", map.shape())));
    };
    if l != l2 || weights.shape() != [p, l] {
        return Err(Error::shape("activation_report", format!("map {:?} vs masks {:?}", map.shape(), weights.shape())));
    }
    let (mut inside, mut total) = (0.0, 0.0);
    for q in 0..p {
        for i in 0..l {
            let a = map.data()[(q * l + i) * l + i] as f64;
            inside += a * weights.data()[q * l + i];
            total += a;
        }
    }
    Ok(if total > 0.0 { inside / total } else { 0.0 })
}

/// `sum(A(i,i) * phi(M_i)) / sum(A(i,i))` for every original and adapter map.
pub fn activation_report(maps: &AttentionMapSet, masks: &[ComponentMask]) -> Result<ActivationReport> {
    if maps.maps.is_empty() {
        return Err(Error::invalid("activation report needs at least one attention map"));
    }
    let mut original = Vec::with_capacity(maps.maps.len());
    let mut adapter = Vec::with_capacity(maps.adapter_maps.len());
    for (q, map) in maps.maps.iter().enumerate() {
        let w = mask_grid::<f64>(masks, maps.grids[q])?;
        original.push(diagonal_fraction(map, &w)?);
        if let Some(a) = maps.adapter_maps.get(q) {
            adapter.push(diagonal_fraction(a, &w)?);
        }
    }
    Ok(ActivationReport { original, adapter })
}
