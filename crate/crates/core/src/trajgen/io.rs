//! Mask images, arrow files and trajectory files.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ArrowPath, ComponentMask, TrajectorySet};
use crate::error::{Error, Result};
use crate::imageio::Raster;

pub fn mask_file_name(frame: usize, component: u32) -> String {
    format!("mask_f{frame}_c{component}.pgm")
}

/// Pixel values above 127 are inside.
pub fn mask_from_raster(component: u32, img: &Raster) -> Result<ComponentMask> {
    if img.channels != 1 {
        return Err(Error::format("mask", "expected a graymap"));
    }
    ComponentMask::new(component, img.height as usize, img.width as usize, img.pixels.iter().map(|&v| v > 127).collect())
}

pub fn mask_to_raster(mask: &ComponentMask) -> Raster {
    Raster {
        width: mask.width as u32,
        height: mask.height as u32,
        channels: 1,
        pixels: mask.cells().iter().map(|&b| if b { 255 } else { 0 }).collect(),
    }
}

pub fn read_mask(path: impl AsRef<Path>, component: u32) -> Result<ComponentMask> {
    mask_from_raster(component, &Raster::read(path, 1)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &ComponentMask) -> Result<()> {
    mask_to_raster(mask).write(path)
}

/// Every `mask_f{frame}_c{j}.pgm` in `dir` for the given frame, keyed by component id.
pub fn read_frame_masks(dir: impl AsRef<Path>, frame: usize) -> Result<BTreeMap<u32, ComponentMask>> {
    let dir = dir.as_ref();
    let prefix = format!("mask_f{frame}_c");
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(id) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".pgm")) else { continue };
        let Ok(id) = id.parse::<u32>() else { continue };
        out.insert(id, read_mask(entry.path(), id)?);
    }
    Ok(out)
}

pub fn parse_arrows(json: &str) -> Result<Vec<ArrowPath>> {
    if json.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(serde_json::from_str(json)?)
}

pub fn read_arrows(path: impl AsRef<Path>) -> Result<Vec<ArrowPath>> {
    let path = path.as_ref();
    parse_arrows(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_trajectories(path: impl AsRef<Path>) -> Result<TrajectorySet> {
    let path = path.as_ref();
    let set: TrajectorySet = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
    set.validate()?;
    Ok(set)
}

pub fn write_trajectories(path: impl AsRef<Path>, set: &TrajectorySet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_vec_pretty(set)?).map_err(|e| Error::io(path, e))
}
