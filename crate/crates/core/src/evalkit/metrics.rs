use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::trajgen::{ComponentMask, Trajectory, TrajectorySet, Xy};

/// Mean Euclidean distance between predicted and ground-truth trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjMcReport {
    /// Mean over all point-frames.
    pub mean: f64,
    pub points: usize,
    pub frames: usize,
}

/// ObjMC over corresponding points of two equally shaped sets.
pub fn objmc(pred: &TrajectorySet, gt: &TrajectorySet) -> Result<ObjMcReport> {
    if pred.len() != gt.len() || pred.frames != gt.frames {
        return Err(Error::shape(
            "objmc",
            format!("{} points x {} frames vs {} points x {} frames", pred.len(), pred.frames, gt.len(), gt.frames),
        ));
    }
    if pred.is_empty() {
        return Err(Error::invalid("objmc of empty trajectory sets"));
    }
    let mut total = 0.0;
    for (p, g) in pred.points.iter().zip(&gt.points) {
        for (a, b) in p.xy.iter().zip(&g.xy) {
            total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        }
    }
    Ok(ObjMcReport { mean: total / (pred.len() * pred.frames) as f64, points: pred.len(), frames: pred.frames })
}

/// Tracks recovered from a video, with points whose component vanished removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedPoints {
    pub tracks: TrajectorySet,
    /// Index into the init points for each kept trajectory.
    pub kept: Vec<usize>,
    /// Init point indices whose component had no matching pixels in some frame.
    pub missing: Vec<usize>,
}

impl TrackedPoints {
    /// The rows of `gt` matching the kept trajectories, for scoring with [`objmc`].
    pub fn select(&self, gt: &TrajectorySet) -> Result<TrajectorySet> {
        let points = self
            .kept
            .iter()
            .map(|&i| gt.points.get(i).cloned().ok_or_else(|| Error::invalid(format!("no ground-truth point {i}"))))
            .collect::<Result<Vec<_>>>()?;
        TrajectorySet::new(gt.frames, points)
    }
}

pub const TRACK_COLOR_TOLERANCE: f64 = 0.25;

/// Color-centroid tracker for `[L, 3, H, W]` videos with color-separable components.
///
/// Each init point `(component, xy)` moves by its component's centroid displacement
/// relative to frame 1.
pub fn track_generated(video: &Tensor<f32>, init_points: &[(u32, Xy)], colors: &[(u32, [f64; 3])]) -> Result<TrackedPoints> {
    let [l, 3, h, w] = video.shape()[..] else {
        return Err(Error::shape("track_generated", format!("expected [L, 3, H, W], got {:?}", video.shape())));
    };
    let data = video.data();
    let mut centroids: Vec<(u32, Option<Vec<Xy>>)> = Vec::new();
    for &(id, color) in colors {
        let mut per_frame = Vec::with_capacity(l);
        for i in 0..l {
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
            for y in 0..h {
                for x in 0..w {
                    let d2: f64 = (0..3)
                        .map(|c| (data[((i * 3 + c) * h + y) * w + x] as f64 - color[c]).powi(2))
                        .sum();
                    if d2 <= TRACK_COLOR_TOLERANCE * TRACK_COLOR_TOLERANCE {
                        sx += x as f64;
                        sy += y as f64;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                break;
            }
            per_frame.push([sx / n as f64, sy / n as f64]);
        }
        centroids.push((id, (per_frame.len() == l).then_some(per_frame)));
    }
    let mut points = Vec::new();
    let (mut kept, mut missing) = (Vec::new(), Vec::new());
    for (idx, &(id, p)) in init_points.iter().enumerate() {
        match centroids.iter().find(|(c, _)| *c == id).and_then(|(_, c)| c.as_ref()) {
            Some(c) => {
                points.push(Trajectory { component: id, xy: c.iter().map(|q| [p[0] + q[0] - c[0][0], p[1] + q[1] - c[0][1]]).collect() });
                kept.push(idx);
            }
            None => missing.push(idx),
        }
    }
    Ok(TrackedPoints { tracks: TrajectorySet { frames: l, points }, kept, missing })
}

/// Mean absolute frame-to-frame change inside `region`, averaged over frames `2..=L`.
pub fn motion_energy(video: &Tensor<f32>, region: &ComponentMask) -> Result<f64> {
    let [l, c, h, w] = video.shape()[..] else {
        return Err(Error::shape("motion_energy", format!("expected [L, C, H, W], got {:?}", video.shape())));
    };
    if (region.height, region.width) != (h, w) {
        return Err(Error::shape("motion_energy", format!("region {}x{} vs video {h}x{w}", region.height, region.width)));
    }
    let area = region.area();
    if l < 2 || area == 0 {
        return Ok(0.0);
    }
    let data = video.data();
    let mut total = 0.0;
    for i in 1..l {
        let mut frame_sum = 0.0;
        for ch in 0..c {
            for (p, &inside) in region.cells().iter().enumerate() {
                if inside {
                    let cur = data[(i * c + ch) * h * w + p] as f64;
                    let prev = data[((i - 1) * c + ch) * h * w + p] as f64;
                    frame_sum += (cur - prev).abs();
                }
            }
        }
        total += frame_sum / (area * c) as f64;
    }
    Ok(total / (l - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::{gen_dataset, DatasetConfig};
    use crate::trajgen::{component_color, ComponentMask};

    fn set(pts: Vec<Vec<Xy>>) -> TrajectorySet {
        let frames = pts[0].len();
        TrajectorySet::new(frames, pts.into_iter().map(|xy| Trajectory { component: 1, xy }).collect()).unwrap()
    }

    #[test]
    fn objmc_examples() {
        let a = set(vec![vec![[1.0, 2.0], [3.0, 4.0]], vec![[0.0, 0.0], [5.0, 5.0]]]);
        assert_eq!(objmc(&a, &a).unwrap().mean, 0.0);
        let b = set(a.points.iter().map(|t| t.xy.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect()).collect());
        assert_eq!(objmc(&a, &b).unwrap().mean, 5.0);
        let short = set(vec![vec![[1.0, 2.0], [3.0, 4.0]]]);
        assert!(objmc(&a, &short).is_err());
    }

    #[test]
    fn tracker_on_black_video_reports_missing() {
        let v = Tensor::zeros(&[3, 3, 8, 8]);
        let out = track_generated(&v, &[(1, [2.0, 2.0])], &[(1, component_color(1))]).unwrap();
        assert!(out.tracks.is_empty());
        assert_eq!(out.missing, vec![0]);
    }

    #[test]
    fn tracker_recovers_translations() {
        // Pixel snapping makes single clips noisy; the bound holds for the global point-frame mean.
        let cfg = DatasetConfig { count: 16, seed: 3, ..Default::default() };
        let (mut total, mut n) = (0.0, 0);
        for s in gen_dataset(&cfg).unwrap() {
            let gt = s.center_tracks();
            let init: Vec<(u32, Xy)> = gt.points.iter().map(|t| (t.component, t.xy[0])).collect();
            let out = track_generated(&s.clip, &init, &s.colors()).unwrap();
            assert!(out.missing.is_empty());
            let r = objmc(&out.tracks, &gt).unwrap();
            assert!(r.mean < 1.0);
            total += r.mean * (r.points * r.frames) as f64;
            n += r.points * r.frames;
        }
        assert!(total / n as f64 <= 0.6, "{}", total / n as f64);
    }

    #[test]
    fn static_clip_tracks_do_not_move() {
        let cfg = DatasetConfig { count: 2, motion_kinds: vec![crate::evalkit::MotionKind::Static], ..Default::default() };
        for s in gen_dataset(&cfg).unwrap() {
            let init: Vec<(u32, Xy)> = s.components.iter().map(|c| (c.id, c.center)).collect();
            let out = track_generated(&s.clip, &init, &s.colors()).unwrap();
            for t in &out.tracks.points {
                assert!(t.xy.iter().all(|p| *p == t.xy[0]));
            }
        }
    }

    #[test]
    fn motion_energy_examples() {
        let full = ComponentMask::full(0, 4, 4);
        assert_eq!(motion_energy(&Tensor::full(&[3, 3, 4, 4], 0.3), &full).unwrap(), 0.0);
        let alt = Tensor::from_fn(&[4, 1, 4, 4], |i| if (i / 16) % 2 == 0 { 0.0 } else { 1.0 });
        assert_eq!(motion_energy(&alt, &full).unwrap(), 1.0);
        let shifted = alt.map(|v| v + 0.25);
        assert_eq!(motion_energy(&shifted, &full).unwrap(), 1.0);
    }
}
