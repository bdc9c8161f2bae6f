use super::{ArrowPath, Trajectory, TrajectorySet, Xy};
use crate::error::{Error, Result};

/// `frames` positions spaced uniformly by arc length along the polyline,
/// starting at the first waypoint and (for `frames >= 2`) ending at the last.
pub fn resample_polyline(waypoints: &[Xy], frames: usize) -> Result<Vec<Xy>> {
    let first = *waypoints.first().ok_or_else(|| Error::invalid("arrow has no waypoints"))?;
    if frames == 0 {
        return Err(Error::invalid("trajectory length must be at least 1"));
    }
    let seg_len: Vec<f64> = waypoints
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .collect();
    let total: f64 = seg_len.iter().sum();
    if frames == 1 || total == 0.0 {
        return Ok(vec![first; frames]);
    }
    let last = *waypoints.last().unwrap();
    let mut out = Vec::with_capacity(frames);
    let (mut seg, mut walked) = (0usize, 0.0f64);
    for i in 0..frames {
        if i == frames - 1 {
            out.push(last);
            break;
        }
        let target = total * i as f64 / (frames - 1) as f64;
        while seg + 1 < seg_len.len() && walked + seg_len[seg] < target {
            walked += seg_len[seg];
            seg += 1;
        }
        let (a, b) = (waypoints[seg], waypoints[seg + 1]);
        let u = if seg_len[seg] > 0.0 { ((target - walked) / seg_len[seg]).clamp(0.0, 1.0) } else { 0.0 };
        out.push([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]);
    }
    Ok(out)
}

/// Moves every control point of the arrow's component by the arrow's per-frame offset.
pub fn arrow_to_trajectories(control_points: &[Xy], arrow: &ArrowPath, frames: usize) -> Result<TrajectorySet> {
    let path = resample_polyline(&arrow.waypoints, frames)?;
    let start = path[0];
    let points = control_points
        .iter()
        .map(|&p| Trajectory {
            component: arrow.component,
            xy: path.iter().map(|q| [p[0] + q[0] - start[0], p[1] + q[1] - start[1]]).collect(),
        })
        .collect();
    TrajectorySet::new(frames, points)
}
