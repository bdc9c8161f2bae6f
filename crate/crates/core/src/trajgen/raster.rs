use super::{component_color, TrajectorySet};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Rasterized colored trajectories, `[L, H, W, 3]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTrajectoryTensor(pub Tensor<f32>);

impl PointTrajectoryTensor {
    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn from_tensor(t: Tensor<f32>) -> Result<Self> {
        match t.shape() {
            [_, _, _, 3] => Ok(Self(t)),
            s => Err(Error::shape("point trajectories", format!("expected [L, H, W, 3], got {s:?}"))),
        }
    }

    /// `[L, 3, H, W]` layout for the convolutional encoder.
    pub fn to_channels_first(&self) -> Tensor<f32> {
        crate::numerics::permute(&self.0, &[0, 3, 1, 2]).expect("rank-4 permutation")
    }

    /// Pixels that are non-zero in frame `i`, as `(col, row)`.
    pub fn support(&self, frame: usize) -> Vec<(usize, usize)> {
        let (h, w) = (self.height(), self.width());
        let base = frame * h * w * 3;
        (0..h * w)
            .filter(|&p| self.0.data()[base + p * 3..base + p * 3 + 3].iter().any(|&v| v != 0.0))
            .map(|p| (p % w, p / w))
            .collect()
    }
}

/// Integer offsets `(du, dv)` with `du^2 + dv^2 <= r^2`.
pub(crate) fn disc_offsets(radius: f64) -> Vec<(i64, i64)> {
    let reach = radius.max(0.0).floor() as i64;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for dv in -reach..=reach {
        for du in -reach..=reach {
            if ((du * du + dv * dv) as f64) <= r2 {
                out.push((du, dv));
            }
        }
    }
    out
}

/// Plots each point as a disc of radius `radius` in its component's palette color.
/// Overlapping discs take the color of the lowest component id; out-of-frame pixels are dropped.
pub fn rasterize(trajectories: &TrajectorySet, frames: usize, height: usize, width: usize, radius: f64) -> Result<PointTrajectoryTensor> {
    trajectories.validate()?;
    if trajectories.frames != frames {
        return Err(Error::shape("rasterize", format!("trajectories have L={}, asked for {frames}", trajectories.frames)));
    }
    let offsets = disc_offsets(radius);
    let mut out = Tensor::zeros(&[frames, height, width, 3]);
    let mut owner = vec![u32::MAX; height * width];
    for i in 0..frames {
        owner.fill(u32::MAX);
        for t in &trajectories.points {
            let [x, y] = t.xy[i];
            let (cx, cy) = (x.round(), y.round());
            if !cx.is_finite() || !cy.is_finite() {
                continue;
            }
            for &(du, dv) in &offsets {
                let (px, py) = (cx as i64 + du, cy as i64 + dv);
                if px < 0 || py < 0 || px >= width as i64 || py >= height as i64 {
                    continue;
                }
                let cell = &mut owner[py as usize * width + px as usize];
                *cell = (*cell).min(t.component);
            }
        }
        let frame = &mut out.data_mut()[i * height * width * 3..(i + 1) * height * width * 3];
        for (p, &c) in owner.iter().enumerate() {
            if c != u32::MAX {
                let rgb = component_color(c);
                for k in 0..3 {
                    frame[p * 3 + k] = rgb[k] as f32;
                }
            }
        }
    }
    Ok(PointTrajectoryTensor(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajgen::Trajectory;
    use proptest::prelude::*;

    fn set(frames: usize, pts: Vec<(u32, Vec<[f64; 2]>)>) -> TrajectorySet {
        TrajectorySet::new(frames, pts.into_iter().map(|(component, xy)| Trajectory { component, xy }).collect()).unwrap()
    }

    #[test]
    fn static_point_radius_zero() {
        let p = rasterize(&set(2, vec![(1, vec![[3.0, 3.0]; 2])]), 2, 8, 8, 0.0).unwrap();
        for i in 0..2 {
            assert_eq!(p.support(i), vec![(3, 3)]);
        }
        assert_eq!(p.0.at(&[1, 3, 3, 0]), 1.0);
    }

    #[test]
    fn leaving_point_is_clipped() {
        let p = rasterize(&set(3, vec![(1, vec![[6.0, 2.0], [9.0, 2.0], [12.0, 2.0]])]), 3, 8, 8, 1.0).unwrap();
        assert_eq!(p.support(0).len(), 5);
        assert!(p.support(2).is_empty());
    }

    #[test]
    fn colors_and_disc_counts() {
        let r = 2.0;
        // Enumerate the disc independently.
        let mut disc = 0;
        for u in -3i32..=3 {
            for v in -3i32..=3 {
                if u * u + v * v <= 4 {
                    disc += 1;
                }
            }
        }
        assert_eq!(disc, 13);
        let s = set(1, vec![(1, vec![[5.0, 5.0]]), (2, vec![[20.0, 20.0]])]);
        let p = rasterize(&s, 1, 32, 32, r).unwrap();
        let support = p.support(0);
        assert_eq!(support.len(), 2 * disc);
        for (c, row) in support {
            let want = if c < 12 { component_color(1) } else { component_color(2) };
            for k in 0..3 {
                assert_eq!(p.0.at(&[0, row, c, k]), want[k] as f32);
            }
        }
    }

    #[test]
    fn overlap_goes_to_lowest_component() {
        let s = set(1, vec![(3, vec![[4.0, 4.0]]), (2, vec![[4.0, 4.0]])]);
        let p = rasterize(&s, 1, 8, 8, 1.0).unwrap();
        assert_eq!(p.0.at(&[0, 4, 4, 1]), component_color(2)[1] as f32);
    }

    proptest! {
        #[test]
        fn translation_equivariance(
            pts in prop::collection::vec((8.0f64..16.0, 8.0f64..16.0), 1..4),
            dx in -6i64..6,
            dy in -6i64..6,
        ) {
            let base = set(1, pts.iter().map(|&(x, y)| (1, vec![[x, y]])).collect());
            let shifted = set(1, pts.iter().map(|&(x, y)| (1, vec![[x + dx as f64, y + dy as f64]])).collect());
            let a = rasterize(&base, 1, 32, 32, 1.0).unwrap().support(0);
            let b = rasterize(&shifted, 1, 32, 32, 1.0).unwrap().support(0);
            let mut moved: Vec<_> = a.iter().map(|&(c, r)| ((c as i64 + dx) as usize, (r as i64 + dy) as usize)).collect();
            moved.sort_by_key(|&(c, r)| (r, c));
            prop_assert_eq!(moved, b);
        }
    }
}
