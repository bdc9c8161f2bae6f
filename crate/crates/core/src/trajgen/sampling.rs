use rand::Rng as _;

use super::{ComponentMask, Xy};
use crate::error::{Error, Result};

/// Draws `count` mask cells uniformly with replacement.
pub fn sample_candidates(mask: &ComponentMask, count: usize, seed: u64) -> Result<Vec<Xy>> {
    if count == 0 {
        return Err(Error::invalid("candidate count must be at least 1"));
    }
    let cells = mask.inside_points();
    if cells.is_empty() {
        return Err(Error::EmptyMask { component: mask.component });
    }
    let mut rng = crate::rng::stream(seed, "sample", 0);
    Ok((0..count).map(|_| cells[rng.random_range(0..cells.len())]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_mask_points_are_inside() {
        let m = ComponentMask::full(1, 8, 8);
        let pts = sample_candidates(&m, 9, 42).unwrap();
        assert_eq!(pts.len(), 9);
        assert!(pts.iter().all(|&p| m.contains(p)));
        assert_eq!(pts, sample_candidates(&m, 9, 42).unwrap());
    }

    #[test]
    fn single_cell_is_forced() {
        let m = ComponentMask::from_fn(2, 8, 8, |c, r| (c, r) == (5, 3));
        assert_eq!(sample_candidates(&m, 3, 0).unwrap(), vec![[5.0, 3.0]; 3]);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let m = ComponentMask::from_fn(4, 8, 8, |_, _| false);
        let err = sample_candidates(&m, 3, 0).unwrap_err();
        assert!(err.to_string().contains("no area"));
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let m = ComponentMask::from_fn(1, 4, 4, |c, _| c < 2);
        let pts = sample_candidates(&m, 8000, 9).unwrap();
        let mut counts = [0usize; 8];
        for p in pts {
            counts[(p[1] as usize) * 2 + p[0] as usize] += 1;
        }
        for c in counts {
            assert!((800..1200).contains(&c), "{counts:?}");
        }
    }
}
