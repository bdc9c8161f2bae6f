use rand::seq::index;

use super::Xy;
use crate::error::{Error, Result};

pub const MAX_LLOYD_ITERATIONS: usize = 100;

/// Result of a seeded Lloyd run.
#[derive(Debug, Clone)]
pub struct KMeansOutcome {
    /// Cluster means after the last update.
    pub centers: Vec<Xy>,
    /// Each center replaced by its nearest candidate (lowest index on ties).
    pub snapped: Vec<Xy>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squared distances, recorded after every assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: Xy, b: Xy) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: Xy, centers: &[Xy]) -> usize {
    let mut best = 0;
    for (i, &c) in centers.iter().enumerate().skip(1) {
        if dist2(p, c) < dist2(p, centers[best]) {
            best = i;
        }
    }
    best
}

/// Lloyd's iteration from `k` distinct seeded candidates until the assignment
/// stops changing or [`MAX_LLOYD_ITERATIONS`] is reached.
pub fn kmeans(candidates: &[Xy], k: usize, seed: u64) -> Result<KMeansOutcome> {
    if k == 0 || k > candidates.len() {
        return Err(Error::invalid(format!(
            "cannot form {k} clusters from {} candidates",
            candidates.len()
        )));
    }
    let mut rng = crate::rng::stream(seed, "kmeans-init", 0);
    let mut centers: Vec<Xy> = index::sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect();

    let mut assignment: Vec<usize> = candidates.iter().map(|&p| nearest(p, &centers)).collect();
    let objective_of = |assignment: &[usize], centers: &[Xy]| {
        candidates.iter().zip(assignment).map(|(&p, &a)| dist2(p, centers[a])).sum::<f64>()
    };
    let mut objective = vec![objective_of(&assignment, &centers)];
    let mut iterations = 0;

    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut sums = vec![[0.0; 2]; k];
        let mut counts = vec![0usize; k];
        for (&p, &a) in candidates.iter().zip(&assignment) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        for ((c, s), &n) in centers.iter_mut().zip(&sums).zip(&counts) {
            // Empty clusters keep their previous center.
            if n > 0 {
                *c = [s[0] / n as f64, s[1] / n as f64];
            }
        }
        let next: Vec<usize> = candidates.iter().map(|&p| nearest(p, &centers)).collect();
        objective.push(objective_of(&next, &centers));
        if next == assignment {
            break;
        }
        assignment = next;
    }

    let snapped = centers.iter().map(|&c| candidates[nearest(c, candidates)]).collect();
    Ok(KMeansOutcome { centers, snapped, assignment, objective, iterations })
}

/// `k` well-spread control points, each one of the candidates.
pub fn kmeans_reduce(candidates: &[Xy], k: usize, seed: u64) -> Result<Vec<Xy>> {
    Ok(kmeans(candidates, k, seed)?.snapped)
}
