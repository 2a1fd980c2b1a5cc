//! Lloyd's algorithm for placing the RBF centers.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const SHIFT_TOLERANCE: f64 = 1e-9;

/// K-means over the sample vectors, initialized from `m` distinct samples
/// drawn with the provided RNG. Assignment ties go to the lowest center
/// index and empty clusters keep their previous centroid, so the result is
/// deterministic given the RNG state.
pub fn kmeans_centers<R: Rng>(samples: &[DVector<f64>], m: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    if m == 0 {
        return Err(Error::Config("k-means needs at least one center".into()));
    }
    if samples.len() < m {
        return Err(Error::Config(format!(
            "k-means needs at least {m} samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::Config("k-means samples must share one dimension".into()));
    }

    let mut centers: Vec<DVector<f64>> = sample(rng, samples.len(), m)
        .into_iter()
        .map(|i| samples[i].clone())
        .collect();

    let mut assignment = vec![0usize; samples.len()];
    for _ in 0..MAX_ITERATIONS {
        for (s, a) in samples.iter().zip(assignment.iter_mut()) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = (s - center).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            *a = best;
        }

        let mut sums = vec![DVector::<f64>::zeros(dim); m];
        let mut counts = vec![0usize; m];
        for (s, &a) in samples.iter().zip(assignment.iter()) {
            sums[a] += s;
            counts[a] += 1;
        }

        let mut shift: f64 = 0.0;
        for c in 0..m {
            if counts[c] == 0 {
                continue;
            }
            let next = &sums[c] / counts[c] as f64;
            shift = shift.max((&next - &centers[c]).norm());
            centers[c] = next;
        }
        if shift <= SHIFT_TOLERANCE {
            break;
        }
    }
    Ok(centers)
}
