//! Keypoint selection and the feature vector fed to the controller.
//!
//! Keypoints are mesh-node indices tracked with exact correspondence; the
//! feature vector stacks their coordinates as `[x1 y1 z1 x2 y2 z2 ...]`.
//! Farthest point sampling spreads the keypoints evenly over a region of
//! interest, and the Chamfer distance is the shape metric used when
//! comparing point sets.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::plant::Plant;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeypointSet {
    indices: Vec<usize>,
}

impl KeypointSet {
    pub fn new(indices: Vec<usize>, node_count: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("keypoint set must be non-empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &i in &indices {
            if i >= node_count {
                return Err(Error::Config(format!(
                    "keypoint {i} out of range (mesh has {node_count} nodes)"
                )));
            }
            if !seen.insert(i) {
                return Err(Error::Config(format!("duplicate keypoint {i}")));
            }
        }
        Ok(KeypointSet { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Measured features against a fixed target; `error = p - p*` is kept in
/// sync with every update.
#[derive(Debug, Clone)]
pub struct FeatureState {
    p: DVector<f64>,
    target: DVector<f64>,
    error: DVector<f64>,
}

impl FeatureState {
    pub fn new(p: DVector<f64>, target: DVector<f64>) -> Result<Self> {
        if p.len() != target.len() || p.len() % 3 != 0 || p.is_empty() {
            return Err(Error::Config(format!(
                "feature/target lengths must match and be a multiple of 3, got {} and {}",
                p.len(),
                target.len()
            )));
        }
        let error = &p - &target;
        Ok(FeatureState { p, target, error })
    }

    pub fn set_measurement(&mut self, p: DVector<f64>) {
        debug_assert_eq!(p.len(), self.target.len());
        self.error = &p - &self.target;
        self.p = p;
    }

    pub fn set_target(&mut self, target: DVector<f64>) {
        debug_assert_eq!(target.len(), self.p.len());
        self.error = &self.p - &target;
        self.target = target;
    }

    pub fn measurement(&self) -> &DVector<f64> {
        &self.p
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn error(&self) -> &DVector<f64> {
        &self.error
    }
}

/// Greedy farthest point sampling over `points`, seeded at `start`.
/// Each round adds the point with the largest min-distance to the selected
/// set; distance ties go to the lowest index, so the result is a pure
/// function of `(points, n, start)`.
pub fn farthest_point_sample(points: &[Vector3<f64>], n: usize, start: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Config("cannot sample zero keypoints".into()));
    }
    if n > points.len() {
        return Err(Error::Config(format!(
            "cannot sample {n} keypoints from {} points",
            points.len()
        )));
    }
    if start >= points.len() {
        return Err(Error::Config(format!("start index {start} out of range")));
    }

    let mut selected = Vec::with_capacity(n);
    let mut min_dist: Vec<f64> = points.iter().map(|p| (p - points[start]).norm_squared()).collect();
    selected.push(start);
    while selected.len() < n {
        let mut best = None;
        let mut best_dist = -1.0;
        for (i, &d) in min_dist.iter().enumerate() {
            if selected.contains(&i) {
                continue;
            }
            if d > best_dist {
                best_dist = d;
                best = Some(i);
            }
        }
        let next = best.expect("n <= points.len() guarantees a candidate");
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = (points[i] - points[next]).norm_squared();
            if nd < *d {
                *d = nd;
            }
        }
        selected.push(next);
    }
    Ok(selected)
}

/// Symmetric squared-distance Chamfer distance:
/// mean over A of min squared distance to B, plus the same with the roles
/// swapped.
pub fn chamfer_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("chamfer distance needs non-empty point sets".into()));
    }
    let one_way = |from: &[Vector3<f64>], to: &[Vector3<f64>]| -> f64 {
        let total: f64 = from
            .iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p - q).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / from.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

/// Stacks the tracked node coordinates in keypoint order.
pub fn extract_features(plant: &Plant, keypoints: &KeypointSet) -> DVector<f64> {
    let mut p = DVector::zeros(3 * keypoints.len());
    for (k, &i) in keypoints.indices().iter().enumerate() {
        let node = plant.mesh.nodes[i];
        p[3 * k] = node.x;
        p[3 * k + 1] = node.y;
        p[3 * k + 2] = node.z;
    }
    p
}

/// Same as `extract_features` with additive Gaussian sensing noise of the
/// given standard deviation. A std of zero reads exactly.
pub fn extract_features_noisy<R: Rng>(
    plant: &Plant,
    keypoints: &KeypointSet,
    noise_std: f64,
    rng: &mut R,
) -> DVector<f64> {
    let mut p = extract_features(plant, keypoints);
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("std validated by scenario");
        for v in p.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line(n: usize) -> Vec<Vector3<f64>> {
        (0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn fps_collinear_extremes() {
        let pts = line(10);
        assert_eq!(farthest_point_sample(&pts, 2, 0).unwrap(), vec![0, 9]);
    }

    #[test]
    fn fps_tie_breaks_to_lowest_index() {
        // With {0, 9} selected, indices 4 and 5 both sit at min-distance 4;
        // the lower index must win.
        let pts = line(10);
        assert_eq!(farthest_point_sample(&pts, 3, 0).unwrap(), vec![0, 9, 4]);
    }

    #[test]
    fn fps_full_selection_returns_everything() {
        let pts = line(6);
        for start in 0..6 {
            let mut got = farthest_point_sample(&pts, 6, start).unwrap();
            got.sort_unstable();
            assert_eq!(got, vec![0, 1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn fps_rejects_oversampling() {
        assert!(farthest_point_sample(&line(3), 4, 0).is_err());
        assert!(farthest_point_sample(&line(3), 2, 7).is_err());
    }

    #[test]
    fn chamfer_identical_sets_and_unit_offset() {
        let a = line(5);
        assert_relative_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        let p = vec![Vector3::zeros()];
        let q = vec![Vector3::new(1.0, 0.0, 0.0)];
        assert_relative_eq!(chamfer_distance(&p, &q).unwrap(), 2.0);
        assert!(chamfer_distance(&p, &[]).is_err());
    }

    #[test]
    fn feature_state_tracks_error() {
        let p = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let target = DVector::from_vec(vec![0.5, 2.0, 4.0]);
        let mut fs = FeatureState::new(p, target).unwrap();
        assert_relative_eq!(fs.error()[0], 0.5);
        assert_relative_eq!(fs.error()[2], -1.0);
        fs.set_measurement(DVector::from_vec(vec![0.5, 2.0, 4.0]));
        assert!(fs.error().iter().all(|&e| e == 0.0));
        fs.set_target(DVector::from_vec(vec![0.0, 0.0, 0.0]));
        assert_relative_eq!(fs.error()[1], 2.0);
    }
}
