//! Online estimation of the deformation Jacobian.
//!
//! The map from gripper twists to keypoint velocities, `pdot = J u`, is
//! unknown. Each 3x1 block `J[k][j]` (keypoint k, channel j) is modelled as
//! `W[k][j]^T theta(x)` with Gaussian features `theta` of the stacked input
//! `x = [configuration; features]`. The weights come from a ridge
//! least-squares pre-fit over a motor-babbling log and are then refined
//! online by the adaptive law
//! `Wdot[k][j] = theta u_j z_k^T - gamma W[k][j]`,
//! integrated with explicit Euler at the control period. A rank-one secant
//! (Broyden) estimator of the same Jacobian serves as the comparison
//! baseline.

mod broyden;
mod kmeans;

pub use broyden::{least_squares_jacobian, BroydenState, MIN_STEP_NORM};
pub use kmeans::kmeans_centers;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plant::{Configuration, Twist};

/// Default number of Gaussian basis functions.
pub const DEFAULT_BASIS_SIZE: usize = 64;
/// Default ridge regularizer for the pre-fit.
pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Default multiplier on the median pairwise center distance when choosing
/// the shared basis width.
pub const DEFAULT_WIDTH_SCALE: f64 = 1.5;
/// Default cap on the total weight Frobenius norm.
pub const DEFAULT_WEIGHT_CLAMP: f64 = 1e3;

/// One babbling observation: network input, applied twist, and the observed
/// feature velocity over the control period.
#[derive(Debug, Clone, PartialEq)]
pub struct BabbleSample {
    pub x: DVector<f64>,
    pub u: Twist,
    pub pdot: DVector<f64>,
}

/// Stacks `[configuration; features]` into the network input.
pub fn estimator_input(c: &Configuration, p: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(12 + p.len());
    for i in 0..12 {
        x[i] = c[i];
    }
    for i in 0..p.len() {
        x[12 + i] = p[i];
    }
    x
}

#[derive(Debug, Clone)]
pub struct RbfBasis {
    centers: Vec<DVector<f64>>,
    widths: Vec<f64>,
}

impl RbfBasis {
    pub fn new(centers: Vec<DVector<f64>>, widths: Vec<f64>) -> Result<Self> {
        if centers.is_empty() || centers.len() != widths.len() {
            return Err(Error::Config(format!(
                "basis needs matching non-empty centers/widths, got {} and {}",
                centers.len(),
                widths.len()
            )));
        }
        let dim = centers[0].len();
        if centers.iter().any(|c| c.len() != dim) {
            return Err(Error::Config("basis centers must share one dimension".into()));
        }
        if widths.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("basis widths must be positive".into()));
        }
        Ok(RbfBasis { centers, widths })
    }

    /// Shared width set to the median pairwise center distance times
    /// `width_scale`; falls back to 1.0 when the centers are degenerate.
    pub fn from_centers(centers: Vec<DVector<f64>>, width_scale: f64) -> Result<Self> {
        let mut dists = Vec::new();
        for i in 0..centers.len() {
            for j in (i + 1)..centers.len() {
                dists.push((&centers[i] - &centers[j]).norm());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let median = if dists.is_empty() { 0.0 } else { dists[dists.len() / 2] };
        let width = if median > 0.0 { median * width_scale } else { 1.0 };
        let widths = vec![width; centers.len()];
        RbfBasis::new(centers, widths)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.centers[0].len()
    }

    /// Gaussian features `theta_i = exp(-|x - mu_i|^2 / sigma_i^2)`; every
    /// entry lies in (0, 1] with 1 attained exactly at a center.
    pub fn features(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        DVector::from_fn(self.centers.len(), |i, _| {
            let d2 = (x - &self.centers[i]).norm_squared();
            (-d2 / (self.widths[i] * self.widths[i])).exp()
        })
    }
}

/// Per-block output weights of the Jacobian network. Block `(k, j)` is an
/// `m x 3` matrix; the total Frobenius norm is clamped as a numerical guard
/// and every clamp event is counted.
#[derive(Debug, Clone)]
pub struct JacobianWeights {
    blocks: Vec<DMatrix<f64>>,
    keypoints: usize,
    basis_size: usize,
    clamp: f64,
    clamp_events: usize,
}

impl JacobianWeights {
    pub fn zeros(keypoints: usize, basis_size: usize, clamp: f64) -> Self {
        JacobianWeights {
            blocks: vec![DMatrix::zeros(basis_size, 3); keypoints * 12],
            keypoints,
            basis_size,
            clamp,
            clamp_events: 0,
        }
    }

    pub fn keypoints(&self) -> usize {
        self.keypoints
    }

    pub fn basis_size(&self) -> usize {
        self.basis_size
    }

    pub fn block(&self, keypoint: usize, channel: usize) -> &DMatrix<f64> {
        &self.blocks[keypoint * 12 + channel]
    }

    pub fn block_mut(&mut self, keypoint: usize, channel: usize) -> &mut DMatrix<f64> {
        &mut self.blocks[keypoint * 12 + channel]
    }

    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// Sum of squared Frobenius norms over all blocks.
    pub fn frobenius_norm_squared(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    /// Assembles the estimated Jacobian: block `(k, j)` of the result is
    /// `W[k][j]^T theta`, stacked in feature order.
    pub fn predict(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        debug_assert_eq!(theta.len(), self.basis_size);
        let mut j = DMatrix::zeros(3 * self.keypoints, 12);
        for k in 0..self.keypoints {
            for c in 0..12 {
                let block = self.block(k, c);
                for row in 0..3 {
                    let mut acc = 0.0;
                    for b in 0..self.basis_size {
                        acc += block[(b, row)] * theta[b];
                    }
                    j[(3 * k + row, c)] = acc;
                }
            }
        }
        j
    }

    /// Explicit-Euler step of the adaptive law
    /// `Wdot[k][j] = theta u_j z_k^T - gamma W[k][j]`, followed by the
    /// global Frobenius clamp.
    pub fn adapt(
        &mut self,
        theta: &DVector<f64>,
        u: &Twist,
        z: &DVector<f64>,
        gamma: f64,
        dt: f64,
    ) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("adapt dt must be > 0, got {dt}")));
        }
        if !(gamma >= 0.0) {
            return Err(Error::Config(format!("adapt gamma must be >= 0, got {gamma}")));
        }
        if z.len() != 3 * self.keypoints {
            return Err(Error::Config(format!(
                "adapt z has length {}, expected {}",
                z.len(),
                3 * self.keypoints
            )));
        }
        if theta.iter().any(|v| !v.is_finite())
            || u.iter().any(|v| !v.is_finite())
            || z.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("adaptive-law input"));
        }

        let decay = gamma * dt;
        for k in 0..self.keypoints {
            let zk = [z[3 * k], z[3 * k + 1], z[3 * k + 2]];
            for c in 0..12 {
                let drive = u[c] * dt;
                let block = &mut self.blocks[k * 12 + c];
                for b in 0..self.basis_size {
                    let th = theta[b] * drive;
                    for col in 0..3 {
                        let w = block[(b, col)];
                        block[(b, col)] = w - decay * w + th * zk[col];
                    }
                }
            }
        }

        let total = self.frobenius_norm_squared().sqrt();
        if total > self.clamp {
            let scale = self.clamp / total;
            for block in &mut self.blocks {
                *block *= scale;
            }
            self.clamp_events += 1;
        }
        Ok(())
    }
}

/// Ridge least-squares pre-fit of all weight blocks from a babbling log:
/// for every keypoint the stacked weights minimize
/// `sum_s |sum_j (W[k][j]^T theta(x_s)) u_{s,j} - pdot_{k,s}|^2`
/// plus `ridge` times the squared weight norm. The regressor Gram matrix is
/// shared by all keypoints, so one factorization serves every block.
pub fn prefit(
    samples: &[BabbleSample],
    basis: &RbfBasis,
    keypoints: usize,
    ridge: f64,
    clamp: f64,
) -> Result<JacobianWeights> {
    if samples.len() < basis.len() {
        return Err(Error::Config(format!(
            "prefit needs at least {} samples, got {}",
            basis.len(),
            samples.len()
        )));
    }
    if !(ridge > 0.0) {
        return Err(Error::Config(format!("prefit ridge must be > 0, got {ridge}")));
    }
    let m = basis.len();
    let dim = 12 * m;
    let rows = 3 * keypoints;
    for s in samples {
        if s.x.len() != basis.input_dim() || s.pdot.len() != rows {
            return Err(Error::Config("prefit sample dimensions do not match".into()));
        }
        if s.x.iter().chain(s.pdot.iter()).any(|v| !v.is_finite()) || u_nonfinite(&s.u) {
            return Err(Error::NonFinite("prefit sample"));
        }
    }

    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DMatrix::<f64>::zeros(dim, rows);
    let mut regressor = DVector::<f64>::zeros(dim);
    for s in samples {
        let theta = basis.features(&s.x);
        for j in 0..12 {
            for b in 0..m {
                regressor[j * m + b] = s.u[j] * theta[b];
            }
        }
        gram.ger(1.0, &regressor, &regressor, 1.0);
        for r in 0..rows {
            for d in 0..dim {
                rhs[(d, r)] += regressor[d] * s.pdot[r];
            }
        }
    }
    for d in 0..dim {
        gram[(d, d)] += ridge;
    }

    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::Config("prefit normal equations are not positive definite".into())
    })?;
    let solution = chol.solve(&rhs);

    let mut weights = JacobianWeights::zeros(keypoints, m, clamp);
    for k in 0..keypoints {
        for j in 0..12 {
            let block = weights.block_mut(k, j);
            for b in 0..m {
                for col in 0..3 {
                    block[(b, col)] = solution[(j * m + b, 3 * k + col)];
                }
            }
        }
    }
    Ok(weights)
}

fn u_nonfinite(u: &Twist) -> bool {
    u.iter().any(|v| !v.is_finite())
}
