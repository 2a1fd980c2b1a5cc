//! Rank-one secant baseline for the deformation Jacobian.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::plant::Twist;

/// Updates are skipped below this step norm; a vanishing denominator says
/// nothing about the secant direction.
pub const MIN_STEP_NORM: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct BroydenState {
    jacobian: DMatrix<f64>,
    damping: f64,
}

impl BroydenState {
    pub fn new(jacobian: DMatrix<f64>, damping: f64) -> Result<Self> {
        if jacobian.ncols() != 12 {
            return Err(Error::Config(format!(
                "broyden jacobian must have 12 columns, got {}",
                jacobian.ncols()
            )));
        }
        if !(damping > 0.0 && damping <= 1.0) {
            return Err(Error::Config(format!("broyden damping must lie in (0, 1], got {damping}")));
        }
        if jacobian.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("broyden jacobian"));
        }
        Ok(BroydenState { jacobian, damping })
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    /// Rank-one secant update
    /// `J <- J + damping * (dp - J dq) dq^T / (dq^T dq)`,
    /// skipped when `|dq|` is below `MIN_STEP_NORM`.
    pub fn update(&mut self, dp: &nalgebra::DVector<f64>, dq: &Twist) {
        let denom = dq.norm_squared();
        if denom.sqrt() <= MIN_STEP_NORM {
            return;
        }
        let residual = dp - &self.jacobian * dq;
        let scale = self.damping / denom;
        for r in 0..self.jacobian.nrows() {
            for c in 0..12 {
                self.jacobian[(r, c)] += scale * residual[r] * dq[c];
            }
        }
    }
}

/// Ordinary least-squares fit of a constant Jacobian to `(u, pdot)` pairs,
/// used to seed the Broyden baseline from the babbling log. A small ridge
/// keeps the 12x12 Gram matrix invertible under poor excitation.
pub fn least_squares_jacobian(pairs: &[(Twist, nalgebra::DVector<f64>)], rows: usize) -> DMatrix<f64> {
    let mut gram = nalgebra::SMatrix::<f64, 12, 12>::zeros();
    let mut cross = DMatrix::<f64>::zeros(rows, 12);
    for (u, pdot) in pairs {
        gram += u * u.transpose();
        for r in 0..rows {
            for c in 0..12 {
                cross[(r, c)] += pdot[r] * u[c];
            }
        }
    }
    for i in 0..12 {
        gram[(i, i)] += 1e-12;
    }
    let inv = gram.try_inverse().expect("ridge keeps the Gram matrix invertible");
    let mut j = DMatrix::zeros(rows, 12);
    for r in 0..rows {
        for c in 0..12 {
            let mut acc = 0.0;
            for k in 0..12 {
                acc += cross[(r, k)] * inv[(k, c)];
            }
            j[(r, c)] = acc;
        }
    }
    j
}
