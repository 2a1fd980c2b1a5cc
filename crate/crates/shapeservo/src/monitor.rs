//! Runtime verification of the stability argument.
//!
//! The closed loop is supposed to keep every transfer error inside [0, 1),
//! which makes the barrier value V1 finite, satisfies the logarithm bound
//! of the lemma below, and keeps the per-channel damping inequality of the
//! boundedness proof non-positive. All three are cheap enough to evaluate
//! on every logged step, so instead of trusting the analysis the harness
//! re-checks it against the numbers the run actually produced.

use nalgebra::DVector;
use serde::Serialize;

use crate::controller::TransferState;
use crate::error::{Error, Result};

/// Barrier Lyapunov value `V1 = sum_i 1/2 ln(1 / (1 - xi_i^2))`. Only the
/// active boundary ratio of each channel is tracked, so one term per
/// channel. Finite exactly when every |xi_i| < 1.
pub fn barrier_v1(xi: &DVector<f64>) -> Result<f64> {
    let mut v1 = 0.0;
    for (i, &x) in xi.iter().enumerate() {
        if x.abs() >= 1.0 {
            return Err(Error::BarrierViolation { channel: i, xi: x });
        }
        v1 += -0.5 * (-x * x).ln_1p();
    }
    Ok(v1)
}

/// Checks the strict logarithm bound
/// `ln(1/(1 - v^{2y})) < v^{2y} / (1 - v^{2y})`
/// for `0 < v < 1` and a positive integer `y`.
///
/// The margin between the two sides is `u^2/2 + O(u^3)` with `u = v^{2y}`,
/// which sinks below f64 cancellation for tiny `u`; there the difference is
/// evaluated through its series `sum_{k>=2} u^k / (k (k-1))`, every term of
/// which is positive. When `u` rounds up to 1 the right side diverges an
/// order faster than the left, so the bound holds as well.
pub fn lemma1_check(v: f64, y: u32) -> Result<bool> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Config(format!("lemma domain requires 0 < v < 1, got {v}")));
    }
    if y == 0 {
        return Err(Error::Config("lemma domain requires a positive integer y".into()));
    }
    let u = v.powi(2 * y as i32);
    if u >= 1.0 {
        return Ok(true);
    }
    if u < 1e-4 {
        // u = 0.0 here means v^{2y} underflowed; the series is positive
        // for every positive u, the representation just cannot show it.
        if u == 0.0 {
            return Ok(true);
        }
        let series = u * u * (1.0 / 2.0 + u * (1.0 / 6.0 + u * (1.0 / 12.0)));
        return Ok(series > 0.0);
    }
    let lhs = -(-u).ln_1p();
    let rhs = u / (1.0 - u);
    Ok(lhs < rhs)
}

#[derive(Debug, Clone, Serialize)]
pub struct ViolationReport {
    pub count: usize,
    /// Smallest distance to either boundary over all channels; negative
    /// once a channel has left the funnel.
    pub worst_margin: f64,
    pub channels: Vec<usize>,
}

/// Flags every channel sitting on or outside its boundaries. Containment
/// is strict: `e_i = phi_b` already counts as a violation because the
/// barrier transform is only defined on the open interval.
pub fn check_bounds(e: &DVector<f64>, phi_a: &DVector<f64>, phi_b: &DVector<f64>) -> ViolationReport {
    let mut report = ViolationReport { count: 0, worst_margin: f64::INFINITY, channels: Vec::new() };
    for i in 0..e.len() {
        let margin = (phi_b[i] - e[i]).min(e[i] - phi_a[i]);
        report.worst_margin = report.worst_margin.min(margin);
        if e[i] <= phi_a[i] || e[i] >= phi_b[i] {
            report.count += 1;
            report.channels.push(i);
        }
    }
    report
}

/// Per-channel damping inequality of the boundedness argument:
/// `-eta z e - (xi^2 / (1 - xi^2)) (mu_dot / mu) <= 0`.
/// Must hold at every in-bounds state because `z e = xi^2 / (1 - xi^2)` and
/// `eta` dominates `|mu_dot / mu|`.
pub fn appendix_inequality_check(xi: f64, e: f64, z: f64, eta: f64, mu: f64, mu_dot: f64) -> bool {
    let lhs = -eta * z * e - (xi * xi / (1.0 - xi * xi)) * (mu_dot / mu);
    lhs <= 0.0
}

/// One monitor sample, logged per control step.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityRecord {
    pub t: f64,
    /// Barrier Lyapunov value; infinite on steps with a funnel violation.
    pub v1: f64,
    /// Total squared Frobenius norm of the estimator weights.
    pub weight_norm_sq: f64,
    pub max_xi: f64,
    /// min over channels of `e_i - phi_a_i`.
    pub margin_lower: f64,
    /// min over channels of `phi_b_i - e_i`.
    pub margin_upper: f64,
    /// Channels with `xi_i >= 1` on this step.
    pub violations: usize,
    /// Whether the damping inequality held on every channel.
    pub appendix_ok: bool,
}

impl StabilityRecord {
    /// Assembles the record from one evaluated step. Violations are judged
    /// on the transfer errors so that `v1` is finite exactly when the step
    /// is violation-free.
    pub fn from_step(t: f64, e: &DVector<f64>, state: &TransferState, weight_norm_sq: f64) -> Self {
        let violations = state.xi.iter().filter(|&&x| x >= 1.0).count();
        let v1 = if violations == 0 {
            barrier_v1(&state.xi).expect("all transfer errors below one")
        } else {
            f64::INFINITY
        };
        let mut margin_lower = f64::INFINITY;
        let mut margin_upper = f64::INFINITY;
        let mut appendix_ok = true;
        for i in 0..e.len() {
            margin_lower = margin_lower.min(e[i] - state.phi_a[i]);
            margin_upper = margin_upper.min(state.phi_b[i] - e[i]);
            if state.xi[i] < 1.0 {
                appendix_ok &= appendix_inequality_check(
                    state.xi[i],
                    e[i],
                    state.z[i],
                    state.eta[i],
                    state.mu[i],
                    state.mu_dot[i],
                );
            }
        }
        StabilityRecord {
            t,
            v1,
            weight_norm_sq,
            max_xi: state.xi.amax(),
            margin_lower,
            margin_upper,
            violations,
            appendix_ok,
        }
    }
}
