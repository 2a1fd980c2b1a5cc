//! Prescribed-performance control in feature space.
//!
//! Every error channel gets a shrinking funnel
//! `mu(t) = (mu0 - mu_inf) e^{-alpha (t - t0)} + mu_inf` with boundaries
//! `phi_a = -delta mu < 0 < phi_b = delta mu`. The transfer error
//! `xi = e / phi_active` normalizes the error by its active boundary; the
//! transient variable `z = xi^2 / ((1 - xi^2) e)` blows up as the error
//! approaches either boundary and is the barrier term of the control law
//!
//! `u = -pinv(J_hat) [ (K1 + diag(eta)) e + Kz z ]`.
//!
//! The time-varying gain `eta_i = sqrt(2 (mu_dot/mu)^2 + K_eta)` dominates
//! the boundary shrink rate, which is exactly what the barrier analysis
//! needs. The pseudo-inverse is damped, and the commanded twist is clamped
//! by scaling the whole vector so its direction survives saturation.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::Twist;

/// Default damping for the pseudo-inverse.
pub const DEFAULT_PINV_DAMPING: f64 = 1e-3;
/// Default control period in seconds.
pub const DEFAULT_DT: f64 = 0.05;
/// Margin applied when auto-widening an envelope around the current error.
pub const RESET_MARGIN: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceEnvelope {
    /// Maximum allowable error at the anchor time, m.
    pub mu0: f64,
    /// Steady-state error bound, m.
    pub mu_inf: f64,
    /// Convergence rate, 1/s.
    pub alpha: f64,
    /// Boundary scale; the funnel is `(-delta mu, delta mu)`.
    pub delta: f64,
    /// Anchor time, s.
    pub t0: f64,
}

impl PerformanceEnvelope {
    pub fn new(mu0: f64, mu_inf: f64, alpha: f64, delta: f64, t0: f64) -> Result<Self> {
        if !(mu0 > mu_inf && mu_inf > 0.0) {
            return Err(Error::Config(format!(
                "envelope requires mu0 > mu_inf > 0, got mu0 = {mu0}, mu_inf = {mu_inf}"
            )));
        }
        if !(alpha > 0.0) {
            return Err(Error::Config(format!("envelope alpha must be > 0, got {alpha}")));
        }
        if !(delta > 0.0) {
            return Err(Error::Config(format!("envelope delta must be > 0, got {delta}")));
        }
        Ok(PerformanceEnvelope { mu0, mu_inf, alpha, delta, t0 })
    }

    /// `(mu, mu_dot)` at time `t >= t0`; strictly decreasing toward mu_inf.
    pub fn value(&self, t: f64) -> Result<(f64, f64)> {
        if t < self.t0 {
            return Err(Error::Config(format!(
                "envelope evaluated at t = {t} before its anchor t0 = {}",
                self.t0
            )));
        }
        let decay = (-(self.alpha) * (t - self.t0)).exp();
        let mu = (self.mu0 - self.mu_inf) * decay + self.mu_inf;
        let mu_dot = -self.alpha * (self.mu0 - self.mu_inf) * decay;
        Ok((mu, mu_dot))
    }

    /// Lower and upper error boundaries `(-delta mu, delta mu)`.
    pub fn boundaries(&self, t: f64) -> Result<(f64, f64)> {
        let (mu, _) = self.value(t)?;
        Ok((-self.delta * mu, self.delta * mu))
    }

    /// Re-anchors the funnel at `t_now`, widening `mu0` so the current
    /// error starts strictly inside the boundaries with margin.
    pub fn reset(&mut self, t_now: f64, abs_error: f64, configured_mu0: f64) {
        self.t0 = t_now;
        self.mu0 = configured_mu0.max(abs_error / self.delta * RESET_MARGIN);
    }
}

#[derive(Debug, Clone)]
pub struct ControllerGains {
    /// Diagonal of K1, one entry per error channel.
    pub k1: DVector<f64>,
    /// Diagonal of Kz.
    pub kz: DVector<f64>,
    pub k_eta: f64,
    /// Adaptive leak shared with the estimator, 1/s.
    pub gamma: f64,
    /// Pseudo-inverse damping.
    pub lambda_pinv: f64,
    /// Per-channel twist magnitude limit.
    pub speed_limit: f64,
}

impl ControllerGains {
    pub fn uniform(
        channels: usize,
        k1: f64,
        kz: f64,
        k_eta: f64,
        gamma: f64,
        lambda_pinv: f64,
        speed_limit: f64,
    ) -> Result<Self> {
        let gains = ControllerGains {
            k1: DVector::from_element(channels, k1),
            kz: DVector::from_element(channels, kz),
            k_eta,
            gamma,
            lambda_pinv,
            speed_limit,
        };
        gains.validate()?;
        Ok(gains)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1.len() != self.kz.len() || self.k1.is_empty() {
            return Err(Error::Config("gain diagonals must share a non-zero length".into()));
        }
        if self.k1.iter().chain(self.kz.iter()).any(|&g| !(g > 0.0)) {
            return Err(Error::Config("gain diagonals must be strictly positive".into()));
        }
        if !(self.k_eta > 0.0) {
            return Err(Error::Config(format!("K_eta must be > 0, got {}", self.k_eta)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.lambda_pinv >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda_pinv)));
        }
        if !(self.speed_limit > 0.0) {
            return Err(Error::Config(format!("speed limit must be > 0, got {}", self.speed_limit)));
        }
        Ok(())
    }
}

/// Transfer error of one channel: the error over its active boundary.
/// Non-negative by construction; values >= 1 mean the funnel was left and
/// are returned as-is for the monitor to flag.
pub fn transfer_error(e: f64, phi_a: f64, phi_b: f64) -> f64 {
    debug_assert!(phi_a < 0.0 && phi_b > 0.0);
    if e > 0.0 {
        e / phi_b
    } else {
        e / phi_a
    }
}

/// Transient barrier variable of one channel. Computed in the equivalent
/// form `z = e / (phi^2 (1 - xi^2))` which has no 0/0 at e = 0.
pub fn z_value(e: f64, phi_a: f64, phi_b: f64, channel: usize) -> Result<f64> {
    let xi = transfer_error(e, phi_a, phi_b);
    if xi >= 1.0 {
        return Err(Error::BarrierViolation { channel, xi });
    }
    let phi = if e > 0.0 { phi_b } else { phi_a };
    Ok(e / (phi * phi * (1.0 - xi * xi)))
}

/// Per-channel state the control law and the monitor both consume.
#[derive(Debug, Clone)]
pub struct TransferState {
    pub xi: DVector<f64>,
    pub z: DVector<f64>,
    pub eta: DVector<f64>,
    pub phi_a: DVector<f64>,
    pub phi_b: DVector<f64>,
    pub mu: DVector<f64>,
    pub mu_dot: DVector<f64>,
    /// First channel whose transfer error left [0, 1), if any. `z` entries
    /// of violating channels are not usable.
    pub violation: Option<(usize, f64)>,
}

/// Evaluates boundaries, transfer errors, barrier variables and the
/// time-varying gain for every channel. A funnel violation does not abort
/// the evaluation: it is recorded so baseline (non-barrier) controllers can
/// keep running while the monitor flags the step.
pub fn evaluate_transfer(
    e: &DVector<f64>,
    envelopes: &[PerformanceEnvelope],
    t: f64,
    k_eta: f64,
) -> Result<TransferState> {
    if e.len() != envelopes.len() {
        return Err(Error::Config(format!(
            "{} error channels but {} envelopes",
            e.len(),
            envelopes.len()
        )));
    }
    let channels = e.len();
    let mut state = TransferState {
        xi: DVector::zeros(channels),
        z: DVector::zeros(channels),
        eta: DVector::zeros(channels),
        phi_a: DVector::zeros(channels),
        phi_b: DVector::zeros(channels),
        mu: DVector::zeros(channels),
        mu_dot: DVector::zeros(channels),
        violation: None,
    };
    for i in 0..channels {
        let (mu, mu_dot) = envelopes[i].value(t)?;
        let (phi_a, phi_b) = (-envelopes[i].delta * mu, envelopes[i].delta * mu);
        let xi = transfer_error(e[i], phi_a, phi_b);
        state.mu[i] = mu;
        state.mu_dot[i] = mu_dot;
        state.phi_a[i] = phi_a;
        state.phi_b[i] = phi_b;
        state.xi[i] = xi;
        state.eta[i] = eta_gain_from_ratio(mu_dot / mu, k_eta);
        if xi >= 1.0 {
            if state.violation.is_none() {
                state.violation = Some((i, xi));
            }
        } else {
            let phi = if e[i] > 0.0 { phi_b } else { phi_a };
            state.z[i] = e[i] / (phi * phi * (1.0 - xi * xi));
        }
    }
    Ok(state)
}

/// Barrier variables for all channels; errors out on the first funnel
/// violation since `z` is undefined there.
pub fn z_vector(e: &DVector<f64>, envelopes: &[PerformanceEnvelope], t: f64) -> Result<DVector<f64>> {
    let mut z = DVector::zeros(e.len());
    for i in 0..e.len() {
        let (phi_a, phi_b) = envelopes[i].boundaries(t)?;
        z[i] = z_value(e[i], phi_a, phi_b, i)?;
    }
    Ok(z)
}

/// `eta_i = sqrt((phi_dot_a/phi_a)^2 + (phi_dot_b/phi_b)^2 + K_eta)`;
/// both boundary ratios equal `mu_dot/mu`, hence the factor two. Always at
/// least `sqrt(K_eta)` and at least `|mu_dot/mu|`.
pub fn eta_gain(envelope: &PerformanceEnvelope, t: f64, k_eta: f64) -> Result<f64> {
    let (mu, mu_dot) = envelope.value(t)?;
    Ok(eta_gain_from_ratio(mu_dot / mu, k_eta))
}

fn eta_gain_from_ratio(ratio: f64, k_eta: f64) -> f64 {
    (2.0 * ratio * ratio + k_eta).sqrt()
}

/// Damped pseudo-inverse `J^T (J J^T + lambda^2 I)^{-1}`.
pub fn damped_pinv(j: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let mut a = j * j.transpose();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda * lambda;
    }
    let chol = Cholesky::new(a).ok_or_else(|| {
        Error::Config("J J^T + lambda^2 I is singular; increase the damping".into())
    })?;
    let solved = chol.solve(&j.clone_owned());
    Ok(solved.transpose())
}

/// The prescribed-performance control law
/// `u = -pinv(J_hat) [(K1 + diag(eta)) e + Kz z]`, clamped to the speed
/// limit by direction-preserving scaling.
pub fn control(
    j_hat: &DMatrix<f64>,
    e: &DVector<f64>,
    z: &DVector<f64>,
    eta: &DVector<f64>,
    gains: &ControllerGains,
) -> Result<Twist> {
    let mut drive = DVector::zeros(e.len());
    for i in 0..e.len() {
        drive[i] = (gains.k1[i] + eta[i]) * e[i] + gains.kz[i] * z[i];
    }
    servo_twist(j_hat, &drive, gains)
}

/// Ablation of the control law with the barrier terms removed:
/// `u = -pinv(J_hat) K1 e`, clamped identically.
pub fn baseline_control(j_hat: &DMatrix<f64>, e: &DVector<f64>, gains: &ControllerGains) -> Result<Twist> {
    let mut drive = DVector::zeros(e.len());
    for i in 0..e.len() {
        drive[i] = gains.k1[i] * e[i];
    }
    servo_twist(j_hat, &drive, gains)
}

fn servo_twist(j_hat: &DMatrix<f64>, drive: &DVector<f64>, gains: &ControllerGains) -> Result<Twist> {
    if j_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("estimated jacobian"));
    }
    if drive.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("control drive"));
    }
    if j_hat.nrows() != drive.len() || j_hat.ncols() != 12 {
        return Err(Error::Config(format!(
            "jacobian is {}x{}, drive has {} channels",
            j_hat.nrows(),
            j_hat.ncols(),
            drive.len()
        )));
    }
    let mut a = j_hat * j_hat.transpose();
    for i in 0..a.nrows() {
        a[(i, i)] += gains.lambda_pinv * gains.lambda_pinv;
    }
    let chol = Cholesky::new(a).ok_or_else(|| {
        Error::Config("J J^T + lambda^2 I is singular; increase the damping".into())
    })?;
    let y = chol.solve(drive);
    let raw = -(j_hat.transpose() * y);
    let mut u = Twist::zeros();
    for i in 0..12 {
        u[i] = raw[i];
    }
    Ok(clamp_twist(&u, gains.speed_limit))
}

/// Scales the whole twist so no channel exceeds the limit; the commanded
/// direction is preserved.
pub fn clamp_twist(u: &Twist, limit: f64) -> Twist {
    let max = u.amax();
    if max > limit {
        u * (limit / max)
    } else {
        *u
    }
}

/// Re-anchors every envelope at `t_now` against the fresh error, widening
/// `mu0` where the configured value would not contain it.
pub fn reset_stage(
    envelopes: &mut [PerformanceEnvelope],
    t_now: f64,
    e: &DVector<f64>,
    configured_mu0: &[f64],
) {
    debug_assert_eq!(envelopes.len(), e.len());
    debug_assert_eq!(envelopes.len(), configured_mu0.len());
    for i in 0..envelopes.len() {
        envelopes[i].reset(t_now, e[i].abs(), configured_mu0[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn task_a_x() -> PerformanceEnvelope {
        PerformanceEnvelope::new(0.1, 0.01, 0.2, 1.0, 0.0).unwrap()
    }

    #[test]
    fn envelope_values_at_anchor_and_five_seconds() {
        let env = task_a_x();
        let (mu, mu_dot) = env.value(0.0).unwrap();
        assert_relative_eq!(mu, 0.1, epsilon = 1e-15);
        assert_relative_eq!(mu_dot, -0.018, epsilon = 1e-15);
        let (mu5, _) = env.value(5.0).unwrap();
        assert_relative_eq!(mu5, 0.09 * (-1.0f64).exp() + 0.01, epsilon = 1e-15);
        assert_relative_eq!(mu5, 0.043109149705429834, epsilon = 1e-12);
    }

    #[test]
    fn envelope_decreases_to_floor() {
        let env = task_a_x();
        let mut last = f64::INFINITY;
        for k in 0..200 {
            let (mu, mu_dot) = env.value(k as f64 * 0.5).unwrap();
            assert!(mu < last);
            assert!(mu > env.mu_inf);
            assert!(mu_dot < 0.0);
            last = mu;
        }
        let (mu, mu_dot) = env.value(1e4).unwrap();
        assert_relative_eq!(mu, 0.01, epsilon = 1e-12);
        assert_relative_eq!(mu_dot, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn envelope_rejects_times_before_anchor_and_bad_parameters() {
        let env = PerformanceEnvelope::new(0.1, 0.01, 0.2, 1.0, 2.0).unwrap();
        assert!(env.value(1.0).is_err());
        assert!(PerformanceEnvelope::new(0.01, 0.1, 0.2, 1.0, 0.0).is_err());
        assert!(PerformanceEnvelope::new(0.1, 0.01, 0.0, 1.0, 0.0).is_err());
        assert!(PerformanceEnvelope::new(0.1, 0.01, 0.2, 0.0, 0.0).is_err());
    }

    #[test]
    fn boundaries_are_symmetric() {
        let env = task_a_x();
        for k in 0..50 {
            let (a, b) = env.boundaries(k as f64 * 0.3).unwrap();
            assert_relative_eq!(a, -b, epsilon = 1e-15);
            assert!(a < 0.0 && b > 0.0);
        }
        let wide = PerformanceEnvelope::new(0.05, 0.01, 0.2, 2.0, 0.0).unwrap();
        let (a, b) = wide.boundaries(0.0).unwrap();
        assert_relative_eq!(a, -0.1, epsilon = 1e-15);
        assert_relative_eq!(b, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn transfer_error_is_symmetric_in_sign() {
        assert_eq!(transfer_error(0.0, -0.1, 0.1), 0.0);
        assert_relative_eq!(transfer_error(0.05, -0.1, 0.1), 0.5);
        assert_relative_eq!(transfer_error(-0.05, -0.1, 0.1), 0.5);
        assert!(transfer_error(0.2, -0.1, 0.1) >= 1.0);
    }

    #[test]
    fn z_matches_hand_evaluation() {
        // delta mu = 0.1, e = 0.05: xi = 0.5, z = 0.25 / (0.75 * 0.05).
        let z = z_value(0.05, -0.1, 0.1, 0).unwrap();
        assert_relative_eq!(z, 0.25 / (0.75 * 0.05), epsilon = 1e-12);
        assert_relative_eq!(z, 0.05 / (0.01 * 0.75), epsilon = 1e-12);
        assert_eq!(z_value(0.0, -0.1, 0.1, 0).unwrap(), 0.0);
        assert!(z_value(0.1, -0.1, 0.1, 3).is_err());
    }

    #[test]
    fn z_blows_up_monotonically_toward_the_boundary() {
        let mut last = 0.0;
        // Geometric approach e -> phi_b.
        for k in 1..40 {
            let e = 0.1 * (1.0 - 0.5f64.powi(k));
            let z = z_value(e, -0.1, 0.1, 0).unwrap();
            assert!(z > last);
            last = z;
        }
        assert!(last > 1e10);
    }

    #[test]
    fn eta_examples_from_the_presets() {
        // Steady state: mu_dot -> 0.
        assert_relative_eq!(eta_gain_from_ratio(0.0, 0.5), 0.5f64.sqrt(), epsilon = 1e-12);
        // Anchor of the task-A x funnel: mu_dot/mu = -0.18.
        let env = task_a_x();
        let eta = eta_gain(&env, 0.0, 0.5).unwrap();
        assert_relative_eq!(eta, (2.0 * 0.18f64.powi(2) + 0.5).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(eta, 0.75153, epsilon = 1e-5);
    }

    #[test]
    fn eta_dominates_the_boundary_rate() {
        let env = task_a_x();
        for k in 0..100 {
            let t = k as f64 * 0.2;
            let (mu, mu_dot) = env.value(t).unwrap();
            let eta = eta_gain(&env, t, 0.5).unwrap();
            assert!(eta >= (mu_dot / mu).abs());
            assert!(eta >= 0.5f64.sqrt() - 1e-15);
        }
    }

    #[test]
    fn control_is_zero_at_zero_error() {
        let j = DMatrix::<f64>::identity(3, 12);
        let gains = ControllerGains::uniform(3, 2.0, 1.0, 0.5, 0.0, 1e-3, 0.03).unwrap();
        let u = control(
            &j,
            &DVector::zeros(3),
            &DVector::zeros(3),
            &DVector::from_element(3, 0.7),
            &gains,
        )
        .unwrap();
        assert_eq!(u, Twist::zeros());
    }

    #[test]
    fn control_matches_hand_pseudo_inverse_for_identity_block() {
        // J = [I3 | 0], lambda = 0: pinv is [I3; 0], so the first three
        // channels carry -(K1 + eta) e - z and the rest stay zero.
        let mut j = DMatrix::zeros(3, 12);
        for i in 0..3 {
            j[(i, i)] = 1.0;
        }
        let mut gains = ControllerGains::uniform(3, 2.0, 1.0, 0.5, 0.0, 0.0, 10.0).unwrap();
        gains.lambda_pinv = 0.0;
        let e = DVector::from_vec(vec![0.02, -0.01, 0.005]);
        let z = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let eta = DVector::from_element(3, 0.75);
        let u = control(&j, &e, &z, &eta, &gains).unwrap();
        for i in 0..3 {
            assert_relative_eq!(u[i], -(2.0 + 0.75) * e[i] - z[i], epsilon = 1e-12);
        }
        for i in 3..12 {
            assert_relative_eq!(u[i], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn damped_pinv_matches_control_path() {
        let j = DMatrix::from_fn(6, 12, |r, c| ((r as f64) - 0.3 * (c as f64)).sin());
        let pinv = damped_pinv(&j, 1e-3).unwrap();
        let drive = DVector::from_fn(6, |i, _| 0.01 * (i as f64 + 1.0));
        let gains = ControllerGains::uniform(6, 1.0, 1.0, 0.5, 0.0, 1e-3, 1e6).unwrap();
        let via_control = baseline_control(&j, &drive, &gains).unwrap();
        let direct = -(&pinv * &drive);
        for i in 0..12 {
            assert_relative_eq!(via_control[i], direct[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn clamp_scales_the_whole_vector() {
        let mut u = Twist::zeros();
        u[2] = 0.06;
        u[7] = -0.03;
        let clamped = clamp_twist(&u, 0.03);
        assert_relative_eq!(clamped[2], 0.03, epsilon = 1e-15);
        assert_relative_eq!(clamped[7], -0.015, epsilon = 1e-15);
        let small = Twist::from_element(0.01);
        assert_eq!(clamp_twist(&small, 0.03), small);
    }

    #[test]
    fn baseline_equals_control_with_barrier_terms_removed() {
        let j = DMatrix::from_fn(6, 12, |r, c| ((r * 12 + c) as f64 * 0.03).cos());
        let gains = ControllerGains::uniform(6, 2.0, 1.0, 0.5, 0.0, 1e-3, 0.03).unwrap();
        let e = DVector::from_fn(6, |i, _| 0.01 * (i as f64 - 2.5));
        let u_base = baseline_control(&j, &e, &gains).unwrap();
        let u_ppc = control(&j, &e, &DVector::zeros(6), &DVector::zeros(6), &gains).unwrap();
        assert_relative_eq!(u_base, u_ppc, epsilon = 1e-14);
    }

    #[test]
    fn control_output_respects_speed_limit() {
        let j = DMatrix::<f64>::identity(3, 12);
        let gains = ControllerGains::uniform(3, 2.0, 1.0, 0.5, 0.0, 1e-3, 0.03).unwrap();
        let e = DVector::from_element(3, 0.09);
        let z = DVector::from_element(3, 50.0);
        let eta = DVector::from_element(3, 0.75);
        let u = control(&j, &e, &z, &eta, &gains).unwrap();
        assert!(u.amax() <= 0.03 + 1e-15);
    }

    #[test]
    fn reset_widens_only_when_needed() {
        let mut env = task_a_x();
        env.reset(7.0, 0.12, 0.1);
        assert_relative_eq!(env.mu0, 0.132, epsilon = 1e-12);
        assert_eq!(env.t0, 7.0);
        let (mu, _) = env.value(7.0).unwrap();
        assert_relative_eq!(mu, env.mu0, epsilon = 1e-15);

        let mut env = task_a_x();
        env.reset(3.0, 0.05, 0.1);
        assert_relative_eq!(env.mu0, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_transfer_flags_violations_without_aborting() {
        let envs = vec![task_a_x(), task_a_x()];
        let e = DVector::from_vec(vec![0.05, 0.2]);
        let state = evaluate_transfer(&e, &envs, 0.0, 0.5).unwrap();
        assert_eq!(state.violation, Some((1, 2.0)));
        assert_relative_eq!(state.xi[0], 0.5);
        assert!(state.z[0] > 0.0);
        assert!(z_vector(&e, &envs, 0.0).is_err());

        let inside = DVector::from_vec(vec![0.05, -0.03]);
        let state = evaluate_transfer(&inside, &envs, 0.0, 0.5).unwrap();
        assert!(state.violation.is_none());
        let z = z_vector(&inside, &envs, 0.0).unwrap();
        assert_relative_eq!(z[0], state.z[0]);
        assert_relative_eq!(z[1], state.z[1]);
        assert!(z[1] < 0.0, "z keeps the sign of the error");
    }
}
