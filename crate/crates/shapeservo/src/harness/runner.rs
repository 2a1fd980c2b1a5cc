//! Closed-loop execution of a scenario.
//!
//! A run is a pure function of `(scenario, method, seed)`: the seed feeds
//! three independent RNG streams (babbling twists, k-means init, sensing
//! noise) and everything else is deterministic, so identical invocations
//! produce bitwise-identical logs. The loop per step: measure features,
//! evaluate the funnels, predict the Jacobian, command a twist, advance the
//! plant, update the estimator. Barrier violations under a PPC method and
//! solver divergence mark the run failed with diagnostics instead of
//! crashing; the partial log stays available as data.

use clap::ValueEnum;
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{
    baseline_control, control, evaluate_transfer, reset_stage, ControllerGains,
    PerformanceEnvelope,
};
use crate::error::{Error, Result};
use crate::estimator::{
    estimator_input, kmeans_centers, least_squares_jacobian, prefit, BroydenState, JacobianWeights,
    RbfBasis,
};
use crate::harness::babble::babble;
use crate::harness::scenario::{EdgeName, NodeSelect, Scenario};
use crate::keypoints::{extract_features, extract_features_noisy, farthest_point_sample, KeypointSet};
use crate::monitor::StabilityRecord;
use crate::plant::{attach_grippers, build_mesh, Mesh, Plant, Twist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
pub enum Method {
    /// Full controller with barrier terms, RBF network Jacobian.
    #[value(name = "ppc-rbf")]
    #[serde(rename = "ppc-rbf")]
    PpcRbf,
    /// Barrier terms removed, RBF network Jacobian.
    #[value(name = "baseline-rbf")]
    #[serde(rename = "baseline-rbf")]
    BaselineRbf,
    /// Full controller, Broyden secant Jacobian.
    #[value(name = "ppc-broyden")]
    #[serde(rename = "ppc-broyden")]
    PpcBroyden,
    /// Barrier terms removed, Broyden secant Jacobian.
    #[value(name = "baseline-broyden")]
    #[serde(rename = "baseline-broyden")]
    BaselineBroyden,
}

impl Method {
    pub fn is_ppc(&self) -> bool {
        matches!(self, Method::PpcRbf | Method::PpcBroyden)
    }

    pub fn uses_rbf(&self) -> bool {
        matches!(self, Method::PpcRbf | Method::BaselineRbf)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PpcRbf => "ppc-rbf",
            Method::BaselineRbf => "baseline-rbf",
            Method::PpcBroyden => "ppc-broyden",
            Method::BaselineBroyden => "baseline-broyden",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ppc-rbf" => Ok(Method::PpcRbf),
            "baseline-rbf" => Ok(Method::BaselineRbf),
            "ppc-broyden" => Ok(Method::PpcBroyden),
            "baseline-broyden" => Ok(Method::BaselineBroyden),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One logged control step.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub t: f64,
    pub e: DVector<f64>,
    pub xi: DVector<f64>,
    pub phi_a: DVector<f64>,
    pub phi_b: DVector<f64>,
    pub u: Twist,
    /// Euclidean norm of the error vector.
    pub norm_e: f64,
    pub record: StabilityRecord,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub channels: usize,
    pub dt: f64,
    pub rows: Vec<LogRow>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub success: bool,
    /// Mean error norm over the trailing window, m.
    pub steady_state_error: f64,
    /// First time after which the max error stays below the threshold, s.
    pub convergence_time: f64,
    pub violation_count: usize,
    /// Diagnostics when the run aborted early.
    pub failure: Option<String>,
    pub log: RunLog,
}

/// Averaging window for the steady-state error metric, s.
pub const STEADY_STATE_WINDOW: f64 = 2.0;

/// The built plant and selected keypoints of a scenario, before any motion.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub plant: Plant,
    pub keypoints: KeypointSet,
}

fn resolve_select(select: &NodeSelect, mesh: &Mesh) -> Result<Vec<usize>> {
    match select {
        NodeSelect::Nodes { nodes } => Ok(nodes.clone()),
        NodeSelect::Edge { edge } => {
            let coord = |n: &Vector3<f64>| match edge {
                EdgeName::MinX | EdgeName::MaxX => n.x,
                EdgeName::MinY | EdgeName::MaxY => n.y,
            };
            let extreme = mesh
                .nodes
                .iter()
                .map(coord)
                .fold(match edge {
                    EdgeName::MinX | EdgeName::MinY => f64::INFINITY,
                    _ => f64::NEG_INFINITY,
                }, |acc, v| match edge {
                    EdgeName::MinX | EdgeName::MinY => acc.min(v),
                    _ => acc.max(v),
                });
            let nodes: Vec<usize> = mesh
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| (coord(n) - extreme).abs() < 1e-9)
                .map(|(i, _)| i)
                .collect();
            if nodes.is_empty() {
                return Err(Error::Config("edge selector matched no nodes".into()));
            }
            Ok(nodes)
        }
    }
}

/// Builds the plant and keypoint set of a validated scenario.
pub fn prepare(scenario: &Scenario) -> Result<Prepared> {
    scenario.validate()?;
    let mesh = build_mesh(&scenario.mesh)?;
    let left = resolve_select(&scenario.grippers.left, &mesh)?;
    let right = resolve_select(&scenario.grippers.right, &mesh)?;
    let mut plant = attach_grippers(mesh, &left, &right)?;
    plant.settings = scenario.solver;
    if let Some(g) = scenario.gravity {
        plant.node_force = Vector3::new(g[0], g[1], g[2]);
    }
    plant.solve_equilibrium()?;
    for demo in &scenario.preload {
        let steps = (demo.duration / scenario.dt).round() as usize;
        let mut u = Twist::zeros();
        for i in 0..12 {
            u[i] = demo.u[i];
        }
        for _ in 0..steps {
            plant.step(&u, scenario.dt)?;
        }
    }

    let candidates: Vec<usize> = match &scenario.keypoints.roi {
        None => (0..plant.mesh.node_count()).collect(),
        Some(roi) => plant
            .mesh
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| {
                (0..3).all(|a| n[a] >= roi.min[a] && n[a] <= roi.max[a])
            })
            .map(|(i, _)| i)
            .collect(),
    };
    if candidates.len() < scenario.keypoints.count {
        return Err(Error::scenario(
            "keypoints.roi",
            format!(
                "{} candidates inside the region, need {}",
                candidates.len(),
                scenario.keypoints.count
            ),
        ));
    }
    if scenario.keypoints.start >= candidates.len() {
        return Err(Error::scenario(
            "keypoints.start",
            format!("start {} out of {} candidates", scenario.keypoints.start, candidates.len()),
        ));
    }
    let positions: Vec<Vector3<f64>> = candidates.iter().map(|&i| plant.mesh.nodes[i]).collect();
    let picked = farthest_point_sample(&positions, scenario.keypoints.count, scenario.keypoints.start)?;
    let indices: Vec<usize> = picked.into_iter().map(|local| candidates[local]).collect();
    let keypoints = KeypointSet::new(indices, plant.mesh.node_count())?;
    Ok(Prepared { plant, keypoints })
}

/// Runs the open-loop target demonstrations and captures the exact feature
/// vector at the end of every stage. The caller keeps its pristine plant;
/// demonstrations run on a clone.
pub fn record_target(scenario: &Scenario) -> Result<Vec<DVector<f64>>> {
    let prepared = prepare(scenario)?;
    record_target_prepared(scenario, &prepared)
}

fn record_target_prepared(scenario: &Scenario, prepared: &Prepared) -> Result<Vec<DVector<f64>>> {
    let mut plant = prepared.plant.clone();
    let mut targets = Vec::with_capacity(scenario.stages.len());
    for stage in &scenario.stages {
        for demo in &stage.demo {
            let steps = (demo.duration / scenario.dt).round() as usize;
            let mut u = Twist::zeros();
            for i in 0..12 {
                u[i] = demo.u[i];
            }
            for _ in 0..steps {
                plant.step(&u, scenario.dt)?;
            }
        }
        targets.push(extract_features(&plant, &prepared.keypoints));
    }
    Ok(targets)
}

struct Estimators {
    basis: RbfBasis,
    weights: JacobianWeights,
    broyden: BroydenState,
}

fn fit_estimators(
    scenario: &Scenario,
    prepared: &Prepared,
    babble_rng: &mut ChaCha8Rng,
    kmeans_rng: &mut ChaCha8Rng,
) -> Result<Estimators> {
    let mut babble_plant = prepared.plant.clone();
    let samples = babble(
        &mut babble_plant,
        &prepared.keypoints,
        scenario.babble.samples,
        scenario.babble_magnitude(),
        scenario.dt,
        scenario.noise_std,
        babble_rng,
    )?;
    let xs: Vec<DVector<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    let centers = kmeans_centers(&xs, scenario.estimator.basis_size, kmeans_rng)?;
    let basis = RbfBasis::from_centers(centers, scenario.estimator.width_scale)?;
    let weights = prefit(
        &samples,
        &basis,
        prepared.keypoints.len(),
        scenario.estimator.ridge,
        scenario.estimator.weight_clamp,
    )?;
    let pairs: Vec<(Twist, DVector<f64>)> = samples.iter().map(|s| (s.u, s.pdot.clone())).collect();
    let initial = least_squares_jacobian(&pairs, 3 * prepared.keypoints.len());
    let broyden = BroydenState::new(initial, scenario.broyden_damping)?;
    Ok(Estimators { basis, weights, broyden })
}

/// Executes the full pipeline: babble, pre-fit, then the staged closed
/// loop with an envelope reset at every stage boundary.
pub fn run(scenario: &Scenario, method: Method, seed: u64) -> Result<RunResult> {
    let prepared = prepare(scenario)?;
    let targets = record_target_prepared(scenario, &prepared)?;

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut babble_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut kmeans_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(master.gen());

    let mut est = fit_estimators(scenario, &prepared, &mut babble_rng, &mut kmeans_rng)?;

    let channels = scenario.channels();
    let gains: ControllerGains = scenario.gains.controller_gains(channels)?;
    let n = prepared.keypoints.len();
    let mut plant = prepared.plant.clone();
    let dt = scenario.dt;

    let mut log = RunLog { channels, dt, rows: Vec::new() };
    let mut t = 0.0;
    let mut violation_count = 0usize;
    let mut failure: Option<String> = None;

    // Previous measured features and commanded twist, for the secant update.
    let mut previous: Option<(DVector<f64>, Twist)> = None;

    'stages: for (si, stage) in scenario.stages.iter().enumerate() {
        let target = &targets[si];
        let configured_mu0: Vec<f64> = (0..channels)
            .map(|i| stage.envelopes.axis(i % 3).mu0)
            .collect();
        let mut envelopes: Vec<PerformanceEnvelope> = (0..channels)
            .map(|i| stage.envelopes.axis(i % 3).envelope(t))
            .collect::<Result<_>>()?;

        let stage_steps = (stage.duration / dt).round().max(1.0) as usize;
        let pause_steps = if si + 1 < scenario.stages.len() {
            (scenario.inter_stage_pause / dt).round() as usize
        } else {
            0
        };

        for step in 0..stage_steps + pause_steps {
            let in_pause = step >= stage_steps;
            let p = extract_features_noisy(&plant, &prepared.keypoints, scenario.noise_std, &mut noise_rng);

            if let Some((prev_p, prev_u)) = previous.take() {
                est.broyden.update(&(&p - &prev_p), &(prev_u * dt));
            }

            let e = &p - target;
            if step == 0 {
                reset_stage(&mut envelopes, t, &e, &configured_mu0);
            }
            let state = evaluate_transfer(&e, &envelopes, t, gains.k_eta)?;
            let step_violations = state.xi.iter().filter(|&&x| x >= 1.0).count();
            violation_count += step_violations;

            let x = estimator_input(&plant.configuration(), &p);
            let theta = est.basis.features(&x);
            let j_hat = if method.uses_rbf() {
                est.weights.predict(&theta)
            } else {
                est.broyden.jacobian().clone()
            };

            let u = if in_pause {
                Twist::zeros()
            } else if method.is_ppc() {
                if let Some((channel, xi)) = state.violation {
                    let record =
                        StabilityRecord::from_step(t, &e, &state, est.weights.frobenius_norm_squared());
                    log.rows.push(LogRow {
                        t,
                        e: e.clone(),
                        xi: state.xi.clone(),
                        phi_a: state.phi_a.clone(),
                        phi_b: state.phi_b.clone(),
                        u: Twist::zeros(),
                        norm_e: e.norm(),
                        record,
                    });
                    failure = Some(format!(
                        "barrier violation at t = {t:.3}: channel {channel} reached xi = {xi:.4}"
                    ));
                    break 'stages;
                }
                control(&j_hat, &e, &state.z, &state.eta, &gains)?
            } else {
                baseline_control(&j_hat, &e, &gains)?
            };

            let record = StabilityRecord::from_step(t, &e, &state, est.weights.frobenius_norm_squared());
            log.rows.push(LogRow {
                t,
                e: e.clone(),
                xi: state.xi.clone(),
                phi_a: state.phi_a.clone(),
                phi_b: state.phi_b.clone(),
                u,
                norm_e: e.norm(),
                record,
            });

            if let Err(err) = plant.step(&u, dt) {
                match err {
                    Error::SolverDivergence { .. } => {
                        failure = Some(format!("plant solver diverged at t = {t:.3}: {err}"));
                        break 'stages;
                    }
                    other => return Err(other),
                }
            }

            if method.uses_rbf() {
                // The barrier variable drives adaptation; without barriers
                // the raw error is the analogous signal.
                let z_adapt = if method.is_ppc() { &state.z } else { &e };
                est.weights.adapt(&theta, &u, z_adapt, gains.gamma, dt)?;
            }
            previous = Some((p, u));
            t += dt;
        }
    }

    let threshold = scenario.success_threshold();
    let (convergence_time, steady_state_error) = summarize_log(&log, threshold, scenario.total_duration());
    let final_ok = log
        .rows
        .last()
        .map(|row| row.e.amax() <= threshold)
        .unwrap_or(false);
    let success = failure.is_none() && violation_count == 0 && final_ok;

    debug_assert_eq!(log.channels, 3 * n);
    Ok(RunResult {
        method,
        seed,
        success,
        steady_state_error,
        convergence_time,
        violation_count,
        failure,
        log,
    })
}

/// Convergence time: the earliest logged time after which the max error
/// never exceeds the threshold again (the horizon when it always does).
/// Steady-state error: mean error norm over the trailing window.
fn summarize_log(log: &RunLog, threshold: f64, horizon: f64) -> (f64, f64) {
    if log.rows.is_empty() {
        return (horizon, f64::INFINITY);
    }
    let mut convergence = 0.0;
    let mut last_bad: Option<usize> = None;
    for (i, row) in log.rows.iter().enumerate() {
        if row.e.amax() > threshold {
            last_bad = Some(i);
        }
    }
    if let Some(i) = last_bad {
        convergence = if i + 1 < log.rows.len() { log.rows[i + 1].t } else { horizon };
    }

    let t_end = log.rows.last().expect("non-empty").t;
    let window_start = t_end - STEADY_STATE_WINDOW;
    let tail: Vec<f64> = log
        .rows
        .iter()
        .filter(|r| r.t >= window_start)
        .map(|r| r.norm_e)
        .collect();
    let steady = tail.iter().sum::<f64>() / tail.len() as f64;
    (convergence, steady)
}
