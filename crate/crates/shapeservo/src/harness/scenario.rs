//! Scenario files: the JSON description of a task.
//!
//! A scenario pins down everything a run needs — mesh, gripper attachment,
//! keypoint selection, per-stage target demonstrations and funnel
//! parameters, gains, and seeds-independent solver settings. Three named
//! presets (`task_a`, `task_b`, `task_c`) ship embedded in the binary and
//! as plain files under `scenarios/`.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::controller::{ControllerGains, PerformanceEnvelope, DEFAULT_DT, DEFAULT_PINV_DAMPING};
use crate::error::{Error, Result};
use crate::estimator::{DEFAULT_BASIS_SIZE, DEFAULT_RIDGE, DEFAULT_WEIGHT_CLAMP, DEFAULT_WIDTH_SCALE};
use crate::plant::{MeshSpec, SolverSettings};

pub const PRESET_TASK_A: &str = include_str!("../../scenarios/task_a.json");
pub const PRESET_TASK_B: &str = include_str!("../../scenarios/task_b.json");
pub const PRESET_TASK_C: &str = include_str!("../../scenarios/task_c.json");

/// Default speed limit per twist channel (m/s or rad/s).
pub const DEFAULT_SPEED_LIMIT: f64 = 0.03;
/// Default adaptive leak.
pub const DEFAULT_GAMMA: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mesh: MeshSpec,
    pub grippers: GripperSpec,
    pub keypoints: KeypointSpec,
    /// Open-loop twists executed once after attachment, before keypoint
    /// selection, targets and babbling. Used to put the sheet under tension
    /// the way a grasped object hangs in its grippers: a taut sheet has
    /// positive transverse stiffness, so every Jacobian column is well
    /// defined.
    #[serde(default)]
    pub preload: Vec<DemoTwist>,
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub gains: GainSpec,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub babble: BabbleSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default = "default_broyden_damping")]
    pub broyden_damping: f64,
    /// Std of the additive Gaussian sensing noise on measured features, m.
    #[serde(default)]
    pub noise_std: f64,
    /// Hold with zero twist between stages, s.
    #[serde(default = "default_pause")]
    pub inter_stage_pause: f64,
    /// Success when the final max error is below factor * max mu_inf.
    #[serde(default = "default_success_factor")]
    pub success_threshold_factor: f64,
    /// Uniform external force per free node, N (e.g. gravity premultiplied
    /// by the node mass).
    #[serde(default)]
    pub gravity: Option<[f64; 3]>,
    #[serde(default)]
    pub solver: SolverSettings,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_broyden_damping() -> f64 {
    1.0
}
fn default_pause() -> f64 {
    5.0
}
fn default_success_factor() -> f64 {
    1.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperSpec {
    pub left: NodeSelect,
    pub right: NodeSelect,
}

/// Either explicit node indices or a named mesh edge resolved against the
/// built mesh.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeSelect {
    Nodes { nodes: Vec<usize> },
    Edge { edge: EdgeName },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeName {
    MinX,
    MaxX,
    MinY,
    MaxY,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointSpec {
    #[serde(default = "default_keypoint_count")]
    pub count: usize,
    /// Axis-aligned box the candidates must lie in; the whole mesh when
    /// absent.
    #[serde(default)]
    pub roi: Option<Roi>,
    /// Farthest-point-sampling start, an index into the candidate list.
    #[serde(default)]
    pub start: usize,
}

fn default_keypoint_count() -> usize {
    6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    /// Open-loop twists demonstrating this stage's target shape.
    pub demo: Vec<DemoTwist>,
    pub envelopes: AxisEnvelopes,
    /// Closed-loop horizon of the stage, s.
    pub duration: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoTwist {
    pub u: Vec<f64>,
    pub duration: f64,
}

/// One funnel parameter set per axis, applied to every keypoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisEnvelopes {
    pub x: AxisEnvelope,
    pub y: AxisEnvelope,
    pub z: AxisEnvelope,
}

impl AxisEnvelopes {
    pub fn axis(&self, axis: usize) -> &AxisEnvelope {
        match axis {
            0 => &self.x,
            1 => &self.y,
            _ => &self.z,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisEnvelope {
    pub mu0: f64,
    pub mu_inf: f64,
    pub alpha: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    1.0
}

impl AxisEnvelope {
    pub fn envelope(&self, t0: f64) -> Result<PerformanceEnvelope> {
        PerformanceEnvelope::new(self.mu0, self.mu_inf, self.alpha, self.delta, t0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub k1: f64,
    pub kz: f64,
    pub k_eta: f64,
    pub gamma: f64,
    pub lambda_pinv: f64,
    pub speed_limit: f64,
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec {
            k1: 2.0,
            kz: 1.0,
            k_eta: 0.5,
            gamma: DEFAULT_GAMMA,
            lambda_pinv: DEFAULT_PINV_DAMPING,
            speed_limit: DEFAULT_SPEED_LIMIT,
        }
    }
}

impl GainSpec {
    pub fn controller_gains(&self, channels: usize) -> Result<ControllerGains> {
        ControllerGains::uniform(
            channels,
            self.k1,
            self.kz,
            self.k_eta,
            self.gamma,
            self.lambda_pinv,
            self.speed_limit,
        )
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BabbleSpec {
    pub samples: usize,
    /// Per-channel twist magnitude; defaults to the speed limit.
    #[serde(default)]
    pub magnitude: Option<f64>,
}

impl Default for BabbleSpec {
    fn default() -> Self {
        BabbleSpec { samples: 100, magnitude: None }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub basis_size: usize,
    pub ridge: f64,
    pub width_scale: f64,
    pub weight_clamp: f64,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            basis_size: DEFAULT_BASIS_SIZE,
            ridge: DEFAULT_RIDGE,
            width_scale: DEFAULT_WIDTH_SCALE,
            weight_clamp: DEFAULT_WEIGHT_CLAMP,
        }
    }
}

impl Scenario {
    /// Parses and validates a scenario from JSON text.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Returns an embedded preset by name, if one exists.
    pub fn preset(name: &str) -> Option<Result<Self>> {
        let text = match name {
            "task_a" => PRESET_TASK_A,
            "task_b" => PRESET_TASK_B,
            "task_c" => PRESET_TASK_C,
            _ => return None,
        };
        Some(Scenario::from_json_str(text))
    }

    pub fn preset_names() -> [&'static str; 3] {
        ["task_a", "task_b", "task_c"]
    }

    pub fn channels(&self) -> usize {
        3 * self.keypoints.count
    }

    pub fn babble_magnitude(&self) -> f64 {
        self.babble.magnitude.unwrap_or(self.gains.speed_limit)
    }

    /// Total run length: stage horizons plus the holds between stages.
    pub fn total_duration(&self) -> f64 {
        let stages: f64 = self.stages.iter().map(|s| s.duration).sum();
        stages + self.inter_stage_pause * (self.stages.len().saturating_sub(1)) as f64
    }

    /// Success threshold on the final max-norm error.
    pub fn success_threshold(&self) -> f64 {
        let last = self.stages.last().expect("validated scenarios have stages");
        let max_mu_inf = [last.envelopes.x.mu_inf, last.envelopes.y.mu_inf, last.envelopes.z.mu_inf]
            .into_iter()
            .fold(0.0f64, f64::max);
        self.success_threshold_factor * max_mu_inf
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::scenario("name", "must be non-empty"));
        }
        if self.keypoints.count == 0 {
            return Err(Error::scenario("keypoints.count", "must be >= 1"));
        }
        if self.stages.is_empty() {
            return Err(Error::scenario("stages", "at least one stage is required"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::scenario("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::scenario("noise_std", format!("must be >= 0, got {}", self.noise_std)));
        }
        if !(self.inter_stage_pause >= 0.0) {
            return Err(Error::scenario(
                "inter_stage_pause",
                format!("must be >= 0, got {}", self.inter_stage_pause),
            ));
        }
        if !(self.success_threshold_factor > 0.0) {
            return Err(Error::scenario(
                "success_threshold_factor",
                format!("must be > 0, got {}", self.success_threshold_factor),
            ));
        }
        if !(self.broyden_damping > 0.0 && self.broyden_damping <= 1.0) {
            return Err(Error::scenario(
                "broyden_damping",
                format!("must lie in (0, 1], got {}", self.broyden_damping),
            ));
        }
        if self.babble.samples == 0 {
            return Err(Error::scenario("babble.samples", "must be >= 1"));
        }
        if let Some(mag) = self.babble.magnitude {
            if !(mag > 0.0 && mag.is_finite()) {
                return Err(Error::scenario("babble.magnitude", format!("must be > 0, got {mag}")));
            }
        }
        if self.estimator.basis_size == 0 {
            return Err(Error::scenario("estimator.basis_size", "must be >= 1"));
        }
        if self.babble.samples < self.estimator.basis_size {
            return Err(Error::scenario(
                "babble.samples",
                format!(
                    "must be >= estimator.basis_size ({} < {})",
                    self.babble.samples, self.estimator.basis_size
                ),
            ));
        }
        if !(self.estimator.ridge > 0.0) {
            return Err(Error::scenario(
                "estimator.ridge",
                format!("must be > 0, got {}", self.estimator.ridge),
            ));
        }
        if !(self.estimator.width_scale > 0.0) {
            return Err(Error::scenario(
                "estimator.width_scale",
                format!("must be > 0, got {}", self.estimator.width_scale),
            ));
        }
        if !(self.estimator.weight_clamp > 0.0) {
            return Err(Error::scenario(
                "estimator.weight_clamp",
                format!("must be > 0, got {}", self.estimator.weight_clamp),
            ));
        }
        if !(self.solver.force_tolerance > 0.0) {
            return Err(Error::scenario(
                "solver.force_tolerance",
                format!("must be > 0, got {}", self.solver.force_tolerance),
            ));
        }
        if self.solver.max_iterations == 0 {
            return Err(Error::scenario("solver.max_iterations", "must be >= 1"));
        }
        if let Some(g) = self.gravity {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::scenario("gravity", "must be finite"));
            }
        }
        self.gains
            .controller_gains(self.channels())
            .map_err(|e| Error::scenario("gains", e.to_string()))?;

        if let Some(roi) = &self.keypoints.roi {
            for axis in 0..3 {
                if !(roi.min[axis] <= roi.max[axis])
                    || !roi.min[axis].is_finite()
                    || !roi.max[axis].is_finite()
                {
                    return Err(Error::scenario(
                        "keypoints.roi",
                        format!("axis {axis} bounds are not an interval"),
                    ));
                }
            }
        }
        if let NodeSelect::Nodes { nodes } = &self.grippers.left {
            if nodes.is_empty() {
                return Err(Error::scenario("grippers.left.nodes", "must be non-empty"));
            }
        }
        if let NodeSelect::Nodes { nodes } = &self.grippers.right {
            if nodes.is_empty() {
                return Err(Error::scenario("grippers.right.nodes", "must be non-empty"));
            }
        }

        for (di, demo) in self.preload.iter().enumerate() {
            if demo.u.len() != 12 || demo.u.iter().any(|v| !v.is_finite()) {
                return Err(Error::scenario(
                    format!("preload[{di}].u"),
                    "must be 12 finite channels",
                ));
            }
            if !(demo.duration >= 0.0 && demo.duration.is_finite()) {
                return Err(Error::scenario(
                    format!("preload[{di}].duration"),
                    format!("must be >= 0, got {}", demo.duration),
                ));
            }
        }

        for (si, stage) in self.stages.iter().enumerate() {
            if !(stage.duration > 0.0 && stage.duration.is_finite()) {
                return Err(Error::scenario(
                    format!("stages[{si}].duration"),
                    format!("must be > 0, got {}", stage.duration),
                ));
            }
            for (di, demo) in stage.demo.iter().enumerate() {
                if demo.u.len() != 12 {
                    return Err(Error::scenario(
                        format!("stages[{si}].demo[{di}].u"),
                        format!("must have 12 channels, got {}", demo.u.len()),
                    ));
                }
                if demo.u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::scenario(
                        format!("stages[{si}].demo[{di}].u"),
                        "must be finite",
                    ));
                }
                if !(demo.duration >= 0.0 && demo.duration.is_finite()) {
                    return Err(Error::scenario(
                        format!("stages[{si}].demo[{di}].duration"),
                        format!("must be >= 0, got {}", demo.duration),
                    ));
                }
            }
            for (axis, name) in ["x", "y", "z"].iter().enumerate() {
                let env = stage.envelopes.axis(axis);
                env.envelope(0.0).map_err(|e| {
                    Error::scenario(format!("stages[{si}].envelopes.{name}"), e.to_string())
                })?;
            }
        }
        Ok(())
    }
}

/// Loads and validates a scenario from a JSON file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json_str(&text)
}

/// Resolves `--scenario` CLI values: a preset name or a file path.
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    if let Some(preset) = Scenario::preset(arg) {
        return preset;
    }
    load_scenario(arg)
}
