//! The simulated plant: a spring mesh held by two rigid gripper frames.
//!
//! Control channels are the stacked gripper twist
//! `[v1; w1; v2; w2] in R^12` (linear velocity in m/s, angular velocity in
//! rad/s, both in world frame). A step advances the gripper poses by the
//! twist integrated over `dt`, repositions the attached nodes rigidly, and
//! re-solves the free nodes to quasi-static equilibrium. The
//! finite-difference Jacobian applies the same per-channel perturbations,
//! which makes it the exact ground truth for the twist-to-keypoint-velocity
//! map the estimator has to learn.

mod mesh;
mod solver;

pub use mesh::{build_mesh, Mesh, MeshSpec, SheetShape, Spring};
pub use solver::{SolveReport, SolverSettings};

use nalgebra::{DMatrix, SVector, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use solver::EnergyModel;

/// Stacked gripper twist: `[v1; w1; v2; w2]`.
pub type Twist = SVector<f64, 12>;

/// Stacked gripper configuration: `[p1; r1; p2; r2]` with `r` the
/// rotation vector (magnitude <= pi).
pub type Configuration = SVector<f64, 12>;

/// Default central-difference perturbation for the Jacobian oracle.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GripperFrame {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    /// Attached node indices with their offsets in the gripper frame.
    pub attached: Vec<(usize, Vector3<f64>)>,
}

impl GripperFrame {
    fn world_point(&self, offset: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * offset
    }
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub mesh: Mesh,
    pub grippers: [GripperFrame; 2],
    pub settings: SolverSettings,
    /// Uniform external force per free node (zero unless gravity is enabled).
    pub node_force: Vector3<f64>,
    free: Vec<usize>,
    free_slot: Vec<Option<usize>>,
}

/// Builds a plant by pinning `left` and `right` node sets to two rigid
/// frames. Each frame starts at the centroid of its nodes with identity
/// orientation, so the recorded offsets reproduce the node positions
/// exactly.
pub fn attach_grippers(mesh: Mesh, left: &[usize], right: &[usize]) -> Result<Plant> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::Config("gripper attachment sets must be non-empty".into()));
    }
    let n = mesh.node_count();
    for &i in left.iter().chain(right.iter()) {
        if i >= n {
            return Err(Error::Config(format!("attached node {i} out of range (mesh has {n})")));
        }
    }
    if left.iter().any(|i| right.contains(i)) {
        return Err(Error::Config("gripper attachment sets overlap".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for &i in left.iter().chain(right.iter()) {
        if !seen.insert(i) {
            return Err(Error::Config(format!("node {i} attached twice")));
        }
    }

    let frame = |nodes: &[usize]| -> GripperFrame {
        let centroid = nodes.iter().map(|&i| mesh.nodes[i]).sum::<Vector3<f64>>() / nodes.len() as f64;
        GripperFrame {
            position: centroid,
            orientation: UnitQuaternion::identity(),
            attached: nodes.iter().map(|&i| (i, mesh.nodes[i] - centroid)).collect(),
        }
    };
    let grippers = [frame(left), frame(right)];

    let free: Vec<usize> = (0..n).filter(|i| !seen.contains(i)).collect();
    let mut free_slot = vec![None; n];
    for (slot, &i) in free.iter().enumerate() {
        free_slot[i] = Some(slot);
    }

    Ok(Plant {
        mesh,
        grippers,
        settings: SolverSettings::default(),
        node_force: Vector3::zeros(),
        free,
        free_slot,
    })
}

impl Plant {
    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    /// Current gripper configuration; rotation vectors come out of the unit
    /// quaternion with magnitude <= pi, so composing rotations past pi wraps.
    pub fn configuration(&self) -> Configuration {
        let mut c = Configuration::zeros();
        for (g, frame) in self.grippers.iter().enumerate() {
            let rot = frame.orientation.scaled_axis();
            for i in 0..3 {
                c[6 * g + i] = frame.position[i];
                c[6 * g + 3 + i] = rot[i];
            }
        }
        c
    }

    /// Writes the attached node positions from the gripper poses. Attached
    /// nodes satisfy `x = position + R * offset` exactly at all times.
    fn apply_attached(&mut self) {
        for g in 0..2 {
            let frame = self.grippers[g].clone();
            for (node, offset) in &frame.attached {
                self.mesh.nodes[*node] = frame.world_point(offset);
            }
        }
    }

    fn energy_model(&self) -> EnergyModel<'_> {
        EnergyModel {
            springs: &self.mesh.springs,
            free_slot: &self.free_slot,
            free: &self.free,
            node_force: self.node_force,
        }
    }

    /// Re-solves the free nodes to equilibrium from their current positions.
    pub fn solve_equilibrium(&mut self) -> Result<SolveReport> {
        let model = EnergyModel {
            springs: &self.mesh.springs,
            free_slot: &self.free_slot,
            free: &self.free,
            node_force: self.node_force,
        };
        let mut positions = std::mem::take(&mut self.mesh.nodes);
        let report = solver::minimize(&model, &mut positions, &self.settings);
        self.mesh.nodes = positions;
        report
    }

    /// Advances both grippers by the twist held constant over `dt` and
    /// re-solves the free nodes. Free nodes are warm-started with the mean
    /// gripper translation, which keeps the solver near quadratic
    /// convergence along a quasi-static path.
    pub fn step(&mut self, u: &Twist, dt: f64) -> Result<SolveReport> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("step dt must be > 0, got {dt}")));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control signal"));
        }
        let mut mean_shift = Vector3::zeros();
        for g in 0..2 {
            let v = Vector3::new(u[6 * g], u[6 * g + 1], u[6 * g + 2]);
            let w = Vector3::new(u[6 * g + 3], u[6 * g + 4], u[6 * g + 5]);
            self.grippers[g].position += v * dt;
            self.grippers[g].orientation =
                UnitQuaternion::from_scaled_axis(w * dt) * self.grippers[g].orientation;
            mean_shift += v * dt * 0.5;
        }
        self.apply_attached();
        for &i in &self.free {
            self.mesh.nodes[i] += mean_shift;
        }
        self.solve_equilibrium()
    }

    pub fn spring_energy(&self) -> f64 {
        self.energy_model().energy(&self.mesh.nodes)
    }

    /// Ground-truth deformation Jacobian by central differences: column j
    /// holds d p / d channel_j, each evaluation at a re-solved equilibrium.
    /// Rotation channels are perturbed the way `step` applies them (world
    /// twist composed onto the orientation). The plant itself is untouched.
    ///
    /// Perturbed solves run at the plant's configured force tolerance;
    /// tighten it first when the differences must resolve O(h^2) behavior.
    pub fn finite_difference_jacobian(&self, keypoints: &[usize], h: f64) -> Result<DMatrix<f64>> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("fd step must be > 0, got {h}")));
        }
        for &k in keypoints {
            if k >= self.mesh.node_count() {
                return Err(Error::Config(format!("keypoint {k} out of range")));
            }
        }
        let mut j = DMatrix::zeros(3 * keypoints.len(), 12);
        for channel in 0..12 {
            let plus = self.perturbed_features(channel, h, keypoints)?;
            let minus = self.perturbed_features(channel, -h, keypoints)?;
            for row in 0..j.nrows() {
                j[(row, channel)] = (plus[row] - minus[row]) / (2.0 * h);
            }
        }
        Ok(j)
    }

    fn perturbed_features(&self, channel: usize, h: f64, keypoints: &[usize]) -> Result<Vec<f64>> {
        let mut probe = self.clone();
        let g = channel / 6;
        let local = channel % 6;
        if local < 3 {
            probe.grippers[g].position[local] += h;
        } else {
            let mut axis = Vector3::zeros();
            axis[local - 3] = h;
            probe.grippers[g].orientation =
                UnitQuaternion::from_scaled_axis(axis) * probe.grippers[g].orientation;
        }
        probe.apply_attached();
        probe.solve_equilibrium()?;
        let mut out = Vec::with_capacity(3 * keypoints.len());
        for &k in keypoints {
            let p = probe.mesh.nodes[k];
            out.extend_from_slice(&[p.x, p.y, p.z]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_spring() -> Plant {
        let mesh = Mesh::new(
            vec![Vector3::zeros(), Vector3::new(0.1, 0.0, 0.0)],
            vec![Spring { a: 0, b: 1, rest_length: 0.1, stiffness: 50.0 }],
        )
        .unwrap();
        // Both nodes pinned is useless; pin only node 0 through gripper 1 and
        // use a far-away second gripper on a disconnected helper node.
        let mesh = {
            let mut nodes = mesh.nodes.clone();
            nodes.push(Vector3::new(1.0, 0.0, 0.0));
            Mesh::new(nodes, mesh.springs.clone()).unwrap()
        };
        attach_grippers(mesh, &[0], &[2]).unwrap()
    }

    #[test]
    fn attach_rejects_bad_sets() {
        let mesh = build_mesh(&MeshSpec {
            shape: SheetShape::SlitSheet,
            resolution: 5,
            spacing: 0.02,
            stiffness: 40.0,
            hole_size: None,
            leg_thickness: None,
        })
        .unwrap();
        assert!(attach_grippers(mesh.clone(), &[], &[1]).is_err());
        assert!(attach_grippers(mesh.clone(), &[0, 1], &[1, 2]).is_err());
        assert!(attach_grippers(mesh.clone(), &[999], &[1]).is_err());
        assert!(attach_grippers(mesh, &[0], &[1]).is_ok());
    }

    #[test]
    fn gripper_frame_sits_at_centroid_with_zero_offsets_for_single_node() {
        let plant = single_spring();
        assert_relative_eq!(plant.grippers[0].position, Vector3::zeros());
        assert_eq!(plant.grippers[0].attached[0].1, Vector3::zeros());
    }

    #[test]
    fn edge_attachment_centroid() {
        let mesh = build_mesh(&MeshSpec {
            shape: SheetShape::SlitSheet,
            resolution: 5,
            spacing: 0.02,
            stiffness: 40.0,
            hole_size: None,
            leg_thickness: None,
        })
        .unwrap();
        // Left column: nodes 0, 5, 10, 15, 20 at x = 0, y = 0..0.08.
        let left: Vec<usize> = (0..5).map(|r| r * 5).collect();
        let right: Vec<usize> = (0..5).map(|r| r * 5 + 4).collect();
        let plant = attach_grippers(mesh, &left, &right).unwrap();
        assert_relative_eq!(plant.grippers[0].position, Vector3::new(0.0, 0.04, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn stretched_spring_relaxes_to_rest_length() {
        let mut plant = single_spring();
        plant.mesh.nodes[1] = Vector3::new(0.2, 0.0, 0.0);
        let report = plant.solve_equilibrium().unwrap();
        let dist = (plant.mesh.nodes[1] - plant.mesh.nodes[0]).norm();
        assert_relative_eq!(dist, 0.1, epsilon = 1e-7);
        assert!(report.energy_final <= report.energy_initial);
        assert!(report.residual <= plant.settings.force_tolerance);
    }

    #[test]
    fn spring_at_rest_has_zero_residual() {
        let mut plant = single_spring();
        let report = plant.solve_equilibrium().unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.residual <= 1e-12);
    }

    #[test]
    fn three_node_chain_centers_middle_node() {
        // Ends exactly 2L apart: both springs sit at rest length at the
        // midpoint, so the transverse energy is quartic there and the
        // force-tolerance stop leaves sub-millimeter transverse slack.
        let l = 0.05;
        let mesh = Mesh::new(
            vec![
                Vector3::zeros(),
                Vector3::new(1.3 * l, 0.01, 0.0),
                Vector3::new(2.0 * l, 0.0, 0.0),
            ],
            vec![
                Spring { a: 0, b: 1, rest_length: l, stiffness: 20.0 },
                Spring { a: 1, b: 2, rest_length: l, stiffness: 20.0 },
            ],
        )
        .unwrap();
        let mut plant = attach_grippers(mesh, &[0], &[2]).unwrap();
        plant.solve_equilibrium().unwrap();
        assert_relative_eq!(plant.mesh.nodes[1].x, l, epsilon = 1e-6);
        assert!(plant.mesh.nodes[1].y.abs() < 2e-3);

        // Under tension the midpoint is a stiff minimum in every direction.
        let mesh = Mesh::new(
            vec![
                Vector3::zeros(),
                Vector3::new(1.4 * l, 0.008, 0.0),
                Vector3::new(2.4 * l, 0.0, 0.0),
            ],
            vec![
                Spring { a: 0, b: 1, rest_length: l, stiffness: 20.0 },
                Spring { a: 1, b: 2, rest_length: l, stiffness: 20.0 },
            ],
        )
        .unwrap();
        let mut plant = attach_grippers(mesh, &[0], &[2]).unwrap();
        plant.solve_equilibrium().unwrap();
        assert_relative_eq!(plant.mesh.nodes[1], Vector3::new(1.2 * l, 0.0, 0.0), epsilon = 1e-6);
    }

    #[test]
    fn zero_step_at_equilibrium_is_identity() {
        let mut plant = single_spring();
        plant.solve_equilibrium().unwrap();
        let before = plant.mesh.nodes.clone();
        plant.step(&Twist::zeros(), 0.05).unwrap();
        for (a, b) in before.iter().zip(plant.mesh.nodes.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn common_translation_moves_mesh_rigidly() {
        let mesh = build_mesh(&MeshSpec {
            shape: SheetShape::SlitSheet,
            resolution: 5,
            spacing: 0.02,
            stiffness: 40.0,
            hole_size: None,
            leg_thickness: None,
        })
        .unwrap();
        let left: Vec<usize> = (0..5).map(|r| r * 5).collect();
        let right: Vec<usize> = (0..5).map(|r| r * 5 + 4).collect();
        let mut plant = attach_grippers(mesh, &left, &right).unwrap();
        plant.solve_equilibrium().unwrap();
        let before = plant.mesh.nodes.clone();
        let e0 = plant.spring_energy();

        let mut u = Twist::zeros();
        let v = Vector3::new(0.01, -0.02, 0.005);
        for g in 0..2 {
            for i in 0..3 {
                u[6 * g + i] = v[i];
            }
        }
        plant.step(&u, 1.0).unwrap();
        for (a, b) in before.iter().zip(plant.mesh.nodes.iter()) {
            assert_relative_eq!(*a + v, *b, epsilon = 1e-6);
        }
        assert_relative_eq!(plant.spring_energy(), e0, epsilon = 1e-9);
    }

    #[test]
    fn opposing_pull_opens_the_slit() {
        let mesh = build_mesh(&MeshSpec {
            shape: SheetShape::SlitSheet,
            resolution: 5,
            spacing: 0.02,
            stiffness: 40.0,
            hole_size: None,
            leg_thickness: None,
        })
        .unwrap();
        let left: Vec<usize> = (0..5).map(|r| r * 5).collect();
        let right: Vec<usize> = (0..5).map(|r| r * 5 + 4).collect();
        let mut plant = attach_grippers(mesh, &left, &right).unwrap();
        plant.solve_equilibrium().unwrap();

        // Nodes straddling the cut in its middle row.
        let (lhs, rhs) = (2 * 5 + 2, 2 * 5 + 3);
        let mut width = (plant.mesh.nodes[rhs] - plant.mesh.nodes[lhs]).norm();
        let mut u = Twist::zeros();
        u[0] = -0.01;
        u[6] = 0.01;
        for _ in 0..5 {
            plant.step(&u, 0.2).unwrap();
            let new_width = (plant.mesh.nodes[rhs] - plant.mesh.nodes[lhs]).norm();
            assert!(new_width > width, "slit must keep opening: {new_width} <= {width}");
            width = new_width;
        }
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let mut plant = single_spring();
        assert!(plant.step(&Twist::zeros(), 0.0).is_err());
        let mut u = Twist::zeros();
        u[0] = f64::NAN;
        assert!(plant.step(&u, 0.1).is_err());
    }

    #[test]
    fn configuration_reads_poses_and_wraps_rotation() {
        let mut plant = single_spring();
        let mut u = Twist::zeros();
        u[2] = 0.01;
        plant.step(&u, 1.0).unwrap();
        let c = plant.configuration();
        assert_relative_eq!(c[2], 0.01, epsilon = 1e-12);

        // Spin gripper 1 about z past pi: the rotation vector wraps.
        let mut spin = Twist::zeros();
        spin[5] = 1.0;
        for _ in 0..4 {
            plant.step(&spin, 1.0).unwrap();
        }
        let c = plant.configuration();
        let mag = (c[3].powi(2) + c[4].powi(2) + c[5].powi(2)).sqrt();
        assert!(mag <= std::f64::consts::PI + 1e-12);
        assert_relative_eq!(mag, 2.0 * std::f64::consts::PI - 4.0, epsilon = 1e-9);
    }

    #[test]
    fn attached_nodes_follow_frames_exactly() {
        let mesh = build_mesh(&MeshSpec {
            shape: SheetShape::LSheet,
            resolution: 5,
            spacing: 0.02,
            stiffness: 40.0,
            hole_size: None,
            leg_thickness: Some(3),
        })
        .unwrap();
        let mut plant = attach_grippers(mesh, &[0, 1], &[19, 20]).unwrap();
        // Stretch slightly, then twist in-plane; the frames move rigidly
        // regardless of what the free nodes do.
        let mut pull = Twist::zeros();
        pull[1] = -0.01;
        pull[7] = 0.01;
        plant.step(&pull, 0.5).unwrap();
        let mut u = Twist::zeros();
        u[5] = 0.3;
        u[11] = -0.1;
        u[0] = 0.005;
        plant.step(&u, 0.5).unwrap();
        for g in 0..2 {
            let frame = plant.grippers[g].clone();
            for (node, offset) in &frame.attached {
                let expected = frame.position + frame.orientation * offset;
                assert_relative_eq!(plant.mesh.nodes[*node], expected, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn fd_jacobian_identity_block_for_attached_keypoint() {
        let plant = {
            let mut p = single_spring();
            p.settings.force_tolerance = 1e-10;
            p.solve_equilibrium().unwrap();
            p
        };
        let j = plant.finite_difference_jacobian(&[0], DEFAULT_FD_STEP).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let expected = if r == c { 1.0 } else { 0.0 };
                assert_relative_eq!(j[(r, c)], expected, epsilon = 1e-9);
            }
            // Disconnected gripper 2 cannot move this keypoint.
            for c in 6..12 {
                assert_relative_eq!(j[(r, c)], 0.0, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn fd_jacobian_respects_translation_invariance() {
        let mesh = build_mesh(&MeshSpec {
            shape: SheetShape::SlitSheet,
            resolution: 5,
            spacing: 0.02,
            stiffness: 40.0,
            hole_size: None,
            leg_thickness: None,
        })
        .unwrap();
        let left: Vec<usize> = (0..5).map(|r| r * 5).collect();
        let right: Vec<usize> = (0..5).map(|r| r * 5 + 4).collect();
        let mut plant = attach_grippers(mesh, &left, &right).unwrap();
        plant.solve_equilibrium().unwrap();
        // Put the sheet under mild tension first; a slack sheet has
        // degenerate transverse response and no well-defined Jacobian.
        let mut pull = Twist::zeros();
        pull[0] = -0.002;
        pull[6] = 0.002;
        plant.step(&pull, 1.0).unwrap();
        plant.settings.force_tolerance = 1e-8;

        let keypoints = [7usize, 12, 17];
        let j = plant.finite_difference_jacobian(&keypoints, DEFAULT_FD_STEP).unwrap();
        // Same translation on both grippers: every keypoint block must be
        // the identity stacked once per keypoint.
        let mut twist = Twist::zeros();
        twist[0] = 0.3;
        twist[1] = -0.7;
        twist[2] = 0.2;
        twist[6] = 0.3;
        twist[7] = -0.7;
        twist[8] = 0.2;
        let v = &j * twist;
        for k in 0..keypoints.len() {
            assert_relative_eq!(v[3 * k], 0.3, epsilon = 1e-4);
            assert_relative_eq!(v[3 * k + 1], -0.7, epsilon = 1e-4);
            assert_relative_eq!(v[3 * k + 2], 0.2, epsilon = 1e-4);
        }
    }
}
