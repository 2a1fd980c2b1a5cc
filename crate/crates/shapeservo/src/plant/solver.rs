//! Quasi-static equilibrium of the free nodes.
//!
//! The free-node positions minimize the total spring energy
//! E = sum over springs of k/2 (|x_a - x_b| - L)^2, minus the work of an
//! optional uniform external force. Minimization is a damped Newton
//! iteration on E: the Levenberg shift nu keeps the system positive
//! definite (sheets at rest have zero transverse stiffness), and steps are
//! only accepted if they lower the energy, so E is non-increasing across
//! iterations. In the large-nu limit the step degenerates to damped
//! gradient descent, which covers indefinite Hessians far from a minimum.

use nalgebra::{Cholesky, DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::mesh::Spring;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Convergence threshold on the max free-node force norm, in N.
    pub force_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { force_tolerance: 1e-6, max_iterations: 500 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    /// Max free-node force norm at exit, in N.
    pub residual: f64,
    pub iterations: usize,
    pub energy_initial: f64,
    pub energy_final: f64,
}

pub(crate) struct EnergyModel<'a> {
    pub springs: &'a [Spring],
    /// node index -> slot in the free-coordinate vector, None when pinned.
    pub free_slot: &'a [Option<usize>],
    pub free: &'a [usize],
    /// Uniform external force applied to every free node (e.g. gravity), N.
    pub node_force: Vector3<f64>,
}

impl EnergyModel<'_> {
    pub fn energy(&self, positions: &[Vector3<f64>]) -> f64 {
        let mut e = 0.0;
        for s in self.springs {
            let stretch = (positions[s.a] - positions[s.b]).norm() - s.rest_length;
            e += 0.5 * s.stiffness * stretch * stretch;
        }
        for &i in self.free {
            e -= self.node_force.dot(&positions[i]);
        }
        e
    }

    /// Gradient over the free coordinates; also returns the max per-node
    /// force norm (force = -gradient block).
    pub fn gradient(&self, positions: &[Vector3<f64>]) -> (DVector<f64>, f64) {
        let mut g: DVector<f64> = DVector::zeros(3 * self.free.len());
        for s in self.springs {
            let d = positions[s.a] - positions[s.b];
            let r = d.norm().max(1e-14);
            let coeff = s.stiffness * (r - s.rest_length) / r;
            let pull = coeff * d;
            if let Some(sa) = self.free_slot[s.a] {
                for c in 0..3 {
                    g[3 * sa + c] += pull[c];
                }
            }
            if let Some(sb) = self.free_slot[s.b] {
                for c in 0..3 {
                    g[3 * sb + c] -= pull[c];
                }
            }
        }
        for slot in 0..self.free.len() {
            for c in 0..3 {
                g[3 * slot + c] -= self.node_force[c];
            }
        }
        let mut max_force: f64 = 0.0;
        for slot in 0..self.free.len() {
            let f = (g[3 * slot].powi(2) + g[3 * slot + 1].powi(2) + g[3 * slot + 2].powi(2)).sqrt();
            max_force = max_force.max(f);
        }
        (g, max_force)
    }

    pub fn hessian(&self, positions: &[Vector3<f64>]) -> DMatrix<f64> {
        let dim = 3 * self.free.len();
        let mut h = DMatrix::zeros(dim, dim);
        for s in self.springs {
            let d = positions[s.a] - positions[s.b];
            let r = d.norm().max(1e-14);
            let u = d / r;
            // k [ u u^T + (1 - L/r)(I - u u^T) ]
            let radial = 1.0 - s.rest_length / r;
            let mut block = [[0.0f64; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let uu = u[i] * u[j];
                    let eye = if i == j { 1.0 } else { 0.0 };
                    block[i][j] = s.stiffness * (uu + radial * (eye - uu));
                }
            }
            let sa = self.free_slot[s.a];
            let sb = self.free_slot[s.b];
            for i in 0..3 {
                for j in 0..3 {
                    if let Some(a) = sa {
                        h[(3 * a + i, 3 * a + j)] += block[i][j];
                    }
                    if let Some(b) = sb {
                        h[(3 * b + i, 3 * b + j)] += block[i][j];
                    }
                    if let (Some(a), Some(b)) = (sa, sb) {
                        h[(3 * a + i, 3 * b + j)] -= block[i][j];
                        h[(3 * b + i, 3 * a + j)] -= block[i][j];
                    }
                }
            }
        }
        h
    }
}

pub(crate) fn minimize(
    model: &EnergyModel<'_>,
    positions: &mut [Vector3<f64>],
    settings: &SolverSettings,
) -> Result<SolveReport> {
    let energy_initial = model.energy(positions);
    if model.free.is_empty() {
        return Ok(SolveReport {
            residual: 0.0,
            iterations: 0,
            energy_initial,
            energy_final: energy_initial,
        });
    }

    let mut energy = energy_initial;
    let mut nu = 0.0f64;
    let mut reject_growth = 2.0;

    for iter in 0..settings.max_iterations {
        let (g, max_force) = model.gradient(positions);
        if max_force <= settings.force_tolerance {
            return Ok(SolveReport {
                residual: max_force,
                iterations: iter,
                energy_initial,
                energy_final: energy,
            });
        }

        let h = model.hessian(positions);
        let scale = h.diagonal().amax().max(1e-12);
        if nu == 0.0 {
            nu = 1e-8 * scale;
        }

        let mut accepted = false;
        for attempt in 0..80 {
            // A freshly contracted residual wants the undamped Newton
            // step, so the first attempt of every iteration probes a tiny
            // shift before falling back to the adaptive one.
            let nu_eff = if attempt == 0 { nu.min(1e-12 * scale) } else { nu };
            let mut shifted = h.clone();
            for i in 0..shifted.nrows() {
                shifted[(i, i)] += nu_eff;
            }
            if let Some(chol) = Cholesky::new(shifted) {
                let step = chol.solve(&(-&g));
                let trial = apply_step(positions, model.free, &step);
                let trial_energy = model.energy(&trial);
                // Gain ratio against the damped quadratic model; its
                // predicted decrease 1/2 d^T (nu d - g) is positive
                // whenever the factorization succeeded.
                let predicted = 0.5 * step.dot(&(&step * nu_eff - &g));
                if trial_energy < energy && predicted > 0.0 {
                    let rho = (energy - trial_energy) / predicted;
                    copy_free(positions, model.free, &trial);
                    energy = trial_energy;
                    let shrink = (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                    nu = (nu_eff * shrink).max(1e-14 * scale);
                    reject_growth = 2.0;
                    accepted = true;
                    break;
                }
                // Near the minimum, energy differences sink below f64
                // resolution before the force does. A step that contracts
                // the residual without raising the energy beyond rounding
                // still makes progress; heavily damped steps contract
                // slowly, so any solid contraction is taken.
                let (_, trial_force) = model.gradient(&trial);
                if trial_force < 0.95 * max_force && trial_energy <= energy + 8.0 * f64::EPSILON * energy.abs() {
                    copy_free(positions, model.free, &trial);
                    energy = trial_energy.min(energy);
                    nu = (nu_eff * 0.5).max(1e-14 * scale);
                    reject_growth = 2.0;
                    accepted = true;
                    break;
                }
            }
            if attempt > 0 {
                nu *= reject_growth;
                reject_growth = (reject_growth * 2.0).min(64.0);
            }
        }

        if !accepted {
            // Energy is at its numerical floor in every usable direction.
            return Err(Error::SolverDivergence { residual: max_force, iterations: iter });
        }
    }

    let (_, max_force) = model.gradient(positions);
    if max_force <= settings.force_tolerance {
        Ok(SolveReport {
            residual: max_force,
            iterations: settings.max_iterations,
            energy_initial,
            energy_final: energy,
        })
    } else {
        Err(Error::SolverDivergence {
            residual: max_force,
            iterations: settings.max_iterations,
        })
    }
}

fn apply_step(positions: &[Vector3<f64>], free: &[usize], step: &DVector<f64>) -> Vec<Vector3<f64>> {
    let mut out = positions.to_vec();
    for (slot, &node) in free.iter().enumerate() {
        out[node] += Vector3::new(step[3 * slot], step[3 * slot + 1], step[3 * slot + 2]);
    }
    out
}

fn copy_free(positions: &mut [Vector3<f64>], free: &[usize], from: &[Vector3<f64>]) {
    for &node in free {
        positions[node] = from[node];
    }
}
