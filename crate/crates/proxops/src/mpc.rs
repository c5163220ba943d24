//! The privileged expert: finite-horizon thrust optimization with per-axis
//! bounds and an ellipsoidal keep-out zone, solved by sequential
//! convexification over a box-constrained QP (projected gradient with
//! Nesterov acceleration, augmented-Lagrangian keep-out half-spaces).

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6x3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gravity::{self, FieldError, GravityParams};
use crate::mesh::AsteroidMesh;
use crate::sim::{clamp_command, SpacecraftState, ThrustCommand};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("no feasible trajectory: {0}")]
    Infeasible(String),
    #[error("field evaluation failed: {0}")]
    Field(#[from] FieldError),
}

/// Ellipsoidal exclusion region enclosing the body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeepOutEllipsoid {
    pub center: Vector3<f64>,
    pub semi_axes: Vector3<f64>,
}

impl KeepOutEllipsoid {
    /// Axis-aligned enclosing ellipsoid of the mesh, inflated by `scale`.
    ///
    /// Centered on the volume centroid; the per-axis extents are grown
    /// uniformly until every vertex sits strictly inside.
    pub fn enclosing(mesh: &AsteroidMesh, scale: f64) -> Self {
        let center = mesh.centroid();
        let ext = mesh.extents_about(&center);
        // Guard degenerate axes (flat meshes are rejected upstream anyway).
        let ext = ext.map(|e| e.max(1e-9 * mesh.bounding_radius()));
        let mut worst: f64 = 0.0;
        for v in mesh.vertices() {
            let d = v - center;
            let n = (d.component_div(&ext)).norm();
            worst = worst.max(n);
        }
        Self {
            center,
            semi_axes: ext * (worst * scale),
        }
    }

    /// Signed dimensionless margin `||D^-1 (r - center)|| - 1`.
    pub fn margin(&self, r: &Vector3<f64>) -> f64 {
        (r - self.center).component_div(&self.semi_axes).norm() - 1.0
    }

    /// Gradient of [`Self::margin`] with respect to `r`.
    pub fn margin_gradient(&self, r: &Vector3<f64>) -> Vector3<f64> {
        let u = (r - self.center).component_div(&self.semi_axes);
        let rho = u.norm();
        if rho < 1e-300 {
            return Vector3::zeros();
        }
        u.component_div(&self.semi_axes) / rho
    }

    pub fn contains(&self, mesh: &AsteroidMesh) -> bool {
        mesh.vertices().iter().all(|v| self.margin(v) < 0.0)
    }

    /// Supporting half-space of the ellipsoid at the surface point radially
    /// aligned with `p`: returns `(normal, offset)` with `normal . x >=
    /// offset` holding only outside the ellipsoid.
    fn supporting_halfspace(&self, p: &Vector3<f64>) -> (Vector3<f64>, f64) {
        let d = p - self.center;
        let u = d.component_div(&self.semi_axes);
        let rho = u.norm();
        let q = if rho > 1e-12 {
            self.center + d / rho
        } else {
            // Degenerate query at the center: push along the widest axis.
            let mut axis = Vector3::zeros();
            let i = self.semi_axes.imax();
            axis[i] = self.semi_axes[i];
            self.center + axis
        };
        let n = self.margin_gradient(&q).normalize();
        (n, n.dot(&q))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcParams {
    /// Horizon length in control steps.
    pub horizon: usize,
    /// Stage state-error weight (PSD).
    pub q: Matrix6<f64>,
    /// Control weight (PD).
    pub r: Matrix3<f64>,
    /// Terminal state-error weight (PSD).
    pub q_f: Matrix6<f64>,
    /// Per-axis thrust bound, newtons.
    pub u_max: f64,
    pub keep_out: KeepOutEllipsoid,
    /// Maximum sequential-convexification passes.
    pub scp_iterations: usize,
    /// Dimensionless convergence tolerance (inner steps and SCP trajectory
    /// change are scaled by it).
    pub tol: f64,
    /// Maximum Nesterov iterations per QP solve.
    pub max_inner_iterations: usize,
    /// Augmented-Lagrangian outer iterations for keep-out constraints.
    pub al_iterations: usize,
    /// Initial augmented-Lagrangian penalty weight.
    pub penalty: f64,
    /// Keep-out constraints are generated only for knots whose reference
    /// margin falls below this activation band.
    pub constraint_activation_margin: f64,
}

impl MpcParams {
    /// Defaults sized for the shipped desk scenarios; every value is
    /// overridable through the run config.
    pub fn defaults(keep_out: KeepOutEllipsoid) -> Self {
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = 1e-6;
            q[(i + 3, i + 3)] = 1e-2;
        }
        Self {
            horizon: 30,
            q,
            r: Matrix3::identity() * 1e-2,
            q_f: q * 100.0,
            u_max: 7.0,
            keep_out,
            scp_iterations: 5,
            tol: 1e-6,
            max_inner_iterations: 4000,
            al_iterations: 8,
            penalty: 1.0,
            constraint_activation_margin: 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.horizon < 1 {
            return Err("horizon must be >= 1".into());
        }
        if !(self.u_max > 0.0) {
            return Err("u_max must be positive".into());
        }
        if self.keep_out.semi_axes.iter().any(|a| *a <= 0.0) {
            return Err("keep-out semi-axes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub controls: Vec<ThrustCommand>,
    pub predicted: Vec<SpacecraftState>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Worst keep-out margin over the predicted knots.
    pub min_margin: f64,
}

/// Discrete local model around `state`: exact double-integrator structure
/// with gravity frozen over the step as the affine term.
pub fn linearize_dynamics(
    state: &SpacecraftState,
    mesh: &AsteroidMesh,
    params: &GravityParams,
    mass: f64,
    dt: f64,
) -> Result<(Matrix6<f64>, Matrix6x3<f64>, Vector6<f64>), MpcError> {
    let g = if params.density > 0.0 {
        gravity::gravity_accel(mesh, params, &state.position)?
    } else {
        Vector3::zeros()
    };
    Ok((
        discrete_a(dt),
        discrete_b(dt, mass),
        affine_term(dt, &g),
    ))
}

fn discrete_a(dt: f64) -> Matrix6<f64> {
    let mut a = Matrix6::identity();
    for i in 0..3 {
        a[(i, i + 3)] = dt;
    }
    a
}

fn discrete_b(dt: f64, mass: f64) -> Matrix6x3<f64> {
    let mut b = Matrix6x3::zeros();
    for i in 0..3 {
        b[(i, i)] = dt * dt / (2.0 * mass);
        b[(i + 3, i)] = dt / mass;
    }
    b
}

fn affine_term(dt: f64, g: &Vector3<f64>) -> Vector6<f64> {
    let mut c = Vector6::zeros();
    for i in 0..3 {
        c[i] = dt * dt / 2.0 * g[i];
        c[i + 3] = dt * g[i];
    }
    c
}

fn pack_state(s: &SpacecraftState) -> Vector6<f64> {
    let mut x = Vector6::zeros();
    for i in 0..3 {
        x[i] = s.position[i];
        x[i + 3] = s.velocity[i];
    }
    x
}

fn unpack_state(x: &Vector6<f64>, t: f64) -> SpacecraftState {
    SpacecraftState {
        t,
        position: Vector3::new(x[0], x[1], x[2]),
        velocity: Vector3::new(x[3], x[4], x[5]),
    }
}

/// Reusable solver state: the control-to-state sensitivities and the QP
/// Hessian depend only on (horizon, dt, mass, Q, R, Q_f), so they are built
/// once and shared across every solve.
pub struct MpcSolver {
    pub params: MpcParams,
    mass: f64,
    dt: f64,
    /// `alpha[k][j]` with j < k: position sensitivity of knot k to control j
    /// (scalar multiple of the identity).
    alpha: Vec<Vec<f64>>,
    /// Velocity sensitivity of any later knot to a control (dt/mass).
    beta: f64,
    /// QP Hessian (the `P` in `u' P u + 2 b' u`).
    hessian: DMatrix<f64>,
    hessian_lmax: f64,
}

impl MpcSolver {
    pub fn new(params: MpcParams, mass: f64, dt: f64) -> Self {
        let h = params.horizon;
        let n = 3 * h;
        let beta = dt / mass;
        let mut alpha = vec![Vec::new(); h + 1];
        for (k, row) in alpha.iter_mut().enumerate().take(h + 1).skip(1) {
            *row = (0..k)
                .map(|j| (dt * dt / mass) * ((k - 1 - j) as f64 + 0.5))
                .collect();
        }

        // P = sum_k G_k' Q_k G_k + Rbar, assembled from the 6x3 block
        // structure of G_k.
        let mut hessian = DMatrix::<f64>::zeros(n, n);
        for j in 0..h {
            for a in 0..3 {
                for b in 0..3 {
                    hessian[(3 * j + a, 3 * j + b)] += params.r[(a, b)];
                }
            }
        }
        // G_k columns for control j: [alpha_kj I; beta I].
        for k in 1..=h {
            let qk = if k == h { &params.q_f } else { &params.q };
            for j1 in 0..k {
                let a1 = alpha[k][j1];
                for j2 in 0..k {
                    let a2 = alpha[k][j2];
                    for r_ in 0..3 {
                        for c_ in 0..3 {
                            // (G' Q G)[3j1+r, 3j2+c] with G blocks scalar*I:
                            // a1*a2*Qpp + a1*beta*Qpv + beta*a2*Qvp + beta^2*Qvv
                            let v = a1 * a2 * qk[(r_, c_)]
                                + a1 * beta * qk[(r_, c_ + 3)]
                                + beta * a2 * qk[(r_ + 3, c_)]
                                + beta * beta * qk[(r_ + 3, c_ + 3)];
                            hessian[(3 * j1 + r_, 3 * j2 + c_)] += v;
                        }
                    }
                }
            }
        }

        let hessian_lmax = power_iteration_lmax(&hessian);

        Self {
            params,
            mass,
            dt,
            alpha,
            beta,
            hessian,
            hessian_lmax,
        }
    }

    pub fn horizon(&self) -> usize {
        self.params.horizon
    }

    /// Free-response rollout (controls zero) of the affine models along the
    /// current reference gravity samples.
    fn free_response(&self, x0: &Vector6<f64>, g_ref: &[Vector3<f64>]) -> Vec<Vector6<f64>> {
        let h = self.params.horizon;
        let a = discrete_a(self.dt);
        let mut out = Vec::with_capacity(h + 1);
        out.push(*x0);
        for k in 0..h {
            let x = a * out[k] + affine_term(self.dt, &g_ref[k]);
            out.push(x);
        }
        out
    }

    /// States along the affine models under the control sequence `u`.
    fn rollout(
        &self,
        x0: &Vector6<f64>,
        u: &[f64],
        g_ref: &[Vector3<f64>],
    ) -> Vec<Vector6<f64>> {
        let h = self.params.horizon;
        let a = discrete_a(self.dt);
        let b = discrete_b(self.dt, self.mass);
        let mut out = Vec::with_capacity(h + 1);
        out.push(*x0);
        for k in 0..h {
            let uk = Vector3::new(u[3 * k], u[3 * k + 1], u[3 * k + 2]);
            let x = a * out[k] + b * uk + affine_term(self.dt, &g_ref[k]);
            out.push(x);
        }
        out
    }

    /// Gravity sampled at the reference knot positions, falling back to the
    /// previous sample when a transient reference knot dips inside the
    /// surface band.
    fn sample_gravity(
        &self,
        mesh: &AsteroidMesh,
        gparams: &GravityParams,
        reference: &[Vector6<f64>],
    ) -> Result<Vec<Vector3<f64>>, MpcError> {
        let h = self.params.horizon;
        let mut out = Vec::with_capacity(h);
        let mut prev = if gparams.density > 0.0 {
            gravity::gravity_accel(mesh, gparams, &Vector3::new(
                reference[0][0],
                reference[0][1],
                reference[0][2],
            ))?
        } else {
            Vector3::zeros()
        };
        out.push(prev);
        for knot in reference.iter().take(h).skip(1) {
            let p = Vector3::new(knot[0], knot[1], knot[2]);
            let g = if gparams.density > 0.0 {
                gravity::gravity_accel(mesh, gparams, &p).unwrap_or(prev)
            } else {
                Vector3::zeros()
            };
            out.push(g);
            prev = g;
        }
        Ok(out)
    }

    fn quadratic_objective(&self, u: &[f64], states: &[Vector6<f64>], goal: &Vector6<f64>) -> f64 {
        let h = self.params.horizon;
        let mut j = 0.0;
        for k in 1..=h {
            let qk = if k == h { &self.params.q_f } else { &self.params.q };
            let e = states[k] - goal;
            j += (e.transpose() * qk * e)[0];
        }
        for c in u.chunks_exact(3) {
            let uk = Vector3::new(c[0], c[1], c[2]);
            j += (uk.transpose() * self.params.r * uk)[0];
        }
        j
    }

    /// Linear term b of the QP for the given free response.
    fn linear_term(&self, free: &[Vector6<f64>], goal: &Vector6<f64>) -> DVector<f64> {
        let h = self.params.horizon;
        let n = 3 * h;
        let mut b = DVector::<f64>::zeros(n);
        for k in 1..=h {
            let qk = if k == h { &self.params.q_f } else { &self.params.q };
            let e: Vector6<f64> = free[k] - goal;
            let qe = qk * e;
            for j in 0..k {
                let a = self.alpha[k][j];
                for r_ in 0..3 {
                    b[3 * j + r_] += a * qe[r_] + self.beta * qe[r_ + 3];
                }
            }
        }
        b
    }

    /// Solve from `state` toward `goal`. `warm_start` (if given) seeds the
    /// control sequence, clamped into the box.
    pub fn solve(
        &self,
        state: &SpacecraftState,
        goal: &SpacecraftState,
        mesh: &AsteroidMesh,
        gparams: &GravityParams,
        warm_start: Option<&[ThrustCommand]>,
    ) -> Result<MpcSolution, MpcError> {
        let h = self.params.horizon;
        let n = 3 * h;
        let u_max = self.params.u_max;
        let keep_out = &self.params.keep_out;

        if keep_out.margin(&goal.position) < 0.0 {
            return Err(MpcError::Infeasible(
                "goal lies inside the keep-out ellipsoid".into(),
            ));
        }

        let x0 = pack_state(state);
        let goal_x = pack_state(goal);

        let mut u = vec![0.0f64; n];
        if let Some(ws) = warm_start {
            for (k, cmd) in ws.iter().take(h).enumerate() {
                for i in 0..3 {
                    u[3 * k + i] = cmd.force[i].clamp(-u_max, u_max);
                }
            }
        }

        let mut g_ref = self.sample_gravity(mesh, gparams, &self.free_response(&x0, &vec![
            Vector3::zeros();
            h
        ]))?;
        // Re-sample along the warm-start rollout for a better first model.
        g_ref = self.sample_gravity(mesh, gparams, &self.rollout(&x0, &u, &g_ref))?;

        let mut total_iterations = 0usize;
        let mut converged = false;
        let mut best_u = u.clone();
        let mut best_states = self.rollout(&x0, &best_u, &g_ref);
        let mut best_merit = f64::INFINITY;

        let pos_scale = state.position.norm().max(1.0);

        for _scp in 0..self.params.scp_iterations.max(1) {
            let reference = self.rollout(&x0, &u, &g_ref);

            // Keep-out half-spaces at knots whose reference margin is inside
            // the activation band.
            let mut constraints: Vec<(usize, Vector3<f64>, f64)> = Vec::new();
            for (k, knot) in reference.iter().enumerate().take(h + 1).skip(1) {
                let p = Vector3::new(knot[0], knot[1], knot[2]);
                if keep_out.margin(&p) < self.params.constraint_activation_margin {
                    let (normal, offset) = keep_out.supporting_halfspace(&p);
                    constraints.push((k, normal, offset));
                }
            }

            let free = self.free_response(&x0, &g_ref);
            let b = self.linear_term(&free, &goal_x);

            let (u_new, iters, inner_ok) =
                self.solve_qp(&b, &free, &constraints, u.clone(), u_max);
            total_iterations += iters;

            let states_new = self.rollout(&x0, &u_new, &g_ref);
            let merit = self.merit(&u_new, &states_new, &goal_x, keep_out);
            if merit <= best_merit {
                best_merit = merit;
                best_u = u_new.clone();
                best_states = states_new.clone();
            }

            // Trajectory change against the previous reference decides SCP
            // convergence.
            let mut max_change: f64 = 0.0;
            for (a, bst) in reference.iter().zip(states_new.iter()) {
                for i in 0..3 {
                    max_change = max_change.max((a[i] - bst[i]).abs());
                }
            }

            u = u_new;
            g_ref = self.sample_gravity(mesh, gparams, &states_new)?;

            if max_change <= self.params.tol * pos_scale && inner_ok {
                converged = true;
                break;
            }
        }

        let min_margin = best_states
            .iter()
            .skip(1)
            .map(|x| keep_out.margin(&Vector3::new(x[0], x[1], x[2])))
            .fold(f64::INFINITY, f64::min);

        let controls: Vec<ThrustCommand> = best_u
            .chunks_exact(3)
            .map(|c| clamp_command(Vector3::new(c[0], c[1], c[2]), u_max))
            .collect();
        let predicted: Vec<SpacecraftState> = best_states
            .iter()
            .enumerate()
            .map(|(k, x)| unpack_state(x, state.t + k as f64 * self.dt))
            .collect();
        let objective = self.quadratic_objective(&best_u, &best_states, &goal_x);

        Ok(MpcSolution {
            controls,
            predicted,
            objective,
            iterations: total_iterations,
            converged,
            min_margin,
        })
    }

    fn merit(
        &self,
        u: &[f64],
        states: &[Vector6<f64>],
        goal: &Vector6<f64>,
        keep_out: &KeepOutEllipsoid,
    ) -> f64 {
        let mut violation = 0.0;
        for x in states.iter().skip(1) {
            let m = keep_out.margin(&Vector3::new(x[0], x[1], x[2]));
            if m < 0.0 {
                violation += -m;
            }
        }
        self.quadratic_objective(u, states, goal) + 1e12 * violation
    }

    /// Box-constrained QP with augmented-Lagrangian keep-out half-spaces,
    /// solved by projected gradient with fixed step and Nesterov
    /// acceleration.
    fn solve_qp(
        &self,
        b: &DVector<f64>,
        free: &[Vector6<f64>],
        constraints: &[(usize, Vector3<f64>, f64)],
        mut u: Vec<f64>,
        u_max: f64,
    ) -> (Vec<f64>, usize, bool) {
        let n = u.len();
        // g_i(u) = a_i' u + c_i >= 0; a_i is nonzero on controls j < k with
        // block alpha_kj * n.
        let cons: Vec<(usize, Vector3<f64>, f64)> = constraints
            .iter()
            .map(|(k, normal, offset)| {
                let free_pos = Vector3::new(free[*k][0], free[*k][1], free[*k][2]);
                (*k, *normal, normal.dot(&free_pos) - offset)
            })
            .collect();

        let eval_constraint = |i: usize, u: &[f64]| -> f64 {
            let (k, normal, c0) = &cons[i];
            let mut g = *c0;
            for j in 0..*k {
                let a = self.alpha[*k][j];
                g += a * (normal.x * u[3 * j] + normal.y * u[3 * j + 1] + normal.z * u[3 * j + 2]);
            }
            g
        };

        let a_norm_sq: Vec<f64> = cons
            .iter()
            .map(|(k, _, _)| self.alpha[*k].iter().map(|a| a * a).sum::<f64>())
            .collect();

        let mut lambda = vec![0.0f64; cons.len()];
        let mut mu = self.params.penalty;
        let step_tol = self.params.tol * u_max;
        // Tight feasibility target so that dimensionless keep-out margins
        // land above -1e-6 after the supporting-half-space transfer.
        let feas_tol = 1e-7 * self.params.keep_out.semi_axes.min();

        let mut total_iters = 0usize;
        let mut inner_ok = true;

        let al_rounds = if cons.is_empty() {
            1
        } else {
            self.params.al_iterations.max(1)
        };

        for _round in 0..al_rounds {
            let lip = 2.0 * self.hessian_lmax
                + mu * a_norm_sq.iter().sum::<f64>().max(0.0)
                + 1e-12;
            let step = 1.0 / lip;

            let mut y = DVector::from_column_slice(&u);
            let mut u_cur = y.clone();
            let mut t_acc = 1.0f64;
            inner_ok = false;

            for _it in 0..self.params.max_inner_iterations {
                total_iters += 1;
                // grad = 2 P y + 2 b - sum_i mu * max(0, lambda/mu - g_i) a_i
                let mut grad = &self.hessian * &y * 2.0;
                grad += b * 2.0;
                for i in 0..cons.len() {
                    let g = eval_constraint(i, y.as_slice());
                    let w = (lambda[i] / mu - g).max(0.0) * mu;
                    if w > 0.0 {
                        let (k, normal, _) = &cons[i];
                        for j in 0..*k {
                            let a = self.alpha[*k][j] * w;
                            grad[3 * j] -= a * normal.x;
                            grad[3 * j + 1] -= a * normal.y;
                            grad[3 * j + 2] -= a * normal.z;
                        }
                    }
                }

                let mut u_next = &y - &grad * step;
                for v in u_next.iter_mut() {
                    *v = v.clamp(-u_max, u_max);
                }

                let mut max_delta: f64 = 0.0;
                for i in 0..n {
                    max_delta = max_delta.max((u_next[i] - u_cur[i]).abs());
                }

                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt());
                let momentum = (t_acc - 1.0) / t_next;
                let y_next = &u_next + (&u_next - &u_cur) * momentum;

                // Gradient restart keeps the acceleration stable.
                if grad.dot(&(&u_next - &u_cur)) > 0.0 {
                    t_acc = 1.0;
                } else {
                    t_acc = t_next;
                }

                u_cur = u_next;
                y = y_next;

                if max_delta <= step_tol {
                    inner_ok = true;
                    break;
                }
            }

            u.copy_from_slice(u_cur.as_slice());

            if cons.is_empty() {
                break;
            }

            let mut worst = 0.0f64;
            for i in 0..cons.len() {
                let g = eval_constraint(i, &u);
                lambda[i] = (lambda[i] - mu * g).max(0.0);
                worst = worst.max(-g);
            }
            if worst <= feas_tol {
                break;
            }
            mu *= 10.0;
        }

        (u, total_iters, inner_ok)
    }
}

fn power_iteration_lmax(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lmax = 0.0;
    for _ in 0..60 {
        let w = m * &v;
        let norm = w.norm();
        if norm < 1e-300 {
            return 0.0;
        }
        lmax = norm;
        v = w / norm;
    }
    // Small safety factor over the estimate.
    lmax * 1.02
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture(name: &str) -> AsteroidMesh {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("fixtures")
            .join(name);
        AsteroidMesh::load_obj_path(&path).unwrap()
    }

    fn free_space_params(h: usize, u_max: f64) -> MpcParams {
        // A keep-out far from the test trajectories so it never activates.
        let keep_out = KeepOutEllipsoid {
            center: Vector3::new(0.0, 0.0, -1.0e9),
            semi_axes: Vector3::new(1.0, 1.0, 1.0),
        };
        let mut p = MpcParams::defaults(keep_out);
        p.horizon = h;
        p.u_max = u_max;
        p
    }

    #[test]
    fn linearization_is_exact_double_integrator_without_gravity() {
        let mesh = fixture("cube.obj");
        let gparams = GravityParams::with_density(0.0);
        let state = SpacecraftState::at_rest(Vector3::new(0.0, 0.0, 10.0));
        let (a, b, c) = linearize_dynamics(&state, &mesh, &gparams, 500.0, 10.0).unwrap();
        assert_eq!(c, Vector6::zeros());
        for i in 0..3 {
            assert_eq!(a[(i, i + 3)], 10.0);
            assert_eq!(b[(i, i)], 100.0 / (2.0 * 500.0));
            assert_eq!(b[(i + 3, i)], 10.0 / 500.0);
        }
        // Doubling the mass halves B entrywise.
        let (_, b2, _) = linearize_dynamics(&state, &mesh, &gparams, 1000.0, 10.0).unwrap();
        assert_eq!(b2, b * 0.5);
    }

    #[test]
    fn one_step_prediction_tracks_rk4() {
        let mesh = fixture("asteroid_ellipsoid.obj");
        let gparams = GravityParams::with_density(2000.0);
        let mass = 500.0;
        let dt = 10.0;
        let state = SpacecraftState {
            t: 0.0,
            position: Vector3::new(3.0, 0.5, -0.2) * mesh.bounding_radius(),
            velocity: Vector3::new(5.0, -3.0, 2.0),
        };
        let cmd = ThrustCommand::new(Vector3::new(3.0, -2.0, 1.0));

        let (a, b, c) = linearize_dynamics(&state, &mesh, &gparams, mass, dt).unwrap();
        let x = pack_state(&state);
        let pred = a * x + b * cmd.force + c;

        let cfg = crate::sim::SimConfig {
            dt,
            mass,
            ..Default::default()
        };
        let truth = crate::sim::step(&state, &cmd, &mesh, &gparams, &cfg).unwrap();

        let pred_pos = Vector3::new(pred[0], pred[1], pred[2]);
        let err = (pred_pos - truth.position).norm();
        let moved = (truth.position - state.position).norm();
        assert!(err < 0.01 * moved, "err {err} vs moved {moved}");
    }

    #[test]
    fn keep_out_margin_examples() {
        let ko = KeepOutEllipsoid {
            center: Vector3::new(1.0, 2.0, 3.0),
            semi_axes: Vector3::new(4.0, 5.0, 6.0),
        };
        assert_eq!(ko.margin(&ko.center), -1.0);
        assert!((ko.margin(&Vector3::new(9.0, 2.0, 3.0)) - 1.0).abs() < 1e-12);

        // Gradient against central differences.
        let p = Vector3::new(5.0, 6.0, -1.0);
        let g = ko.margin_gradient(&p);
        let h = 1e-6;
        for i in 0..3 {
            let mut dp = Vector3::zeros();
            dp[i] = h;
            let fd = (ko.margin(&(p + dp)) - ko.margin(&(p - dp))) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-6 * fd.abs().max(1e-12), "axis {i}");
        }
    }

    #[test]
    fn enclosing_ellipsoid_contains_mesh() {
        let mesh = fixture("asteroid_ellipsoid.obj");
        let ko = KeepOutEllipsoid::enclosing(&mesh, 1.2);
        assert!(ko.contains(&mesh));
        // 1.2 inflation: the worst vertex sits near margin 1/1.2 - 1.
        let worst = mesh
            .vertices()
            .iter()
            .map(|v| ko.margin(v))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst < -0.1 && worst > -0.5, "worst vertex margin {worst}");
    }

    #[test]
    fn fixed_point_solve_returns_zero_controls() {
        let mesh = fixture("cube.obj");
        let gparams = GravityParams::with_density(0.0);
        let params = free_space_params(20, 7.0);
        let solver = MpcSolver::new(params, 500.0, 10.0);
        let state = SpacecraftState::at_rest(Vector3::new(50.0, 0.0, 0.0));
        let sol = solver.solve(&state, &state, &mesh, &gparams, None).unwrap();
        for c in &sol.controls {
            assert!(c.force.norm() < 1e-12);
        }
        assert!(sol.objective.abs() < 1e-12);
        assert!(sol.converged);
    }

    /// Dense normal-equations oracle for the unconstrained QP (independent
    /// of the projected-gradient path).
    fn dense_qp_oracle(
        solver: &MpcSolver,
        x0: &Vector6<f64>,
        goal: &Vector6<f64>,
    ) -> DVector<f64> {
        let h = solver.params.horizon;
        let free = solver.free_response(x0, &vec![Vector3::zeros(); h]);
        let b = solver.linear_term(&free, goal);
        solver
            .hessian
            .clone()
            .lu()
            .solve(&(-b))
            .expect("singular QP Hessian")
    }

    #[test]
    fn rest_to_rest_matches_least_squares_oracle() {
        let mesh = fixture("cube.obj");
        let gparams = GravityParams::with_density(0.0);

        // Minimum-effort setup: no stage cost, identity control cost, a
        // stiff terminal cost standing in for a terminal constraint.
        let mut params = free_space_params(20, 1.0e6);
        params.q = Matrix6::zeros();
        params.r = Matrix3::identity();
        params.q_f = Matrix6::identity() * 1.0e6;
        params.tol = 1e-12;
        params.max_inner_iterations = 400_000;
        params.scp_iterations = 1;
        let solver = MpcSolver::new(params, 500.0, 10.0);

        let state = SpacecraftState::at_rest(Vector3::new(1000.0, 0.0, 0.0));
        let goal = SpacecraftState::at_rest(Vector3::new(4000.0, 0.0, 0.0));
        let sol = solver.solve(&state, &goal, &mesh, &gparams, None).unwrap();

        let oracle = dense_qp_oracle(&solver, &pack_state(&state), &pack_state(&goal));
        for k in 0..solver.horizon() {
            for i in 0..3 {
                let got = sol.controls[k].force[i];
                let want = oracle[3 * k + i];
                let scale = oracle.amax();
                assert!(
                    (got - want).abs() <= 1e-3 * want.abs().max(1e-3 * scale),
                    "control {k}/{i}: {got} vs oracle {want}"
                );
            }
        }
        // The terminal knot actually reaches the goal.
        let last = sol.predicted.last().unwrap();
        assert!((last.position - goal.position).norm() < 1.0);
    }

    #[test]
    fn distant_goal_saturates_first_control() {
        let mesh = fixture("cube.obj");
        let gparams = GravityParams::with_density(0.0);
        let mut params = free_space_params(10, 7.0);
        params.q = Matrix6::zeros();
        params.r = Matrix3::identity() * 1e-4;
        params.q_f = Matrix6::identity();
        let solver = MpcSolver::new(params, 500.0, 10.0);

        let state = SpacecraftState::at_rest(Vector3::zeros());
        let goal = SpacecraftState::at_rest(Vector3::new(1.0e7, 0.0, 0.0));

        // The unconstrained optimum wants far more than the box allows.
        let oracle = dense_qp_oracle(&solver, &pack_state(&state), &pack_state(&goal));
        assert!(oracle[0] > 7.0);

        let sol = solver.solve(&state, &goal, &mesh, &gparams, None).unwrap();
        assert_eq!(sol.controls[0].force.x, 7.0);
        for c in &sol.controls {
            assert!(c.within_box(7.0));
        }
    }

    #[test]
    fn constrained_solves_respect_box_and_keep_out() {
        let mesh = fixture("asteroid_ellipsoid.obj");
        let gparams = GravityParams::with_density(2000.0);
        let keep_out = KeepOutEllipsoid::enclosing(&mesh, 1.2);
        let mut params = MpcParams::defaults(keep_out.clone());
        params.u_max = 7.0;
        let solver = MpcSolver::new(params, 100.0, 10.0);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let r0 = keep_out.semi_axes.max();
        for trial in 0..20 {
            let sample = |rng: &mut ChaCha8Rng| loop {
                let p = Vector3::new(
                    rng.random_range(-1.6..1.6),
                    rng.random_range(-1.6..1.6),
                    rng.random_range(-1.6..1.6),
                ) * r0;
                if keep_out.margin(&p) > 0.05 && p.norm() < 1.6 * r0 {
                    return p;
                }
            };
            let state = SpacecraftState::at_rest(sample(&mut rng));
            let goal = SpacecraftState::at_rest(sample(&mut rng));
            let sol = solver.solve(&state, &goal, &mesh, &gparams, None).unwrap();
            for c in &sol.controls {
                assert!(c.within_box(7.0), "box violation in trial {trial}");
            }
            assert!(
                sol.min_margin >= -1e-6,
                "keep-out margin {} in trial {trial}",
                sol.min_margin
            );
        }
    }

    #[test]
    fn goal_inside_keep_out_is_infeasible() {
        let mesh = fixture("asteroid_ellipsoid.obj");
        let gparams = GravityParams::with_density(2000.0);
        let keep_out = KeepOutEllipsoid::enclosing(&mesh, 1.2);
        let params = MpcParams::defaults(keep_out.clone());
        let solver = MpcSolver::new(params, 100.0, 10.0);
        let state = SpacecraftState::at_rest(Vector3::new(2.0 * keep_out.semi_axes.max(), 0.0, 0.0));
        let goal = SpacecraftState::at_rest(keep_out.center);
        assert!(matches!(
            solver.solve(&state, &goal, &mesh, &gparams, None),
            Err(MpcError::Infeasible(_))
        ));
    }

    #[test]
    fn solve_is_deterministic() {
        let mesh = fixture("asteroid_ellipsoid.obj");
        let gparams = GravityParams::with_density(2000.0);
        let keep_out = KeepOutEllipsoid::enclosing(&mesh, 1.2);
        let solver = MpcSolver::new(MpcParams::defaults(keep_out.clone()), 100.0, 10.0);
        let state = SpacecraftState::at_rest(Vector3::new(1.4, 0.2, 0.1) * keep_out.semi_axes.max());
        let goal = SpacecraftState::at_rest(Vector3::new(-1.3, 0.4, -0.2) * keep_out.semi_axes.max());
        let a = solver.solve(&state, &goal, &mesh, &gparams, None).unwrap();
        let b = solver.solve(&state, &goal, &mesh, &gparams, None).unwrap();
        for (ca, cb) in a.controls.iter().zip(b.controls.iter()) {
            assert_eq!(ca.force, cb.force);
        }
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn warm_start_does_not_increase_iterations() {
        let mesh = fixture("asteroid_ellipsoid.obj");
        let gparams = GravityParams::with_density(2000.0);
        let keep_out = KeepOutEllipsoid::enclosing(&mesh, 1.2);
        let solver = MpcSolver::new(MpcParams::defaults(keep_out.clone()), 100.0, 10.0);
        let r0 = keep_out.semi_axes.max();
        let state = SpacecraftState::at_rest(Vector3::new(1.5 * r0, 0.1 * r0, 0.0));
        let goal = SpacecraftState::at_rest(Vector3::new(0.0, 1.5 * r0, 0.2 * r0));

        let cold = solver.solve(&state, &goal, &mesh, &gparams, None).unwrap();
        let warm = solver
            .solve(&state, &goal, &mesh, &gparams, Some(&cold.controls))
            .unwrap();
        assert!(
            warm.iterations <= cold.iterations,
            "warm {} vs cold {}",
            warm.iterations,
            cold.iterations
        );
    }
}
