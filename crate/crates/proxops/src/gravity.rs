//! Exact constant-density polyhedral gravity: acceleration, potential and
//! interior/exterior classification from the summed signed solid angle.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::AsteroidMesh;

/// CODATA gravitational constant, m^3/(kg s^2).
pub const GRAVITATIONAL_CONSTANT: f64 = 6.674_30e-11;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GravityParams {
    /// Body density, kg/m^3.
    pub density: f64,
    /// Gravitational constant, m^3/(kg s^2).
    pub gravitational_constant: f64,
}

impl Default for GravityParams {
    fn default() -> Self {
        Self {
            density: 2000.0,
            gravitational_constant: GRAVITATIONAL_CONSTANT,
        }
    }
}

impl GravityParams {
    pub fn with_density(density: f64) -> Self {
        Self {
            density,
            ..Self::default()
        }
    }

    /// Standard gravitational parameter G*rho*V for `mesh`.
    pub fn mu(&self, mesh: &AsteroidMesh) -> f64 {
        self.gravitational_constant * self.density * mesh.volume()
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum FieldError {
    #[error("query point is inside the body")]
    InsideBody,
    #[error("query point is within the surface singularity band")]
    SurfaceSingularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointClass {
    Inside,
    Outside,
}

/// Signed solid angle of triangle `(r0, r1, r2)` (vertex positions relative
/// to the observation point), via Van Oosterom-Strackee.
fn triangle_solid_angle(r0: &Vector3<f64>, r1: &Vector3<f64>, r2: &Vector3<f64>) -> f64 {
    let n0 = r0.norm();
    let n1 = r1.norm();
    let n2 = r2.norm();
    let num = r0.dot(&r1.cross(r2));
    let den = n0 * n1 * n2 + r0.dot(r1) * n2 + r1.dot(r2) * n0 + r2.dot(r0) * n1;
    2.0 * num.atan2(den)
}

/// Total signed solid angle of the mesh surface seen from `p`.
/// Approximately +-4 pi for interior points and 0 for exterior points.
pub fn total_solid_angle(mesh: &AsteroidMesh, p: &Vector3<f64>) -> f64 {
    let mut total = 0.0;
    for f in mesh.faces() {
        let r0 = mesh.vertices()[f[0]] - p;
        let r1 = mesh.vertices()[f[1]] - p;
        let r2 = mesh.vertices()[f[2]] - p;
        total += triangle_solid_angle(&r0, &r1, &r2);
    }
    total
}

fn check_surface_band(mesh: &AsteroidMesh, p: &Vector3<f64>) -> Result<(), FieldError> {
    if mesh.distance_to_surface(p) < mesh.surface_tol() {
        Err(FieldError::SurfaceSingularity)
    } else {
        Ok(())
    }
}

/// Classify `p` as interior or exterior via the solid-angle sum, with the
/// decision threshold at 2 pi.
pub fn classify_point(mesh: &AsteroidMesh, p: &Vector3<f64>) -> Result<PointClass, FieldError> {
    check_surface_band(mesh, p)?;
    let omega = total_solid_angle(mesh, p).abs();
    if omega > 2.0 * std::f64::consts::PI {
        Ok(PointClass::Inside)
    } else {
        Ok(PointClass::Outside)
    }
}

struct FieldEval {
    accel: Vector3<f64>,
    potential: f64,
    omega_total: f64,
}

/// One pass over faces and edges evaluating the closed-form field.
fn eval_field(mesh: &AsteroidMesh, params: &GravityParams, p: &Vector3<f64>) -> FieldEval {
    let g_rho = params.gravitational_constant * params.density;

    let mut accel = Vector3::zeros();
    let mut pot2 = 0.0; // 2 U / (G rho)
    let mut omega_total = 0.0;

    for e in mesh.edges() {
        let ra_v = mesh.vertices()[e.a] - p;
        let rb_v = mesh.vertices()[e.b] - p;
        let ra = ra_v.norm();
        let rb = rb_v.norm();
        // ln((ra + rb + l) / (ra + rb - l)); positive off the edge line.
        let le = ((ra + rb + e.length) / (ra + rb - e.length)).ln();
        let er = e.dyad * ra_v;
        accel -= er * le;
        pot2 += ra_v.dot(&er) * le;
    }

    for (fi, f) in mesh.faces().iter().enumerate() {
        let r0 = mesh.vertices()[f[0]] - p;
        let r1 = mesh.vertices()[f[1]] - p;
        let r2 = mesh.vertices()[f[2]] - p;
        let omega = triangle_solid_angle(&r0, &r1, &r2);
        omega_total += omega;
        let fr = mesh.face_dyads()[fi] * r0;
        accel += fr * omega;
        pot2 -= r0.dot(&fr) * omega;
    }

    FieldEval {
        accel: accel * g_rho,
        // Physics sign convention: potential negative outside the body so
        // that accel = -grad(potential).
        potential: -0.5 * g_rho * pot2,
        omega_total,
    }
}

fn interior_guard(omega_total: f64) -> Result<(), FieldError> {
    if omega_total.abs() > 2.0 * std::f64::consts::PI {
        Err(FieldError::InsideBody)
    } else {
        Ok(())
    }
}

/// Gravitational acceleration at `p`, exact for the constant-density
/// polyhedron. Errors inside the body or within the surface band.
pub fn gravity_accel(
    mesh: &AsteroidMesh,
    params: &GravityParams,
    p: &Vector3<f64>,
) -> Result<Vector3<f64>, FieldError> {
    check_surface_band(mesh, p)?;
    let eval = eval_field(mesh, params, p);
    interior_guard(eval.omega_total)?;
    Ok(eval.accel)
}

/// Gravitational potential at `p` (negative outside; accel = -grad).
pub fn gravity_potential(
    mesh: &AsteroidMesh,
    params: &GravityParams,
    p: &Vector3<f64>,
) -> Result<f64, FieldError> {
    check_surface_band(mesh, p)?;
    let eval = eval_field(mesh, params, p);
    interior_guard(eval.omega_total)?;
    Ok(eval.potential)
}

/// Acceleration and potential in one pass (the simulator's energy checks use
/// both).
pub fn gravity_accel_potential(
    mesh: &AsteroidMesh,
    params: &GravityParams,
    p: &Vector3<f64>,
) -> Result<(Vector3<f64>, f64), FieldError> {
    check_surface_band(mesh, p)?;
    let eval = eval_field(mesh, params, p);
    interior_guard(eval.omega_total)?;
    Ok((eval.accel, eval.potential))
}

/// Point-mass acceleration with parameter `mu` at position `p` relative to
/// the attractor.
pub fn point_mass_accel(mu: f64, p: &Vector3<f64>) -> Vector3<f64> {
    let r = p.norm();
    -p * (mu / (r * r * r))
}
