//! Translational spacecraft dynamics under polyhedral gravity plus commanded
//! thrust, with actuator limits and the capped random-walk disturbance used
//! to generate recovery trajectories.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gravity::{self, FieldError, GravityParams, PointClass};
use crate::mesh::AsteroidMesh;

/// Translational state in the asteroid-fixed frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacecraftState {
    /// Simulation time, seconds.
    pub t: f64,
    /// Position, meters.
    pub position: Vector3<f64>,
    /// Velocity, m/s.
    pub velocity: Vector3<f64>,
}

impl SpacecraftState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            t: 0.0,
            position,
            velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.position.iter().all(|c| c.is_finite())
            && self.velocity.iter().all(|c| c.is_finite())
    }
}

/// A 3-axis force command, newtons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrustCommand {
    pub force: Vector3<f64>,
}

impl ThrustCommand {
    pub fn zero() -> Self {
        Self {
            force: Vector3::zeros(),
        }
    }

    pub fn new(force: Vector3<f64>) -> Self {
        Self { force }
    }

    /// True when every component is within the +-u_max box.
    pub fn within_box(&self, u_max: f64) -> bool {
        self.force.iter().all(|c| c.abs() <= u_max)
    }
}

/// Clamp each axis independently to [-u_max, u_max].
pub fn clamp_command(raw: Vector3<f64>, u_max: f64) -> ThrustCommand {
    ThrustCommand::new(raw.map(|c| c.clamp(-u_max, u_max)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Control step, seconds.
    pub dt: f64,
    /// Spacecraft mass, kg.
    pub mass: f64,
    /// Per-axis thrust limit, newtons.
    pub u_max: f64,
    /// Disturbance reset window, seconds.
    pub disturbance_window: f64,
    /// Per-step random-walk increment scale, newtons.
    pub sigma_step: f64,
    /// Asteroid spin (angular velocity of the body-fixed frame), rad/s.
    pub spin: Vector3<f64>,
    /// RK4 substeps per control step.
    pub substeps: u32,
    /// Radius beyond which the craft is considered escaped, meters.
    pub escape_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 10.0,
            mass: 500.0,
            u_max: 7.0,
            disturbance_window: 100.0,
            sigma_step: 0.35,
            spin: Vector3::zeros(),
            substeps: 10,
            escape_radius: 1.0e9,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        if !(self.mass > 0.0) {
            return Err("mass must be positive".into());
        }
        if !(self.u_max > 0.0) {
            return Err("u_max must be positive".into());
        }
        if self.substeps < 1 {
            return Err("substeps must be >= 1".into());
        }
        if !(self.disturbance_window > 0.0) {
            return Err("disturbance_window must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("spacecraft crashed into the body at t = {t} s")]
    Crash { t: f64 },
    #[error("spacecraft escaped beyond {radius} m at t = {t} s")]
    Escape { t: f64, radius: f64 },
    #[error("field evaluation failed: {0}")]
    Field(#[from] FieldError),
}

fn acceleration(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    force: &Vector3<f64>,
    mesh: &AsteroidMesh,
    params: &GravityParams,
    cfg: &SimConfig,
) -> Result<Vector3<f64>, SimError> {
    let mut a = force / cfg.mass;
    if params.density > 0.0 {
        a += gravity::gravity_accel(mesh, params, r)?;
    }
    if cfg.spin != Vector3::zeros() {
        // Rotating-frame terms: -2 w x v - w x (w x r).
        let w = cfg.spin;
        a -= 2.0 * w.cross(v) + w.cross(&w.cross(r));
    }
    Ok(a)
}

/// Advance one control step with fixed-step RK4 (`cfg.substeps` substeps).
///
/// The commanded force is held constant over the step. Every substep
/// endpoint is checked for crash (interior classification) and escape.
pub fn step(
    state: &SpacecraftState,
    cmd: &ThrustCommand,
    mesh: &AsteroidMesh,
    params: &GravityParams,
    cfg: &SimConfig,
) -> Result<SpacecraftState, SimError> {
    let h = cfg.dt / cfg.substeps as f64;
    let f = cmd.force;
    let mut r = state.position;
    let mut v = state.velocity;
    let mut t = state.t;

    let map_field = |e: SimError, t: f64| match e {
        SimError::Field(_) => SimError::Crash { t },
        other => other,
    };

    for _ in 0..cfg.substeps {
        let accel = |r: &Vector3<f64>, v: &Vector3<f64>| acceleration(r, v, &f, mesh, params, cfg);

        let k1r = v;
        let k1v = accel(&r, &v).map_err(|e| map_field(e, t))?;
        let k2r = v + k1v * (h / 2.0);
        let k2v = accel(&(r + k1r * (h / 2.0)), &k2r).map_err(|e| map_field(e, t))?;
        let k3r = v + k2v * (h / 2.0);
        let k3v = accel(&(r + k2r * (h / 2.0)), &k3r).map_err(|e| map_field(e, t))?;
        let k4r = v + k3v * h;
        let k4v = accel(&(r + k3r * h), &k4r).map_err(|e| map_field(e, t))?;

        r += (k1r + 2.0 * k2r + 2.0 * k3r + k4r) * (h / 6.0);
        v += (k1v + 2.0 * k2v + 2.0 * k3v + k4v) * (h / 6.0);
        t += h;

        if r.norm() > cfg.escape_radius {
            return Err(SimError::Escape {
                t,
                radius: cfg.escape_radius,
            });
        }
        match gravity::classify_point(mesh, &r) {
            Ok(PointClass::Outside) => {}
            Ok(PointClass::Inside) | Err(_) => return Err(SimError::Crash { t }),
        }
    }

    Ok(SpacecraftState {
        t: state.t + cfg.dt,
        position: r,
        velocity: v,
    })
}

/// The additive thrust disturbance process: a per-axis Gaussian random walk,
/// norm-capped at `cap_scale` times the requested command magnitude and reset
/// at every disturbance window boundary.
#[derive(Debug, Clone)]
pub struct DisturbanceState {
    /// Current additive disturbance, newtons.
    pub d: Vector3<f64>,
    /// Intensity cap in [0, 2], multiples of the commanded magnitude.
    pub cap_scale: f64,
    /// Start time of the current window, seconds.
    pub window_start: f64,
    /// Per-step random-walk increment scale, newtons.
    pub sigma_step: f64,
    /// Seed this process was constructed from.
    pub rng_seed: u64,
    rng: ChaCha8Rng,
}

impl DisturbanceState {
    pub fn new(seed: u64, sigma_step: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cap_scale = rng.random_range(0.0..=2.0);
        Self {
            d: Vector3::zeros(),
            cap_scale,
            window_start: 0.0,
            sigma_step,
            rng_seed: seed,
            rng,
        }
    }
}

/// Advance the disturbance walk and produce the command actually applied.
///
/// Window expiry resamples the intensity cap on [0, 2] and zeroes the walk;
/// the walk then takes one Gaussian step per axis, is rescaled so its norm
/// never exceeds `cap_scale * |u_mpc|`, and the disturbed command is clamped
/// back into the thruster box.
pub fn disturbance_step(
    dist: &mut DisturbanceState,
    u_mpc: &ThrustCommand,
    t: f64,
    cfg: &SimConfig,
) -> ThrustCommand {
    if t - dist.window_start >= cfg.disturbance_window {
        dist.cap_scale = dist.rng.random_range(0.0..=2.0);
        dist.d = Vector3::zeros();
        dist.window_start = t;
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let eta = Vector3::new(
        normal.sample(&mut dist.rng),
        normal.sample(&mut dist.rng),
        normal.sample(&mut dist.rng),
    ) * dist.sigma_step;
    dist.d += eta;

    let cap = dist.cap_scale * u_mpc.force.norm();
    let norm = dist.d.norm();
    if norm > cap {
        dist.d *= if norm > 0.0 { cap / norm } else { 0.0 };
    }

    clamp_command(u_mpc.force + dist.d, cfg.u_max)
}
