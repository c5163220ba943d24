//! MPC-guided imitation control: the policy flies, a fresh MPC solution
//! periodically validates it through the dual-threshold check, and the MPC
//! takes over until the next check whenever validation fails.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::lidar;
use crate::mpc::{MpcError, MpcSolver};
use crate::policy::{infer, FrameBuffer, PolicyNetwork};
use crate::rollout::{
    shift_warm_start, CheckRecord, LoggedStep, Outcome, Provenance, RolloutEnv, TrajectoryLog,
};
use crate::sim::{clamp_command, SpacecraftState, ThrustCommand};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    /// Steps between viability checks (a check runs when
    /// `step_index % check_period == 0`).
    pub check_period: usize,
    /// Command-difference threshold, newtons.
    pub eps_magnitude: f64,
    /// Inter-command angle threshold, radians.
    pub eps_angle: f64,
    /// Magnitude floor below which the angle branch is skipped.
    pub eta_zero: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            check_period: 10,
            eps_magnitude: 0.5,
            eps_angle: 10.0_f64.to_radians(),
            eta_zero: 0.05,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.check_period < 1 {
            return Err("check_period must be >= 1".into());
        }
        if !(self.eps_magnitude > 0.0) {
            return Err("eps_magnitude must be positive".into());
        }
        if !(self.eps_angle > 0.0 && self.eps_angle < std::f64::consts::PI) {
            return Err("eps_angle must lie in (0, pi)".into());
        }
        if self.eta_zero < 0.0 {
            return Err("eta_zero must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Viability {
    Viable,
    NotViable,
}

#[derive(Debug, Clone, Copy)]
pub struct CheckDiagnostics {
    pub magnitude_error: f64,
    /// Inter-command angle; `None` when either command fell below the
    /// magnitude floor and the angle branch was skipped.
    pub angle: Option<f64>,
}

/// The dual-threshold check: viable when the command difference is small OR
/// the commanded directions agree. Near-zero commands compare by magnitude
/// only, and two near-zero commands always pass (agreeing on "do nothing").
pub fn viability_check(
    u_mpc: &ThrustCommand,
    u_model: &ThrustCommand,
    cfg: &HybridConfig,
) -> (Viability, CheckDiagnostics) {
    let magnitude_error = (u_mpc.force - u_model.force).norm();
    let n_mpc = u_mpc.force.norm();
    let n_model = u_model.force.norm();

    if n_mpc < cfg.eta_zero && n_model < cfg.eta_zero {
        return (
            Viability::Viable,
            CheckDiagnostics {
                magnitude_error,
                angle: None,
            },
        );
    }

    let angle = if n_mpc >= cfg.eta_zero && n_model >= cfg.eta_zero {
        Some(
            u_mpc
                .force
                .cross(&u_model.force)
                .norm()
                .atan2(u_mpc.force.dot(&u_model.force)),
        )
    } else {
        None
    };

    let magnitude_ok = magnitude_error < cfg.eps_magnitude;
    let angle_ok = angle.map(|a| a < cfg.eps_angle).unwrap_or(false);
    let verdict = if magnitude_ok || angle_ok {
        Viability::Viable
    } else {
        Viability::NotViable
    };
    (
        verdict,
        CheckDiagnostics {
            magnitude_error,
            angle,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HybridMode {
    ModelViable,
    MpcFallback,
}

/// Per-episode controller state and usage counters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridState {
    pub mode: HybridMode,
    pub step_index: usize,
    pub model_steps: usize,
    pub mpc_steps: usize,
    pub mpc_solves: usize,
    pub checks_passed: usize,
    pub checks_failed: usize,
}

impl Default for HybridState {
    fn default() -> Self {
        Self {
            mode: HybridMode::MpcFallback,
            step_index: 0,
            model_steps: 0,
            mpc_steps: 0,
            mpc_solves: 0,
            checks_passed: 0,
            checks_failed: 0,
        }
    }
}

impl HybridState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fraction of steps that needed no MPC solve (the computation-saving
    /// measure the usage reports carry).
    pub fn model_usage(&self) -> f64 {
        if self.step_index == 0 {
            return 0.0;
        }
        1.0 - self.mpc_solves as f64 / self.step_index as f64
    }
}

/// Usage summary of one hybrid episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UsageReport {
    pub total_steps: usize,
    pub model_steps: usize,
    pub mpc_steps: usize,
    pub mpc_solves: usize,
    pub checks_passed: usize,
    pub checks_failed: usize,
    /// 1 - solves/steps.
    pub model_usage: f64,
    pub policy_wall_time_s: f64,
    pub mpc_wall_time_s: f64,
}

pub struct HybridStepOutput {
    pub command: ThrustCommand,
    pub provenance: Provenance,
    pub check: Option<CheckRecord>,
    pub policy_time_s: Option<f64>,
    pub mpc_time_s: Option<f64>,
}

/// One hybrid control decision.
///
/// At check steps both controllers run and the viability check sets the
/// mode; between checks only the controller selected by the mode runs, so a
/// viable model saves the MPC solve entirely.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_step(
    hstate: &mut HybridState,
    state: &SpacecraftState,
    buffer: &FrameBuffer,
    goal: &SpacecraftState,
    policy: &PolicyNetwork,
    solver: &MpcSolver,
    env: &RolloutEnv,
    warm: &mut Option<Vec<ThrustCommand>>,
    cfg: &HybridConfig,
) -> Result<HybridStepOutput, MpcError> {
    let is_check = hstate.step_index % cfg.check_period == 0;

    let solve_mpc = |warm: &mut Option<Vec<ThrustCommand>>| -> Result<(ThrustCommand, f64), MpcError> {
        let t0 = Instant::now();
        let sol = solver.solve(state, goal, env.mesh, &env.gravity, warm.as_deref())?;
        let dt = t0.elapsed().as_secs_f64();
        *warm = Some(shift_warm_start(&sol.controls));
        Ok((sol.controls[0], dt))
    };

    let output = if is_check {
        let (u_mpc, mpc_time) = solve_mpc(warm)?;
        hstate.mpc_solves += 1;
        let t0 = Instant::now();
        let u_model = infer(policy, buffer, goal);
        let policy_time = t0.elapsed().as_secs_f64();

        let (verdict, diag) = viability_check(&u_mpc, &u_model, cfg);
        let viable = verdict == Viability::Viable;
        if viable {
            hstate.checks_passed += 1;
            hstate.mode = HybridMode::ModelViable;
        } else {
            hstate.checks_failed += 1;
            hstate.mode = HybridMode::MpcFallback;
        }
        let (command, provenance) = if viable {
            (u_model, Provenance::Model)
        } else {
            (u_mpc, Provenance::Mpc)
        };
        HybridStepOutput {
            command,
            provenance,
            check: Some(CheckRecord {
                viable,
                magnitude_error: diag.magnitude_error,
                angle: diag.angle,
                u_mpc,
                u_model,
            }),
            policy_time_s: Some(policy_time),
            mpc_time_s: Some(mpc_time),
        }
    } else if hstate.mode == HybridMode::ModelViable {
        let t0 = Instant::now();
        let u_model = infer(policy, buffer, goal);
        let policy_time = t0.elapsed().as_secs_f64();
        HybridStepOutput {
            command: u_model,
            provenance: Provenance::Model,
            check: None,
            policy_time_s: Some(policy_time),
            mpc_time_s: None,
        }
    } else {
        let (u_mpc, mpc_time) = solve_mpc(warm)?;
        hstate.mpc_solves += 1;
        HybridStepOutput {
            command: u_mpc,
            provenance: Provenance::Mpc,
            check: None,
            policy_time_s: None,
            mpc_time_s: Some(mpc_time),
        }
    };

    match output.provenance {
        Provenance::Model => hstate.model_steps += 1,
        Provenance::Mpc => hstate.mpc_steps += 1,
    }
    hstate.step_index += 1;

    Ok(HybridStepOutput {
        command: clamp_command(output.command.force, env.sim.u_max),
        ..output
    })
}

/// Closed-loop hybrid transit with per-step provenance logging.
pub fn rollout_hybrid(
    policy: &PolicyNetwork,
    solver: &MpcSolver,
    env: &RolloutEnv,
    start: &SpacecraftState,
    goal: &SpacecraftState,
    cfg: &HybridConfig,
) -> Result<(TrajectoryLog, UsageReport), MpcError> {
    let mut state = *start;
    let mut buffer = FrameBuffer::new(policy.spec.buffer_len);
    let mut hstate = HybridState::new();
    let mut warm: Option<Vec<ThrustCommand>> = None;
    let mut steps = Vec::new();
    let mut outcome = Outcome::Timeout;

    for step_idx in 0..env.step_budget {
        let frame = match lidar::scan(env.mesh, env.geometry, env.caster, &state.position, state.t)
        {
            Ok(f) => f,
            Err(e) => {
                outcome = Outcome::Aborted(e.to_string());
                break;
            }
        };
        buffer.push_frame(&frame, &policy.spec.norm);

        let out = hybrid_step(
            &mut hstate,
            &state,
            &buffer,
            goal,
            policy,
            solver,
            env,
            &mut warm,
            cfg,
        )?;

        steps.push(LoggedStep {
            step: step_idx,
            state,
            command: out.command,
            provenance: out.provenance,
            policy_time_s: out.policy_time_s,
            mpc_time_s: out.mpc_time_s,
            check: out.check,
        });

        match env.advance(&state, &out.command) {
            Ok(next) => state = next,
            Err(o) => {
                outcome = o;
                break;
            }
        }
        if env.arrived(&state, goal) {
            outcome = Outcome::Reached;
            break;
        }
    }

    let policy_wall: f64 = steps.iter().filter_map(|s| s.policy_time_s).sum();
    let mpc_wall: f64 = steps.iter().filter_map(|s| s.mpc_time_s).sum();
    let report = UsageReport {
        total_steps: hstate.step_index,
        model_steps: hstate.model_steps,
        mpc_steps: hstate.mpc_steps,
        mpc_solves: hstate.mpc_solves,
        checks_passed: hstate.checks_passed,
        checks_failed: hstate.checks_failed,
        model_usage: hstate.model_usage(),
        policy_wall_time_s: policy_wall,
        mpc_wall_time_s: mpc_wall,
    };

    Ok((
        TrajectoryLog {
            start: *start,
            goal: *goal,
            steps,
            final_state: state,
            outcome,
        },
        report,
    ))
}
