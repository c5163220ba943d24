//! Shared closed-loop transit machinery: the environment bundle, outcome
//! semantics, per-step logs, and the pure-MPC baseline rollout.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::gravity::GravityParams;
use crate::lidar::{LidarArrayGeometry, Raycaster};
use crate::mesh::AsteroidMesh;
use crate::mpc::{MpcError, MpcSolver};
use crate::sim::{self, SimConfig, SimError, SpacecraftState, ThrustCommand};

/// How a transit ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Reached,
    Timeout,
    Crashed,
    Escaped,
    /// A module error ended the episode early (e.g. an infeasible MPC
    /// subproblem); carried as data so batch runs never panic.
    Aborted(String),
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Reached => write!(f, "reached"),
            Outcome::Timeout => write!(f, "timeout"),
            Outcome::Crashed => write!(f, "crashed"),
            Outcome::Escaped => write!(f, "escaped"),
            Outcome::Aborted(msg) => write!(f, "aborted: {msg}"),
        }
    }
}

/// Which controller produced an applied command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Mpc,
    Model,
}

/// One step of a closed-loop trajectory log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoggedStep {
    pub step: usize,
    /// State at which the command was decided.
    pub state: SpacecraftState,
    pub command: ThrustCommand,
    pub provenance: Provenance,
    /// Wall time of the policy inference at this step, seconds.
    pub policy_time_s: Option<f64>,
    /// Wall time of the MPC solve at this step, seconds.
    pub mpc_time_s: Option<f64>,
    /// Hybrid check diagnostics when a check ran at this step.
    pub check: Option<CheckRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRecord {
    pub viable: bool,
    pub magnitude_error: f64,
    pub angle: Option<f64>,
    pub u_mpc: ThrustCommand,
    pub u_model: ThrustCommand,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub start: SpacecraftState,
    pub goal: SpacecraftState,
    pub steps: Vec<LoggedStep>,
    pub final_state: SpacecraftState,
    pub outcome: Outcome,
}

impl TrajectoryLog {
    pub fn terminal_position_error(&self) -> f64 {
        (self.final_state.position - self.goal.position).norm()
    }
}

/// Everything a closed-loop transit needs besides the controller.
pub struct RolloutEnv<'a> {
    pub mesh: &'a AsteroidMesh,
    pub gravity: GravityParams,
    pub sim: SimConfig,
    pub geometry: &'a LidarArrayGeometry,
    pub caster: &'a Raycaster,
    /// Goal-ball position tolerance, meters.
    pub eps_pos: f64,
    /// Goal-ball speed tolerance, m/s.
    pub eps_vel: f64,
    pub step_budget: usize,
}

impl RolloutEnv<'_> {
    pub fn arrived(&self, state: &SpacecraftState, goal: &SpacecraftState) -> bool {
        (state.position - goal.position).norm() <= self.eps_pos
            && (state.velocity - goal.velocity).norm() <= self.eps_vel
    }

    /// Advance the sim, mapping errors to outcomes.
    pub fn advance(
        &self,
        state: &SpacecraftState,
        cmd: &ThrustCommand,
    ) -> Result<SpacecraftState, Outcome> {
        match sim::step(state, cmd, self.mesh, &self.gravity, &self.sim) {
            Ok(next) => Ok(next),
            Err(SimError::Crash { .. }) => Err(Outcome::Crashed),
            Err(SimError::Escape { .. }) => Err(Outcome::Escaped),
            Err(e) => Err(Outcome::Aborted(e.to_string())),
        }
    }
}

/// Shift a control sequence by one step for warm-starting the next solve.
pub fn shift_warm_start(controls: &[ThrustCommand]) -> Vec<ThrustCommand> {
    if controls.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<ThrustCommand> = controls[1..].to_vec();
    out.push(*controls.last().unwrap());
    out
}

/// Fly the transit on the MPC alone (the trusted baseline).
pub fn rollout_mpc(
    solver: &MpcSolver,
    env: &RolloutEnv,
    start: &SpacecraftState,
    goal: &SpacecraftState,
) -> Result<TrajectoryLog, MpcError> {
    let mut state = *start;
    let mut steps = Vec::new();
    let mut warm: Option<Vec<ThrustCommand>> = None;
    let mut outcome = Outcome::Timeout;

    for step_idx in 0..env.step_budget {
        let t0 = Instant::now();
        let sol = solver.solve(&state, goal, env.mesh, &env.gravity, warm.as_deref())?;
        let mpc_time = t0.elapsed().as_secs_f64();
        let cmd = sol.controls[0];
        warm = Some(shift_warm_start(&sol.controls));

        steps.push(LoggedStep {
            step: step_idx,
            state,
            command: cmd,
            provenance: Provenance::Mpc,
            policy_time_s: None,
            mpc_time_s: Some(mpc_time),
            check: None,
        });

        match env.advance(&state, &cmd) {
            Ok(next) => state = next,
            Err(out) => {
                outcome = out;
                break;
            }
        }
        if env.arrived(&state, goal) {
            outcome = Outcome::Reached;
            break;
        }
    }

    Ok(TrajectoryLog {
        start: *start,
        goal: *goal,
        steps,
        final_state: state,
        outcome,
    })
}
