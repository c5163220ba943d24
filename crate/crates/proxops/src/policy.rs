//! The imitation-learned end-to-end controller: circular-azimuth CNN over
//! each buffered lidar frame, an LSTM across the frame sequence, and an MLP
//! head over the recurrent state concatenated with the goal. The output is
//! squashed into the thruster box.
//!
//! The policy never sees the spacecraft state: inference takes only the
//! frame buffer and the goal.

use std::collections::VecDeque;
use std::rc::Rc;
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lidar::{self, LidarFrame, NormalizationSpec};
use crate::nn::{
    self, rmse_grad, rmse_loss, AvgPool2d, CircConv2d, Dense, Grid, LstmCell, ParamStore,
    TrainableModel,
};
use crate::rollout::{LoggedStep, Outcome, Provenance, RolloutEnv, TrajectoryLog};
use crate::sim::{clamp_command, SpacecraftState, ThrustCommand};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicySpec {
    /// Number of buffered frames fed to the recurrent stage.
    pub buffer_len: usize,
    pub azimuth_count: u32,
    pub plane_count: u32,
    pub conv1_channels: usize,
    pub conv1_kernel: (usize, usize),
    pub conv1_stride_az: usize,
    pub pool1: (usize, usize),
    pub conv2_channels: usize,
    pub conv2_kernel: (usize, usize),
    pub conv2_stride_az: usize,
    pub pool2: (usize, usize),
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub head_hidden: Vec<usize>,
    pub u_max: f64,
    /// Goal position/velocity scales applied before concatenation.
    pub goal_pos_scale: f64,
    pub goal_vel_scale: f64,
    /// Frame normalization fitted on the training split.
    pub norm: NormalizationSpec,
}

impl PolicySpec {
    /// Defaults for the 360x12 array at desk scale.
    pub fn defaults(norm: NormalizationSpec, u_max: f64, goal_pos_scale: f64) -> Self {
        Self {
            buffer_len: 4,
            azimuth_count: 360,
            plane_count: 12,
            conv1_channels: 8,
            conv1_kernel: (7, 3),
            conv1_stride_az: 6,
            pool1: (2, 2),
            conv2_channels: 16,
            conv2_kernel: (5, 3),
            conv2_stride_az: 2,
            pool2: (3, 2),
            embed_dim: 128,
            lstm_hidden: 64,
            head_hidden: vec![64, 64],
            u_max,
            goal_pos_scale,
            goal_vel_scale: 50.0,
            norm,
        }
    }
}

/// Ring buffer of the most recent normalized frames. Before the buffer
/// fills, reads repeat the oldest available frame.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    capacity: usize,
    frames: VecDeque<Rc<Vec<f64>>>,
}

impl FrameBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        Self {
            capacity,
            frames: VecDeque::with_capacity(capacity),
        }
    }

    pub fn fill(&self) -> usize {
        self.frames.len()
    }

    /// Push a raw frame; it is normalized on the way in.
    pub fn push_frame(&mut self, frame: &LidarFrame, norm: &NormalizationSpec) {
        self.push_normalized(lidar::frame_to_model_input(frame, norm));
    }

    pub fn push_normalized(&mut self, normalized: Vec<f64>) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(Rc::new(normalized));
    }

    /// Oldest-to-newest view, repeat-padded at the front to capacity.
    pub fn window(&self) -> Vec<Rc<Vec<f64>>> {
        assert!(!self.frames.is_empty(), "buffer fill must be >= 1");
        let mut out = Vec::with_capacity(self.capacity);
        let oldest = self.frames.front().unwrap();
        for _ in 0..self.capacity - self.frames.len() {
            out.push(Rc::clone(oldest));
        }
        for f in &self.frames {
            out.push(Rc::clone(f));
        }
        out
    }
}

/// One supervised sample: a window of raw frames, the goal, and the expert
/// command at the window's final step.
#[derive(Debug, Clone)]
pub struct PolicySample {
    /// Oldest-to-newest raw frames (length = buffer_len; repeat-padded).
    pub frames: Vec<Rc<Vec<f32>>>,
    pub goal: [f64; 6],
    pub target: [f64; 3],
}

struct FrameStageCache {
    input: Vec<f64>,
    conv1_act: Vec<f64>,
    pool1_out: Vec<f64>,
    conv2_act: Vec<f64>,
    pool2_out: Vec<f64>,
    embed_act: Vec<f64>,
}

struct ForwardCache {
    frames: Vec<FrameStageCache>,
    lstm: Vec<nn::LstmStepCache>,
    head_inputs: Vec<Vec<f64>>,
    head_acts: Vec<Vec<f64>>,
    z: Vec<f64>,
    squashed: [f64; 3],
}

pub struct PolicyNetwork {
    pub spec: PolicySpec,
    store: ParamStore,
    conv1: CircConv2d,
    pool1: AvgPool2d,
    conv2: CircConv2d,
    pool2: AvgPool2d,
    embed: Dense,
    lstm: LstmCell,
    head: Vec<Dense>,
    out: Dense,
}

impl PolicyNetwork {
    pub fn new(spec: PolicySpec, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_grid = Grid {
            channels: 1,
            azimuth: spec.azimuth_count as usize,
            planes: spec.plane_count as usize,
        };
        let conv1 = CircConv2d::new(
            &mut store,
            in_grid,
            spec.conv1_channels,
            spec.conv1_kernel.0,
            spec.conv1_kernel.1,
            spec.conv1_stride_az,
            &mut rng,
        );
        let pool1 = AvgPool2d::new(conv1.out_grid, spec.pool1.0, spec.pool1.1);
        let conv2 = CircConv2d::new(
            &mut store,
            pool1.out_grid,
            spec.conv2_channels,
            spec.conv2_kernel.0,
            spec.conv2_kernel.1,
            spec.conv2_stride_az,
            &mut rng,
        );
        let pool2 = AvgPool2d::new(conv2.out_grid, spec.pool2.0, spec.pool2.1);
        let embed = Dense::new(&mut store, pool2.out_grid.len(), spec.embed_dim, &mut rng);
        let lstm = LstmCell::new(&mut store, spec.embed_dim, spec.lstm_hidden, &mut rng);

        let mut head = Vec::new();
        let mut in_dim = spec.lstm_hidden + 6;
        for &h in &spec.head_hidden {
            head.push(Dense::new(&mut store, in_dim, h, &mut rng));
            in_dim = h;
        }
        let out = Dense::new(&mut store, in_dim, 3, &mut rng);

        Self {
            spec,
            store,
            conv1,
            pool1,
            conv2,
            pool2,
            embed,
            lstm,
            head,
            out,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn scale_goal(&self, goal: &SpacecraftState) -> [f64; 6] {
        [
            goal.position.x / self.spec.goal_pos_scale,
            goal.position.y / self.spec.goal_pos_scale,
            goal.position.z / self.spec.goal_pos_scale,
            goal.velocity.x / self.spec.goal_vel_scale,
            goal.velocity.y / self.spec.goal_vel_scale,
            goal.velocity.z / self.spec.goal_vel_scale,
        ]
    }

    fn forward_cached(&self, frames: &[&[f64]], goal: &[f64; 6]) -> ForwardCache {
        assert_eq!(frames.len(), self.spec.buffer_len, "window length");
        let mut frame_caches = Vec::with_capacity(frames.len());
        let mut lstm_caches = Vec::with_capacity(frames.len());
        let mut h = vec![0.0; self.spec.lstm_hidden];
        let mut c = vec![0.0; self.spec.lstm_hidden];

        for frame in frames {
            let input = frame.to_vec();
            let mut conv1_act = self.conv1.forward(&self.store, &input);
            nn::relu(&mut conv1_act);
            let pool1_out = self.pool1.forward(&conv1_act);
            let mut conv2_act = self.conv2.forward(&self.store, &pool1_out);
            nn::relu(&mut conv2_act);
            let pool2_out = self.pool2.forward(&conv2_act);
            let mut embed_act = self.embed.forward(&self.store, &pool2_out);
            nn::relu(&mut embed_act);

            let cache = self.lstm.step(&self.store, &embed_act, &h, &c);
            h = cache.h.clone();
            c = cache.c.clone();
            lstm_caches.push(cache);

            frame_caches.push(FrameStageCache {
                input,
                conv1_act,
                pool1_out,
                conv2_act,
                pool2_out,
                embed_act,
            });
        }

        let mut head_inputs = Vec::new();
        let mut head_acts = Vec::new();
        let mut x: Vec<f64> = h.iter().copied().chain(goal.iter().copied()).collect();
        for layer in &self.head {
            head_inputs.push(x.clone());
            let mut y = layer.forward(&self.store, &x);
            nn::relu(&mut y);
            head_acts.push(y.clone());
            x = y;
        }
        head_inputs.push(x.clone());
        let z = self.out.forward(&self.store, &x);
        let squashed = [
            z[0].tanh() * self.spec.u_max,
            z[1].tanh() * self.spec.u_max,
            z[2].tanh() * self.spec.u_max,
        ];

        ForwardCache {
            frames: frame_caches,
            lstm: lstm_caches,
            head_inputs,
            head_acts,
            z,
            squashed,
        }
    }

    /// Forward pass producing the squashed, clamped thrust command.
    pub fn forward(&self, frames: &[&[f64]], goal: &[f64; 6]) -> ThrustCommand {
        let cache = self.forward_cached(frames, goal);
        clamp_command(
            Vector3::new(cache.squashed[0], cache.squashed[1], cache.squashed[2]),
            self.spec.u_max,
        )
    }

    fn backward_from_cache(&mut self, cache: &ForwardCache, d_squash: [f64; 3]) {
        // d/dz of tanh(z) * u_max.
        let dz: Vec<f64> = (0..3)
            .map(|i| {
                let t = cache.z[i].tanh();
                d_squash[i] * self.spec.u_max * (1.0 - t * t)
            })
            .collect();

        let mut grad = self
            .out
            .backward(&mut self.store, cache.head_inputs.last().unwrap(), &dz);
        for (i, layer) in self.head.iter().enumerate().rev() {
            nn::relu_backward(&cache.head_acts[i], &mut grad);
            grad = layer.backward(&mut self.store, &cache.head_inputs[i], &grad);
        }

        // Split the concatenation gradient; the goal part has no parameters.
        let mut dh = grad[..self.spec.lstm_hidden].to_vec();
        let mut dc = vec![0.0; self.spec.lstm_hidden];

        for t in (0..cache.frames.len()).rev() {
            let (d_embed, dh_prev, dc_prev) =
                self.lstm
                    .step_backward(&mut self.store, &cache.lstm[t], &dh, &dc);
            dh = dh_prev;
            dc = dc_prev;

            let fc = &cache.frames[t];
            let mut g = d_embed;
            nn::relu_backward(&fc.embed_act, &mut g);
            let g = self.embed.backward(&mut self.store, &fc.pool2_out, &g);
            let mut g = self.pool2.backward(&g);
            nn::relu_backward(&fc.conv2_act, &mut g);
            let g = self.conv2.backward(&mut self.store, &fc.pool1_out, &g);
            let mut g = self.pool1.backward(&g);
            nn::relu_backward(&fc.conv1_act, &mut g);
            let _ = self.conv1.backward(&mut self.store, &fc.input, &g);
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), nn::CheckpointError> {
        let spec = serde_json::to_value(&self.spec).expect("spec serializes");
        nn::save_checkpoint_path(path, "policy", &spec, &self.store)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, nn::CheckpointError> {
        let ck = nn::load_checkpoint_path(path)?;
        if ck.kind != "policy" {
            return Err(nn::CheckpointError::Format(format!(
                "expected a policy checkpoint, found {:?}",
                ck.kind
            )));
        }
        let spec: PolicySpec = serde_json::from_value(ck.spec)?;
        let mut model = Self::new(spec, 0);
        if ck.params.len() != model.store.len() {
            return Err(nn::CheckpointError::Format(
                "parameter count does not match the spec".into(),
            ));
        }
        model.store.restore(&ck.params);
        Ok(model)
    }
}

fn normalize_window(sample: &PolicySample, norm: &NormalizationSpec) -> Vec<Vec<f64>> {
    sample
        .frames
        .iter()
        .map(|f| f.iter().map(|&r| norm.normalize_value(r)).collect())
        .collect()
}

impl TrainableModel for PolicyNetwork {
    type Sample = PolicySample;

    fn backward_sample(&mut self, sample: &PolicySample) -> f64 {
        let norm = self.spec.norm;
        let frames = normalize_window(sample, &norm);
        let views: Vec<&[f64]> = frames.iter().map(|f| f.as_slice()).collect();
        let cache = self.forward_cached(&views, &sample.goal);
        let loss = rmse_loss(&cache.squashed, &sample.target);
        let d = rmse_grad(&cache.squashed, &sample.target);
        self.backward_from_cache(&cache, [d[0], d[1], d[2]]);
        loss
    }

    fn eval_sample(&self, sample: &PolicySample) -> f64 {
        let norm = self.spec.norm;
        let frames = normalize_window(sample, &norm);
        let views: Vec<&[f64]> = frames.iter().map(|f| f.as_slice()).collect();
        let cache = self.forward_cached(&views, &sample.goal);
        rmse_loss(&cache.squashed, &sample.target)
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

/// Run inference from the buffered frames and the goal. The command is
/// squashed and clamped into the box by construction.
pub fn infer(policy: &PolicyNetwork, buffer: &FrameBuffer, goal: &SpacecraftState) -> ThrustCommand {
    let window = buffer.window();
    let views: Vec<&[f64]> = window.iter().map(|f| f.as_slice()).collect();
    policy.forward(&views, &policy.scale_goal(goal))
}

/// Closed-loop transit on the policy alone: scan, buffer, infer, clamp,
/// step. No MPC and no state access by the controller.
pub fn rollout_pure(
    policy: &PolicyNetwork,
    env: &RolloutEnv,
    start: &SpacecraftState,
    goal: &SpacecraftState,
) -> TrajectoryLog {
    let mut state = *start;
    let mut buffer = FrameBuffer::new(policy.spec.buffer_len);
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

        let t0 = Instant::now();
        let cmd = infer(policy, &buffer, goal);
        let policy_time = t0.elapsed().as_secs_f64();
        let cmd = clamp_command(cmd.force, env.sim.u_max);

        steps.push(LoggedStep {
            step: step_idx,
            state,
            command: cmd,
            provenance: Provenance::Model,
            policy_time_s: Some(policy_time),
            mpc_time_s: None,
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

    TrajectoryLog {
        start: *start,
        goal: *goal,
        steps,
        final_state: state,
        outcome,
    }
}
