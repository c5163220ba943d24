//! End-to-end pipeline stages behind the CLI subcommands: dataset
//! generation, surrogate and policy training, seeded rollouts, evaluation
//! and report aggregation. Every stage is a plain function over the run
//! config, a master seed and a run directory, so tests drive the exact same
//! code paths as the binary.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::dataset::{
    self, build_policy_samples, fit_normalization, read_episode, read_grid, read_manifest,
    sample_transit, split_episodes, write_episode, write_grid, write_manifest, DatasetError,
    DatasetManifest, EpisodeMeta, FrameSource, LoadedEpisode, MANIFEST_VERSION,
};
use crate::eval::{
    correlation_histograms, energy_ratio, timing_report, trajectory_error_curves, EnergyModel,
    EvalError, TimingReport,
};
use crate::hybrid::{rollout_hybrid, UsageReport};
use crate::lidar::LidarFrame;
use crate::mpc::MpcError;
use crate::nn::{CheckpointError, TrainError, TrainOpts, TrainableModel};
use crate::policy::{PolicyNetwork, PolicySpec};
use crate::rollout::{rollout_mpc, LoggedStep, Outcome, TrajectoryLog};
use crate::seed::derive_seed;
use crate::sim::SpacecraftState;
use crate::surrogate::{train_surrogate, SurrogateReport, SurrogateSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("training failed: {0}")]
    Train(#[from] TrainError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("mpc error: {0}")]
    Mpc(#[from] MpcError),
    #[error("evaluation error: {0}")]
    Eval(#[from] EvalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
}

impl PipelineError {
    /// Stable process exit code per error class (documented in `--help`).
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Io(_) | PipelineError::Json(_) => 3,
            PipelineError::MissingArtifact(_) => 4,
            PipelineError::Mpc(_) | PipelineError::Train(_) | PipelineError::Eval(_) => 5,
            PipelineError::Dataset(_) | PipelineError::Checkpoint(_) => 6,
        }
    }
}

pub fn surrogate_checkpoint_path(run_dir: &Path) -> PathBuf {
    dataset::checkpoints_dir(run_dir).join("surrogate.ckpt")
}

pub fn policy_checkpoint_path(run_dir: &Path) -> PathBuf {
    dataset::checkpoints_dir(run_dir).join("policy.ckpt")
}

fn surrogate_spec(cfg: &RunConfig) -> SurrogateSpec {
    SurrogateSpec {
        hidden: cfg.surrogate.hidden.clone(),
        azimuth_count: cfg.lidar.rays_per_plane as u32,
        plane_count: cfg.lidar.n_planes as u32,
        input_scale: cfg.dataset.grid_cube_side / 2.0,
        max_range: cfg.lidar.max_range,
        miss_loss_weight: cfg.surrogate.miss_loss_weight,
    }
}

fn surrogate_train_opts(cfg: &RunConfig, master_seed: u64) -> TrainOpts {
    TrainOpts {
        epochs: cfg.surrogate.epochs,
        batch_size: cfg.surrogate.batch_size,
        learning_rate: cfg.surrogate.learning_rate,
        seed: derive_seed(master_seed, "surrogate", 0),
        max_batches_per_epoch: None,
        final_lr_factor: cfg.surrogate.final_lr_factor,
        weight_decay: 0.0,
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenDataSummary {
    pub n_clean: usize,
    pub n_disturbed: usize,
    pub grid_points: usize,
    pub grid_skipped: usize,
    pub outcomes: Vec<(u64, Outcome)>,
    pub surrogate_report: SurrogateReport,
}

/// Generate the full dataset: the surrogate grid, the surrogate itself (it
/// synthesizes frames for the disturbed episodes), clean raycast episodes,
/// disturbed episodes, the episode split and the manifest.
pub fn gen_data(
    cfg: &RunConfig,
    master_seed: u64,
    run_dir: &Path,
) -> Result<GenDataSummary, PipelineError> {
    std::fs::create_dir_all(run_dir)?;
    let bundle = dataset::SceneBundle::from_config(cfg)?;
    let env = bundle.rollout_env(cfg);

    // Surrogate grid plus training; disturbed episodes consume the model.
    let (grid, grid_skipped) = dataset::generate_surrogate_grid(
        &bundle.mesh,
        &bundle.geometry,
        &bundle.caster,
        cfg.dataset.grid_cube_side,
        cfg.dataset.grid_points_per_axis,
    )?;
    let (grid_file, grid_frames_file) = write_grid(run_dir, &grid, &bundle.geometry)?;

    let (surrogate, surrogate_report) = train_surrogate(
        &grid,
        surrogate_spec(cfg),
        &surrogate_train_opts(cfg, master_seed),
    )?;
    std::fs::create_dir_all(dataset::checkpoints_dir(run_dir))?;
    surrogate.save(&surrogate_checkpoint_path(run_dir))?;

    let n_total = cfg.dataset.n_clean + cfg.dataset.n_disturbed;
    let mut episodes: Vec<EpisodeMeta> = Vec::with_capacity(n_total);
    let mut outcomes = Vec::with_capacity(n_total);

    for i in 0..n_total {
        let disturbed = i >= cfg.dataset.n_clean;
        let transit_seed = derive_seed(master_seed, "transit", i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(transit_seed);
        let (start, goal) = sample_transit(
            &mut rng,
            &bundle.keep_out,
            cfg.transits.shell_inner_scale,
            cfg.transits.shell_outer_scale,
            cfg.transits.min_margin,
        );
        let episode_seed = derive_seed(master_seed, "disturbance", i as u64);
        let source = if disturbed {
            FrameSource::Surrogate(&surrogate)
        } else {
            FrameSource::Raycast
        };
        let run = dataset::run_expert_episode(
            &start,
            &goal,
            disturbed,
            episode_seed,
            i as u64,
            &env,
            &bundle.solver,
            &source,
        );
        let (records_file, frames_file) = write_episode(run_dir, i as u64, &run.records, &run.frames)?;
        outcomes.push((i as u64, run.outcome.clone()));
        episodes.push(EpisodeMeta {
            id: i as u64,
            seed: episode_seed,
            start,
            goal,
            disturbed,
            steps: run.records.len(),
            outcome: run.outcome,
            records_file,
            frames_file,
        });
    }

    let ids: Vec<u64> = episodes.iter().map(|e| e.id).collect();
    let f = cfg.dataset.split_fractions;
    let splits = split_episodes(&ids, (f[0], f[1], f[2]), derive_seed(master_seed, "split", 0))?;

    // Normalization statistics from the training split only.
    let mut train_eps = Vec::new();
    for id in &splits.train {
        let meta = episodes.iter().find(|e| e.id == *id).unwrap();
        train_eps.push(read_episode(run_dir, meta)?);
    }
    let norm = fit_normalization(&train_eps.iter().collect::<Vec<_>>());

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        master_seed,
        config: cfg.to_json(),
        episodes,
        splits,
        normalization: norm,
        n_clean: cfg.dataset.n_clean,
        n_disturbed: cfg.dataset.n_disturbed,
        grid_file: Some(grid_file),
        grid_frames_file: Some(grid_frames_file),
        grid_points: grid.len(),
        grid_skipped_interior: grid_skipped,
    };
    write_manifest(run_dir, &manifest)?;

    Ok(GenDataSummary {
        n_clean: cfg.dataset.n_clean,
        n_disturbed: cfg.dataset.n_disturbed,
        grid_points: grid.len(),
        grid_skipped: grid_skipped,
        outcomes,
        surrogate_report,
    })
}

/// Retrain the surrogate from the grid stored in the run directory.
/// With the same master seed this reproduces the checkpoint written by
/// [`gen_data`].
pub fn train_surrogate_stage(
    cfg: &RunConfig,
    master_seed: u64,
    run_dir: &Path,
) -> Result<SurrogateReport, PipelineError> {
    let manifest = read_manifest(run_dir).map_err(missing_if_layout("run `gen-data` first"))?;
    let grid = read_grid(run_dir, &manifest)?;
    let (model, report) = train_surrogate(
        &grid,
        surrogate_spec(cfg),
        &surrogate_train_opts(cfg, master_seed),
    )?;
    std::fs::create_dir_all(dataset::checkpoints_dir(run_dir))?;
    model.save(&surrogate_checkpoint_path(run_dir))?;
    let report_path = dataset::reports_dir(run_dir).join("surrogate_report.json");
    std::fs::create_dir_all(dataset::reports_dir(run_dir))?;
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn missing_if_layout(hint: &'static str) -> impl Fn(DatasetError) -> PipelineError {
    move |e| match e {
        DatasetError::Layout(msg) => PipelineError::MissingArtifact(format!("{msg} ({hint})")),
        other => PipelineError::Dataset(other),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PolicyTrainSummary {
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub test_rmse: f64,
    /// RMSE of the always-zero predictor on the same test split.
    pub zero_baseline_rmse: f64,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
}

fn load_split_episodes(
    run_dir: &Path,
    manifest: &DatasetManifest,
    ids: &[u64],
) -> Result<Vec<LoadedEpisode>, PipelineError> {
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let meta = manifest.episode(*id).ok_or_else(|| {
            PipelineError::MissingArtifact(format!("episode {id} not in manifest"))
        })?;
        out.push(read_episode(run_dir, meta)?);
    }
    Ok(out)
}

/// Train the imitation policy on the dataset's training split, checkpoint on
/// the validation split, and report the test-split RMSE once at the end.
pub fn train_policy_stage(
    cfg: &RunConfig,
    master_seed: u64,
    run_dir: &Path,
) -> Result<PolicyTrainSummary, PipelineError> {
    let manifest = read_manifest(run_dir).map_err(missing_if_layout("run `gen-data` first"))?;
    if manifest.splits.train.is_empty()
        || manifest.splits.val.is_empty()
        || manifest.splits.test.is_empty()
    {
        return Err(PipelineError::Train(TrainError::EmptySplit(
            "dataset needs all three splits",
        )));
    }

    let bundle = dataset::SceneBundle::from_config(cfg)?;
    let goal_pos_scale = cfg.goal_pos_scale(&bundle.keep_out);

    let train_eps = load_split_episodes(run_dir, &manifest, &manifest.splits.train)?;
    let val_eps = load_split_episodes(run_dir, &manifest, &manifest.splits.val)?;

    let make_samples = |eps: &[LoadedEpisode]| {
        build_policy_samples(
            &eps.iter().collect::<Vec<_>>(),
            cfg.policy.buffer_len,
            goal_pos_scale,
            cfg.policy.goal_vel_scale,
        )
    };
    let train_samples = make_samples(&train_eps);
    let val_samples = make_samples(&val_eps);

    let spec = PolicySpec {
        buffer_len: cfg.policy.buffer_len,
        azimuth_count: cfg.lidar.rays_per_plane as u32,
        plane_count: cfg.lidar.n_planes as u32,
        conv1_channels: cfg.policy.conv1_channels,
        conv1_kernel: cfg.policy.conv1_kernel,
        conv1_stride_az: cfg.policy.conv1_stride_az,
        pool1: cfg.policy.pool1,
        conv2_channels: cfg.policy.conv2_channels,
        conv2_kernel: cfg.policy.conv2_kernel,
        conv2_stride_az: cfg.policy.conv2_stride_az,
        pool2: cfg.policy.pool2,
        embed_dim: cfg.policy.embed_dim,
        lstm_hidden: cfg.policy.lstm_hidden,
        head_hidden: cfg.policy.head_hidden.clone(),
        u_max: cfg.sim.u_max,
        goal_pos_scale,
        goal_vel_scale: cfg.policy.goal_vel_scale,
        norm: manifest.normalization,
    };
    let mut policy = PolicyNetwork::new(spec, derive_seed(master_seed, "policy-init", 0));
    let opts = TrainOpts {
        epochs: cfg.policy.epochs,
        batch_size: cfg.policy.batch_size,
        learning_rate: cfg.policy.learning_rate,
        seed: derive_seed(master_seed, "policy-train", 0),
        max_batches_per_epoch: cfg.policy.max_batches_per_epoch,
        final_lr_factor: cfg.policy.final_lr_factor,
        weight_decay: cfg.policy.weight_decay,
    };
    let report = crate::nn::train(&mut policy, &train_samples, &val_samples, &opts)?;

    drop(train_eps);
    drop(val_eps);

    // Test-split evaluation, reported once.
    let test_eps = load_split_episodes(run_dir, &manifest, &manifest.splits.test)?;
    let test_samples = make_samples(&test_eps);
    let mut test_sum = 0.0;
    let mut zero_sum = 0.0;
    for s in &test_samples {
        test_sum += policy.eval_sample(s);
        zero_sum += crate::nn::rmse_loss(&[0.0, 0.0, 0.0], &s.target);
    }
    let n_test = test_samples.len().max(1) as f64;

    std::fs::create_dir_all(dataset::checkpoints_dir(run_dir))?;
    policy.save(&policy_checkpoint_path(run_dir))?;

    let summary = PolicyTrainSummary {
        train_samples: train_samples.len(),
        val_samples: val_samples.len(),
        test_samples: test_samples.len(),
        best_epoch: report.best_epoch,
        best_val_rmse: report.best_val_loss,
        test_rmse: test_sum / n_test,
        zero_baseline_rmse: zero_sum / n_test,
        train_curve: report.train_loss.clone(),
        val_curve: report.val_loss.clone(),
    };

    std::fs::create_dir_all(dataset::reports_dir(run_dir))?;
    std::fs::write(
        dataset::reports_dir(run_dir).join("policy_training.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let mut csv = String::from("epoch,train_rmse,val_rmse\n");
    for (i, (tr, va)) in summary
        .train_curve
        .iter()
        .zip(summary.val_curve.iter())
        .enumerate()
    {
        csv.push_str(&format!("{i},{tr},{va}\n"));
    }
    std::fs::write(dataset::reports_dir(run_dir).join("policy_curves.csv"), csv)?;

    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerKind {
    Mpc,
    Policy,
    Hybrid,
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControllerKind::Mpc => write!(f, "mpc"),
            ControllerKind::Policy => write!(f, "policy"),
            ControllerKind::Hybrid => write!(f, "hybrid"),
        }
    }
}

/// Sample the k-th evaluation transit of a run.
pub fn scenario_transit(
    cfg: &RunConfig,
    bundle: &dataset::SceneBundle,
    master_seed: u64,
    index: u64,
) -> (SpacecraftState, SpacecraftState) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, "scenario", index));
    sample_transit(
        &mut rng,
        &bundle.keep_out,
        cfg.transits.shell_inner_scale,
        cfg.transits.shell_outer_scale,
        cfg.transits.min_margin,
    )
}

fn load_policy(run_dir: &Path) -> Result<PolicyNetwork, PipelineError> {
    let path = policy_checkpoint_path(run_dir);
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(format!(
            "no trained policy at {} (run `train-policy` first)",
            path.display()
        )));
    }
    Ok(PolicyNetwork::load(&path)?)
}

/// Serialize a trajectory log as one meta line plus one JSON line per step.
pub fn write_trajectory_log(path: &Path, log: &TrajectoryLog) -> Result<(), PipelineError> {
    #[derive(Serialize)]
    struct Meta<'a> {
        start: &'a SpacecraftState,
        goal: &'a SpacecraftState,
        final_state: &'a SpacecraftState,
        outcome: &'a Outcome,
        n_steps: usize,
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(
        &mut f,
        &Meta {
            start: &log.start,
            goal: &log.goal,
            final_state: &log.final_state,
            outcome: &log.outcome,
            n_steps: log.steps.len(),
        },
    )?;
    f.write_all(b"\n")?;
    for s in &log.steps {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_trajectory_log(path: &Path) -> Result<TrajectoryLog, PipelineError> {
    #[derive(Deserialize)]
    struct Meta {
        start: SpacecraftState,
        goal: SpacecraftState,
        final_state: SpacecraftState,
        outcome: Outcome,
    }
    let f = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(f).lines();
    let meta_line = lines
        .next()
        .ok_or_else(|| PipelineError::MissingArtifact("empty trajectory log".into()))??;
    let meta: Meta = serde_json::from_str(&meta_line)?;
    let mut steps: Vec<LoggedStep> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line)?);
    }
    Ok(TrajectoryLog {
        start: meta.start,
        goal: meta.goal,
        steps,
        final_state: meta.final_state,
        outcome: meta.outcome,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub controller: ControllerKind,
    pub scenario: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub terminal_position_error_m: f64,
    pub usage: Option<UsageReport>,
    pub log_file: String,
}

/// Fly one seeded scenario with the chosen controller and persist the log.
pub fn rollout_stage(
    cfg: &RunConfig,
    master_seed: u64,
    run_dir: &Path,
    controller: ControllerKind,
    scenario: u64,
) -> Result<RolloutSummary, PipelineError> {
    let bundle = dataset::SceneBundle::from_config(cfg)?;
    let env = bundle.rollout_env(cfg);
    let (start, goal) = scenario_transit(cfg, &bundle, master_seed, scenario);

    let (log, usage) = match controller {
        ControllerKind::Mpc => (rollout_mpc(&bundle.solver, &env, &start, &goal)?, None),
        ControllerKind::Policy => {
            let policy = load_policy(run_dir)?;
            (
                crate::policy::rollout_pure(&policy, &env, &start, &goal),
                None,
            )
        }
        ControllerKind::Hybrid => {
            let policy = load_policy(run_dir)?;
            let (log, usage) =
                rollout_hybrid(&policy, &bundle.solver, &env, &start, &goal, &cfg.hybrid)?;
            (log, Some(usage))
        }
    };

    std::fs::create_dir_all(dataset::rollouts_dir(run_dir))?;
    let log_name = format!("scenario{scenario:02}_{controller}.jsonl");
    write_trajectory_log(&dataset::rollouts_dir(run_dir).join(&log_name), &log)?;

    Ok(RolloutSummary {
        controller,
        scenario,
        outcome: log.outcome.clone(),
        steps: log.steps.len(),
        terminal_position_error_m: log.terminal_position_error(),
        usage,
        log_file: format!("rollouts/{log_name}"),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScenarioEval {
    pub index: u64,
    pub start: SpacecraftState,
    pub goal: SpacecraftState,
    pub mpc_outcome: Outcome,
    pub mpc_terminal_error_m: f64,
    pub mpc_steps: usize,
    pub policy_outcome: Outcome,
    pub policy_terminal_error_m: f64,
    pub hybrid_outcome: Outcome,
    pub hybrid_terminal_error_m: f64,
    pub usage: UsageReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scenarios: Vec<ScenarioEval>,
    pub timing: TimingReport,
    /// Per-axis flag: the zero-zero cell is the global histogram maximum.
    pub zero_bin_is_global_max: [bool; 3],
    pub test_rmse: f64,
    pub zero_baseline_rmse: f64,
    pub energy_ratio_gpu: f64,
    pub energy_ratio_cpu: f64,
    /// Frame-invariant violations found across the run's stored frames.
    pub frame_violations: usize,
    pub mean_model_usage: f64,
}

/// Validate every stored frame in the run directory (episodes and grid).
pub fn validate_stored_frames(
    run_dir: &Path,
    manifest: &DatasetManifest,
    max_range: f64,
) -> Result<usize, PipelineError> {
    let mut violations = 0usize;
    let dir = dataset::episodes_dir(run_dir);
    for meta in &manifest.episodes {
        let mut f = std::io::BufReader::new(std::fs::File::open(dir.join(&meta.frames_file))?);
        for _ in 0..meta.steps {
            let frame = LidarFrame::read_from(&mut f).map_err(DatasetError::Lidar)?;
            if frame.check_invariants(max_range).is_err() {
                violations += 1;
            }
        }
    }
    if manifest.grid_file.is_some() {
        for s in read_grid(run_dir, manifest)? {
            let frame = LidarFrame {
                azimuth_count: manifest
                    .config
                    .pointer("/lidar/rays_per_plane")
                    .and_then(|v| v.as_u64())
                    .unwrap_or(360) as u32,
                plane_count: manifest
                    .config
                    .pointer("/lidar/n_planes")
                    .and_then(|v| v.as_u64())
                    .unwrap_or(12) as u32,
                ranges: s.ranges,
                pose_position: s.position,
                t: 0.0,
            };
            if frame.check_invariants(max_range).is_err() {
                violations += 1;
            }
        }
    }
    Ok(violations)
}

/// Run the evaluation suite: correlation histograms on the test split,
/// seeded scenario rollouts with all three controllers, error curves against
/// the MPC baseline, timing, usage and the energy model.
pub fn evaluate_stage(
    cfg: &RunConfig,
    master_seed: u64,
    run_dir: &Path,
) -> Result<EvalSummary, PipelineError> {
    let manifest = read_manifest(run_dir).map_err(missing_if_layout("run `gen-data` first"))?;
    let policy = load_policy(run_dir)?;
    let bundle = dataset::SceneBundle::from_config(cfg)?;
    let env = bundle.rollout_env(cfg);
    let reports = dataset::reports_dir(run_dir);
    std::fs::create_dir_all(&reports)?;

    // Test-split predictions against expert labels.
    let goal_pos_scale = cfg.goal_pos_scale(&bundle.keep_out);
    let test_eps = load_split_episodes(run_dir, &manifest, &manifest.splits.test)?;
    let test_samples = build_policy_samples(
        &test_eps.iter().collect::<Vec<_>>(),
        cfg.policy.buffer_len,
        goal_pos_scale,
        cfg.policy.goal_vel_scale,
    );
    if test_samples.is_empty() {
        return Err(PipelineError::Eval(EvalError::EmptyInput));
    }
    let mut pairs = Vec::with_capacity(test_samples.len());
    let mut test_sum = 0.0;
    let mut zero_sum = 0.0;
    for s in &test_samples {
        let frames: Vec<Vec<f64>> = s
            .frames
            .iter()
            .map(|f| {
                f.iter()
                    .map(|&r| policy.spec.norm.normalize_value(r))
                    .collect()
            })
            .collect();
        let views: Vec<&[f64]> = frames.iter().map(|f| f.as_slice()).collect();
        let pred = policy.forward(&views, &s.goal);
        let actual = Vector3::new(s.target[0], s.target[1], s.target[2]);
        test_sum += crate::nn::rmse_loss(
            &[pred.force.x, pred.force.y, pred.force.z],
            &s.target,
        );
        zero_sum += crate::nn::rmse_loss(&[0.0, 0.0, 0.0], &s.target);
        pairs.push((actual, pred.force));
    }
    drop(test_eps);

    let hists = correlation_histograms(
        &pairs,
        cfg.eval.histogram_bin_width,
        cfg.eval.histogram_limit,
        cfg.eval.histogram_clip_ceiling,
    )?;
    let mut zero_bin_is_global_max = [false; 3];
    for (i, h) in hists.iter().enumerate() {
        std::fs::write(
            reports.join(format!("correlation_hist_{}.csv", h.axis)),
            h.to_csv(),
        )?;
        let (r, c, _) = h.argmax();
        let z = h.zero_bin();
        zero_bin_is_global_max[i] = r == z && c == z;
    }

    // Scenario suite.
    std::fs::create_dir_all(dataset::rollouts_dir(run_dir))?;
    let mut scenarios = Vec::new();
    let mut all_logs: Vec<TrajectoryLog> = Vec::new();
    let mut usage_sum = 0.0;
    for k in 0..cfg.eval.n_test_transits as u64 {
        let (start, goal) = scenario_transit(cfg, &bundle, master_seed, k);

        let mpc_log = rollout_mpc(&bundle.solver, &env, &start, &goal)?;
        let policy_log = crate::policy::rollout_pure(&policy, &env, &start, &goal);
        let (hybrid_log, usage) =
            rollout_hybrid(&policy, &bundle.solver, &env, &start, &goal, &cfg.hybrid)?;

        for (name, log) in [
            ("mpc", &mpc_log),
            ("policy", &policy_log),
            ("hybrid", &hybrid_log),
        ] {
            write_trajectory_log(
                &dataset::rollouts_dir(run_dir).join(format!("scenario{k:02}_{name}.jsonl")),
                log,
            )?;
        }

        // Error curves against the MPC baseline.
        let hybrid_curves = trajectory_error_curves(&mpc_log, &hybrid_log, &bundle.solver, &env)?;
        std::fs::write(
            reports.join(format!("scenario{k:02}_hybrid_error.csv")),
            hybrid_curves.to_csv(),
        )?;
        let policy_curves = trajectory_error_curves(&mpc_log, &policy_log, &bundle.solver, &env)?;
        std::fs::write(
            reports.join(format!("scenario{k:02}_policy_error.csv")),
            policy_curves.to_csv(),
        )?;

        usage_sum += usage.model_usage;
        scenarios.push(ScenarioEval {
            index: k,
            start,
            goal,
            mpc_outcome: mpc_log.outcome.clone(),
            mpc_terminal_error_m: mpc_log.terminal_position_error(),
            mpc_steps: mpc_log.steps.len(),
            policy_outcome: policy_log.outcome.clone(),
            policy_terminal_error_m: policy_log.terminal_position_error(),
            hybrid_outcome: hybrid_log.outcome.clone(),
            hybrid_terminal_error_m: hybrid_log.terminal_position_error(),
            usage,
        });
        all_logs.push(mpc_log);
        all_logs.push(policy_log);
        all_logs.push(hybrid_log);
    }

    let timing = timing_report(&all_logs.iter().collect::<Vec<_>>());

    let gpu = EnergyModel {
        expert_time_s: cfg.eval.expert_time_s,
        expert_tdp_w: cfg.eval.expert_tdp_w,
        model_time_s: cfg.eval.model_time_s,
        model_tdp_w: cfg.eval.model_tdp_w,
    };
    let cpu = EnergyModel {
        model_time_s: 0.138,
        model_tdp_w: cfg.eval.expert_tdp_w,
        ..gpu
    };

    let frame_violations = validate_stored_frames(run_dir, &manifest, cfg.lidar.max_range)?;

    let n_scen = scenarios.len().max(1) as f64;
    let summary = EvalSummary {
        scenarios,
        timing,
        zero_bin_is_global_max,
        test_rmse: test_sum / test_samples.len() as f64,
        zero_baseline_rmse: zero_sum / test_samples.len() as f64,
        energy_ratio_gpu: energy_ratio(&gpu),
        energy_ratio_cpu: energy_ratio(&cpu),
        frame_violations,
        mean_model_usage: usage_sum / n_scen,
    };
    std::fs::write(
        reports.join("evaluation.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// Aggregate the run directory into a plain-text summary, reconciling the
/// per-episode step accounting.
pub fn report_stage(run_dir: &Path) -> Result<String, PipelineError> {
    let eval_path = dataset::reports_dir(run_dir).join("evaluation.json");
    if !eval_path.exists() {
        return Err(PipelineError::MissingArtifact(format!(
            "no evaluation summary at {} (run `evaluate` first)",
            eval_path.display()
        )));
    }
    let summary: EvalSummary = serde_json::from_str(&std::fs::read_to_string(&eval_path)?)?;
    let manifest = read_manifest(run_dir).map_err(missing_if_layout("run `gen-data` first"))?;

    let mut out = String::new();
    out.push_str("proxops run report\n");
    out.push_str("==================\n\n");
    out.push_str(&format!(
        "dataset: {} clean + {} disturbed episodes, splits {}/{}/{}\n",
        manifest.n_clean,
        manifest.n_disturbed,
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len()
    ));
    out.push_str(&format!(
        "normalization: mean {:.1} m, std {:.1} m, sentinel {:.3}\n\n",
        manifest.normalization.mean, manifest.normalization.std, manifest.normalization.sentinel_value
    ));

    out.push_str("scenario  mpc            policy         hybrid          usage\n");
    for s in &summary.scenarios {
        // Usage reconciliation: applied-step provenance must cover every step.
        if s.usage.model_steps + s.usage.mpc_steps != s.usage.total_steps {
            return Err(PipelineError::MissingArtifact(format!(
                "scenario {}: provenance counters do not reconcile",
                s.index
            )));
        }
        out.push_str(&format!(
            "{:>8}  {:<14} {:<14} {:<14}  {:.0}%\n",
            s.index,
            format!("{} ({:.0} m)", s.mpc_outcome, s.mpc_terminal_error_m),
            format!("{} ({:.0} m)", s.policy_outcome, s.policy_terminal_error_m),
            format!("{} ({:.0} m)", s.hybrid_outcome, s.hybrid_terminal_error_m),
            100.0 * s.usage.model_usage,
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "test-split policy RMSE: {:.3} N (zero-predictor baseline {:.3} N)\n",
        summary.test_rmse, summary.zero_baseline_rmse
    ));
    out.push_str(&format!(
        "timing: policy inference median {:.2} ms (n={}), MPC solve median {:.2} ms (n={})\n",
        1e3 * summary.timing.policy_inference.median_s,
        summary.timing.policy_inference.count,
        1e3 * summary.timing.mpc_solve.median_s,
        summary.timing.mpc_solve.count,
    ));
    out.push_str(&format!(
        "energy model: {:.1}% of expert energy (GPU inference), {:.1}% (CPU inference)\n",
        100.0 * summary.energy_ratio_gpu,
        100.0 * summary.energy_ratio_cpu,
    ));
    out.push_str(&format!(
        "stored-frame invariant violations: {}\n",
        summary.frame_violations
    ));
    out.push_str(&format!(
        "mean hybrid model usage: {:.0}%\n",
        100.0 * summary.mean_model_usage
    ));

    std::fs::write(dataset::reports_dir(run_dir).join("summary.txt"), &out)?;
    Ok(out)
}
