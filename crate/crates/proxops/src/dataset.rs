//! Expert dataset generation and serialization: point-to-point transit
//! sampling, clean and disturbance-injected expert episodes, the surrogate
//! training grid, deterministic episode-level splits, and the manifest that
//! ties a run directory together.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::gravity;
use crate::lidar::{self, LidarFrame, NormalizationSpec, Raycaster, MISS_SENTINEL};
use crate::mesh::AsteroidMesh;
use crate::mpc::{KeepOutEllipsoid, MpcSolver};
use crate::policy::PolicySample;
use crate::rollout::{shift_warm_start, Outcome, RolloutEnv};
use crate::seed::derive_seed;
use crate::sim::{disturbance_step, DisturbanceState, SpacecraftState, ThrustCommand};
use crate::surrogate::{GridSample, SurrogateModel};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("lidar error: {0}")]
    Lidar(#[from] lidar::LidarError),
    #[error("bad dataset layout: {0}")]
    Layout(String),
    #[error("bad split fractions: {0}")]
    Fractions(String),
}

/// One timestep of expert data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub t: f64,
    pub state: SpacecraftState,
    pub goal: SpacecraftState,
    /// Expert command; absent in pure-policy rollout logs that reuse this
    /// format.
    pub u_expert: Option<ThrustCommand>,
    pub u_applied: ThrustCommand,
    pub episode_id: u64,
    pub disturbed: bool,
    pub frame_index: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub id: u64,
    pub seed: u64,
    pub start: SpacecraftState,
    pub goal: SpacecraftState,
    pub disturbed: bool,
    pub steps: usize,
    pub outcome: Outcome,
    pub records_file: String,
    pub frames_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SplitLists {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub master_seed: u64,
    /// Verbatim config echo.
    pub config: serde_json::Value,
    pub episodes: Vec<EpisodeMeta>,
    pub splits: SplitLists,
    /// Fitted on the training split only.
    pub normalization: NormalizationSpec,
    pub n_clean: usize,
    pub n_disturbed: usize,
    pub grid_file: Option<String>,
    pub grid_frames_file: Option<String>,
    pub grid_points: usize,
    pub grid_skipped_interior: usize,
}

impl DatasetManifest {
    pub fn episode(&self, id: u64) -> Option<&EpisodeMeta> {
        self.episodes.iter().find(|e| e.id == id)
    }
}

/// Sample one transit: start and goal uniformly in the spherical shell
/// between `inner_scale` and `outer_scale` times the largest keep-out
/// semi-axis, both at rest, both strictly clear of the keep-out.
pub fn sample_transit(
    rng: &mut ChaCha8Rng,
    keep_out: &KeepOutEllipsoid,
    inner_scale: f64,
    outer_scale: f64,
    min_margin: f64,
) -> (SpacecraftState, SpacecraftState) {
    let r0 = keep_out.semi_axes.max();
    let r_in = inner_scale * r0;
    let r_out = outer_scale * r0;
    let sample_point = |rng: &mut ChaCha8Rng| loop {
        // Uniform direction via normalized Gaussians, uniform-in-volume
        // radius via inverse CDF.
        let dir = loop {
            let v = Vector3::new(
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
            );
            let n = v.norm();
            if n > 1e-12 {
                break v / n;
            }
        };
        let u: f64 = rng.random_range(0.0..1.0);
        let r = (u * (r_out.powi(3) - r_in.powi(3)) + r_in.powi(3)).cbrt();
        let p = keep_out.center + dir * r;
        if keep_out.margin(&p) > min_margin {
            return p;
        }
    };
    let start = SpacecraftState::at_rest(sample_point(rng));
    let goal = SpacecraftState::at_rest(sample_point(rng));
    (start, goal)
}

/// Where episode lidar frames come from.
pub enum FrameSource<'a> {
    /// Ray-mesh intersection against the true geometry.
    Raycast,
    /// The trained surrogate (used for disturbed episodes).
    Surrogate(&'a SurrogateModel),
}

pub struct EpisodeRun {
    pub records: Vec<EpisodeRecord>,
    pub frames: Vec<LidarFrame>,
    pub outcome: Outcome,
}

/// Fly one expert transit and record every step.
///
/// Loop: frame, MPC solve, optional disturbance injection, record, dynamics
/// step; terminates on goal-ball arrival, step budget, crash or escape.
/// Module errors become [`Outcome::Aborted`] so batch generation never
/// panics.
#[allow(clippy::too_many_arguments)]
pub fn run_expert_episode(
    start: &SpacecraftState,
    goal: &SpacecraftState,
    disturbed: bool,
    seed: u64,
    episode_id: u64,
    env: &RolloutEnv,
    solver: &MpcSolver,
    frames_from: &FrameSource,
) -> EpisodeRun {
    let mut state = *start;
    let mut records = Vec::new();
    let mut frames = Vec::new();
    let mut warm: Option<Vec<ThrustCommand>> = None;
    let mut dist = DisturbanceState::new(seed, env.sim.sigma_step);
    let mut outcome = Outcome::Timeout;

    for step_idx in 0..env.step_budget {
        let frame = match frames_from {
            FrameSource::Raycast => {
                match lidar::scan(env.mesh, env.geometry, env.caster, &state.position, state.t) {
                    Ok(f) => f,
                    Err(e) => {
                        outcome = Outcome::Aborted(e.to_string());
                        break;
                    }
                }
            }
            FrameSource::Surrogate(model) => {
                let mut f = model.generate_frame(&state.position);
                f.t = state.t;
                f
            }
        };

        let u_expert = match solver.solve(&state, goal, env.mesh, &env.gravity, warm.as_deref()) {
            Ok(sol) => {
                warm = Some(shift_warm_start(&sol.controls));
                sol.controls[0]
            }
            Err(e) => {
                outcome = Outcome::Aborted(e.to_string());
                break;
            }
        };

        let u_applied = if disturbed {
            disturbance_step(&mut dist, &u_expert, state.t, &env.sim)
        } else {
            u_expert
        };

        records.push(EpisodeRecord {
            t: state.t,
            state,
            goal: *goal,
            u_expert: Some(u_expert),
            u_applied,
            episode_id,
            disturbed,
            frame_index: step_idx as u32,
        });
        frames.push(frame);

        match env.advance(&state, &u_applied) {
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

    EpisodeRun {
        records,
        frames,
        outcome,
    }
}

/// Deterministic episode-level split. Fractions must sum to 1; counts are
/// rounded, so each split lands within one episode of exact.
pub fn split_episodes(
    ids: &[u64],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitLists, DatasetError> {
    let (f_train, f_val, f_test) = fractions;
    let sum = f_train + f_val + f_test;
    if (sum - 1.0).abs() > 1e-9 || f_train < 0.0 || f_val < 0.0 || f_test < 0.0 {
        return Err(DatasetError::Fractions(format!(
            "fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut order: Vec<u64> = ids.to_vec();
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = order.len();
    let n_train = (f_train * n as f64).round() as usize;
    let n_val = ((f_val * n as f64).round() as usize).min(n - n_train);
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    Ok(SplitLists { train, val, test })
}

/// Regular lattice over a cube centered on the body; interior points are
/// skipped. Returns the kept samples and the skip count.
pub fn generate_surrogate_grid(
    mesh: &AsteroidMesh,
    geometry: &lidar::LidarArrayGeometry,
    caster: &Raycaster,
    cube_side: f64,
    points_per_axis: usize,
) -> Result<(Vec<GridSample>, usize), DatasetError> {
    assert!(points_per_axis >= 2);
    let center = mesh.centroid();
    let half = cube_side / 2.0;
    let n = points_per_axis;
    let coord = |i: usize| -half + cube_side * (i as f64) / ((n - 1) as f64);

    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let p = center + Vector3::new(coord(ix), coord(iy), coord(iz));
                match gravity::classify_point(mesh, &p) {
                    Ok(gravity::PointClass::Outside) => {}
                    _ => {
                        skipped += 1;
                        continue;
                    }
                }
                let frame = lidar::scan(mesh, geometry, caster, &p, 0.0)?;
                samples.push(GridSample {
                    position: p,
                    ranges: frame.ranges,
                });
            }
        }
    }
    Ok((samples, skipped))
}

// ---------------------------------------------------------------------------
// Run-directory layout and serialization
// ---------------------------------------------------------------------------

pub fn episodes_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("episodes")
}

pub fn manifest_path(run_dir: &Path) -> PathBuf {
    run_dir.join("manifest.json")
}

pub fn checkpoints_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints")
}

pub fn reports_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("reports")
}

pub fn rollouts_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("rollouts")
}

pub fn write_episode(
    run_dir: &Path,
    id: u64,
    records: &[EpisodeRecord],
    frames: &[LidarFrame],
) -> Result<(String, String), DatasetError> {
    let dir = episodes_dir(run_dir);
    std::fs::create_dir_all(&dir)?;
    let records_name = format!("ep{id:05}.jsonl");
    let frames_name = format!("ep{id:05}.frames");

    let mut rf = std::io::BufWriter::new(std::fs::File::create(dir.join(&records_name))?);
    for rec in records {
        serde_json::to_writer(&mut rf, rec)?;
        rf.write_all(b"\n")?;
    }
    rf.flush()?;

    let mut ff = std::io::BufWriter::new(std::fs::File::create(dir.join(&frames_name))?);
    for frame in frames {
        frame.write_to(&mut ff)?;
    }
    ff.flush()?;

    Ok((records_name, frames_name))
}

#[derive(Debug, Clone)]
pub struct LoadedEpisode {
    pub meta: EpisodeMeta,
    pub records: Vec<EpisodeRecord>,
    pub frames: Vec<Rc<Vec<f32>>>,
}

pub fn read_episode(run_dir: &Path, meta: &EpisodeMeta) -> Result<LoadedEpisode, DatasetError> {
    let dir = episodes_dir(run_dir);
    let rf = std::fs::File::open(dir.join(&meta.records_file))?;
    let mut records = Vec::new();
    for line in std::io::BufReader::new(rf).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }

    let mut ff = std::io::BufReader::new(std::fs::File::open(dir.join(&meta.frames_file))?);
    let mut frames = Vec::with_capacity(records.len());
    for _ in 0..records.len() {
        let frame = LidarFrame::read_from(&mut ff)?;
        frames.push(Rc::new(frame.ranges));
    }
    Ok(LoadedEpisode {
        meta: meta.clone(),
        records,
        frames,
    })
}

pub fn write_manifest(run_dir: &Path, manifest: &DatasetManifest) -> Result<(), DatasetError> {
    std::fs::create_dir_all(run_dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(manifest_path(run_dir))?);
    serde_json::to_writer_pretty(&mut f, manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_manifest(run_dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = manifest_path(run_dir);
    if !path.exists() {
        return Err(DatasetError::Layout(format!(
            "missing manifest at {}",
            path.display()
        )));
    }
    let f = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

pub fn write_grid(
    run_dir: &Path,
    samples: &[GridSample],
    geometry: &lidar::LidarArrayGeometry,
) -> Result<(String, String), DatasetError> {
    let dir = run_dir.join("grid");
    std::fs::create_dir_all(&dir)?;
    let meta_name = "grid.jsonl".to_string();
    let frames_name = "grid.frames".to_string();

    let mut mf = std::io::BufWriter::new(std::fs::File::create(dir.join(&meta_name))?);
    for s in samples {
        serde_json::to_writer(&mut mf, &s.position)?;
        mf.write_all(b"\n")?;
    }
    mf.flush()?;

    let mut ff = std::io::BufWriter::new(std::fs::File::create(dir.join(&frames_name))?);
    for s in samples {
        let frame = LidarFrame {
            azimuth_count: geometry.rays_per_plane as u32,
            plane_count: geometry.n_planes as u32,
            ranges: s.ranges.clone(),
            pose_position: s.position,
            t: 0.0,
        };
        frame.write_to(&mut ff)?;
    }
    ff.flush()?;
    Ok((
        format!("grid/{meta_name}"),
        format!("grid/{frames_name}"),
    ))
}

pub fn read_grid(run_dir: &Path, manifest: &DatasetManifest) -> Result<Vec<GridSample>, DatasetError> {
    let (Some(meta_rel), Some(frames_rel)) = (&manifest.grid_file, &manifest.grid_frames_file)
    else {
        return Err(DatasetError::Layout("manifest has no grid dataset".into()));
    };
    let mf = std::fs::File::open(run_dir.join(meta_rel))?;
    let mut positions = Vec::new();
    for line in std::io::BufReader::new(mf).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        positions.push(serde_json::from_str::<Vector3<f64>>(&line)?);
    }
    let mut ff = std::io::BufReader::new(std::fs::File::open(run_dir.join(frames_rel))?);
    let mut samples = Vec::with_capacity(positions.len());
    for p in positions {
        let frame = LidarFrame::read_from(&mut ff)?;
        samples.push(GridSample {
            position: p,
            ranges: frame.ranges,
        });
    }
    Ok(samples)
}

/// Fit normalization statistics over the in-range cells of the given
/// episodes (the training split).
pub fn fit_normalization(episodes: &[&LoadedEpisode]) -> NormalizationSpec {
    NormalizationSpec::fit(
        episodes
            .iter()
            .flat_map(|ep| ep.frames.iter())
            .flat_map(|f| f.iter())
            .filter(|&&r| r != MISS_SENTINEL)
            .map(|&r| f64::from(r)),
    )
}

/// Assemble supervised policy samples from episodes: one sample per record,
/// each holding the trailing `buffer_len` frames (repeat-padded at episode
/// start), the scaled goal, and the expert command as the target.
pub fn build_policy_samples(
    episodes: &[&LoadedEpisode],
    buffer_len: usize,
    goal_pos_scale: f64,
    goal_vel_scale: f64,
) -> Vec<PolicySample> {
    let mut samples = Vec::new();
    for ep in episodes {
        for (t, rec) in ep.records.iter().enumerate() {
            let Some(u_expert) = rec.u_expert else {
                continue;
            };
            let mut window = Vec::with_capacity(buffer_len);
            for k in 0..buffer_len {
                let idx = (t + k + 1).saturating_sub(buffer_len).min(t);
                window.push(Rc::clone(&ep.frames[idx]));
            }
            samples.push(PolicySample {
                frames: window,
                goal: [
                    rec.goal.position.x / goal_pos_scale,
                    rec.goal.position.y / goal_pos_scale,
                    rec.goal.position.z / goal_pos_scale,
                    rec.goal.velocity.x / goal_vel_scale,
                    rec.goal.velocity.y / goal_vel_scale,
                    rec.goal.velocity.z / goal_vel_scale,
                ],
                target: [u_expert.force.x, u_expert.force.y, u_expert.force.z],
            });
        }
    }
    samples
}

/// Convenience bundle for the generation stages.
pub struct SceneBundle {
    pub mesh: AsteroidMesh,
    pub geometry: lidar::LidarArrayGeometry,
    pub caster: Raycaster,
    pub keep_out: KeepOutEllipsoid,
    pub solver: MpcSolver,
}

impl SceneBundle {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, crate::config::ConfigError> {
        let mesh = cfg.load_mesh()?;
        let geometry = cfg.lidar_geometry()?;
        let caster = cfg.raycaster(&mesh);
        let keep_out = cfg.keep_out(&mesh);
        let solver = cfg.mpc_solver(&mesh);
        Ok(Self {
            mesh,
            geometry,
            caster,
            keep_out,
            solver,
        })
    }

    pub fn rollout_env<'a>(&'a self, cfg: &RunConfig) -> RolloutEnv<'a> {
        RolloutEnv {
            mesh: &self.mesh,
            gravity: cfg.gravity_params(),
            sim: cfg.sim.clone(),
            geometry: &self.geometry,
            caster: &self.caster,
            eps_pos: cfg.transits.eps_pos,
            eps_vel: cfg.transits.eps_vel,
            step_budget: cfg.transits.step_budget,
        }
    }
}

/// Per-episode seeds derive from the master seed by index.
pub fn episode_seed(master: u64, index: u64) -> u64 {
    derive_seed(master, "episode", index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn desk_config() -> RunConfig {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs/desk.toml");
        RunConfig::load(&path).unwrap()
    }

    fn keep_out_fixture() -> KeepOutEllipsoid {
        KeepOutEllipsoid {
            center: Vector3::zeros(),
            semi_axes: Vector3::new(130_000.0, 56_000.0, 49_000.0),
        }
    }

    #[test]
    fn transit_samples_clear_the_keep_out() {
        let ko = keep_out_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (s, g) = sample_transit(&mut rng, &ko, 1.05, 3.0, 0.05);
            assert!(ko.margin(&s.position) > 0.05);
            assert!(ko.margin(&g.position) > 0.05);
            assert_eq!(s.velocity, Vector3::zeros());
            assert_eq!(g.velocity, Vector3::zeros());
        }
    }

    #[test]
    fn transit_samples_stay_in_the_shell() {
        let ko = keep_out_fixture();
        let r0 = ko.semi_axes.max();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let (s, g) = sample_transit(&mut rng, &ko, 1.05, 3.0, 0.05);
            for p in [s.position, g.position] {
                let r = (p - ko.center).norm();
                assert!(r >= 1.05 * r0 - 1e-6 && r <= 3.0 * r0 + 1e-6);
            }
        }
    }

    #[test]
    fn radial_cdf_matches_uniform_in_volume() {
        let ko = keep_out_fixture();
        let r0 = ko.semi_axes.max();
        let (r_in, r_out) = (1.05 * r0, 3.0 * r0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mut radii: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n / 2 {
            let (s, g) = sample_transit(&mut rng, &ko, 1.05, 3.0, 0.05);
            radii.push((s.position - ko.center).norm());
            radii.push((g.position - ko.center).norm());
        }
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = |r: f64| (r.powi(3) - r_in.powi(3)) / (r_out.powi(3) - r_in.powi(3));
        let mut ks: f64 = 0.0;
        for (i, r) in radii.iter().enumerate() {
            let empirical_hi = (i + 1) as f64 / n as f64;
            let empirical_lo = i as f64 / n as f64;
            let c = cdf(*r);
            ks = ks.max((empirical_hi - c).abs()).max((c - empirical_lo).abs());
        }
        assert!(ks < 0.05, "Kolmogorov distance {ks}");
    }

    #[test]
    fn split_examples() {
        let ids: Vec<u64> = (0..10).collect();
        let s = split_episodes(&ids, (0.6, 0.2, 0.2), 5).unwrap();
        assert_eq!(s.train.len(), 6);
        assert_eq!(s.val.len(), 2);
        assert_eq!(s.test.len(), 2);

        let ids20: Vec<u64> = (0..20).collect();
        let s = split_episodes(&ids20, (0.6, 0.2, 0.2), 5).unwrap();
        assert_eq!(
            (s.train.len(), s.val.len(), s.test.len()),
            (12, 4, 4)
        );

        let all = split_episodes(&ids, (1.0, 0.0, 0.0), 5).unwrap();
        assert_eq!(all.train.len(), 10);
        assert!(all.val.is_empty() && all.test.is_empty());

        let a = split_episodes(&ids, (0.6, 0.2, 0.2), 42).unwrap();
        let b = split_episodes(&ids, (0.6, 0.2, 0.2), 42).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);

        assert!(split_episodes(&ids, (0.5, 0.2, 0.2), 5).is_err());
    }

    #[test]
    fn episodes_never_straddle_splits() {
        let ids: Vec<u64> = (0..33).collect();
        let s = split_episodes(&ids, (0.6, 0.2, 0.2), 9).unwrap();
        let mut seen = std::collections::HashSet::new();
        for id in s.train.iter().chain(s.val.iter()).chain(s.test.iter()) {
            assert!(seen.insert(*id), "episode {id} appears twice");
        }
        assert_eq!(seen.len(), 33);
        // Counts within one episode of exact.
        assert!((s.train.len() as f64 - 19.8).abs() <= 1.0);
        assert!((s.val.len() as f64 - 6.6).abs() <= 1.0);
        assert!((s.test.len() as f64 - 6.6).abs() <= 1.0);
    }

    #[test]
    fn record_files_round_trip_bit_exactly() {
        let cfg = desk_config();
        let mesh = cfg.load_mesh().unwrap();
        let geometry = lidar::LidarArrayGeometry::build(4, 12, cfg.lidar.max_range).unwrap();
        let caster = Raycaster::BruteForce;

        let dir = tempfile::tempdir().unwrap();
        let frame = lidar::scan(
            &mesh,
            &geometry,
            &caster,
            &Vector3::new(2.5 * mesh.bounding_radius(), 0.0, 0.0),
            0.0,
        )
        .unwrap();
        let rec = EpisodeRecord {
            t: 12.5,
            state: SpacecraftState {
                t: 12.5,
                position: Vector3::new(1.0 / 3.0, -2.5e5, 7.75),
                velocity: Vector3::new(0.1, -0.2, 0.3),
            },
            goal: SpacecraftState::at_rest(Vector3::new(1.0, 2.0, 3.0)),
            u_expert: Some(ThrustCommand::new(Vector3::new(-7.0, 0.123456789, 3.0))),
            u_applied: ThrustCommand::new(Vector3::new(-6.5, 0.2, 2.9)),
            episode_id: 3,
            disturbed: true,
            frame_index: 0,
        };

        let (rname, fname) = write_episode(dir.path(), 3, &[rec.clone()], &[frame.clone()]).unwrap();
        let meta = EpisodeMeta {
            id: 3,
            seed: 99,
            start: rec.state,
            goal: rec.goal,
            disturbed: true,
            steps: 1,
            outcome: Outcome::Timeout,
            records_file: rname.clone(),
            frames_file: fname.clone(),
        };
        let loaded = read_episode(dir.path(), &meta).unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert_eq!(loaded.records[0].state.position, rec.state.position);
        assert_eq!(loaded.records[0].u_expert.unwrap().force, rec.u_expert.unwrap().force);
        assert_eq!(*loaded.frames[0], frame.ranges);

        // write -> read -> write is byte identical.
        let dir2 = tempfile::tempdir().unwrap();
        let frame2 = LidarFrame {
            azimuth_count: frame.azimuth_count,
            plane_count: frame.plane_count,
            ranges: loaded.frames[0].as_ref().clone(),
            pose_position: Vector3::zeros(),
            t: 0.0,
        };
        let _ = write_episode(dir2.path(), 3, &loaded.records, &[frame2]).unwrap();
        let bytes1 = std::fs::read(dir.path().join("episodes").join(&rname)).unwrap();
        let bytes2 = std::fs::read(dir2.path().join("episodes").join(&rname)).unwrap();
        assert_eq!(bytes1, bytes2);
        let fb1 = std::fs::read(dir.path().join("episodes").join(&fname)).unwrap();
        let fb2 = std::fs::read(dir2.path().join("episodes").join(&fname)).unwrap();
        assert_eq!(fb1, fb2);
    }

    #[test]
    fn trivial_transit_reaches_in_one_step() {
        // Gravity off so "stay put" costs nothing; with gravity on the
        // expert would command the hover force instead of zero.
        let mut cfg = desk_config();
        cfg.mesh.density = 0.0;
        let bundle = SceneBundle::from_config(&cfg).unwrap();
        let env = bundle.rollout_env(&cfg);
        let start = SpacecraftState::at_rest(Vector3::new(
            1.3 * bundle.keep_out.semi_axes.max(),
            10_000.0,
            -5_000.0,
        ));
        let run = run_expert_episode(
            &start,
            &start,
            false,
            7,
            0,
            &env,
            &bundle.solver,
            &FrameSource::Raycast,
        );
        assert_eq!(run.outcome, Outcome::Reached);
        assert_eq!(run.records.len(), 1);
        let u = run.records[0].u_expert.unwrap();
        assert!(u.force.norm() < 1e-6, "expert command {:?}", u.force);
    }

    #[test]
    fn zero_sigma_disturbed_episode_matches_clean_run() {
        let mut cfg = desk_config();
        cfg.sim.sigma_step = 0.0;
        cfg.transits.step_budget = 12;
        let bundle = SceneBundle::from_config(&cfg).unwrap();
        let env = bundle.rollout_env(&cfg);
        let r0 = bundle.keep_out.semi_axes.max();
        let start = SpacecraftState::at_rest(Vector3::new(1.3 * r0, 0.0, 0.1 * r0));
        let goal = SpacecraftState::at_rest(Vector3::new(1.25 * r0, 0.2 * r0, 0.0));

        let clean = run_expert_episode(
            &start, &goal, false, 5, 0, &env, &bundle.solver, &FrameSource::Raycast,
        );
        let disturbed = run_expert_episode(
            &start, &goal, true, 5, 0, &env, &bundle.solver, &FrameSource::Raycast,
        );
        assert_eq!(clean.records.len(), disturbed.records.len());
        for (a, b) in clean.records.iter().zip(disturbed.records.iter()) {
            assert_eq!(a.state.position, b.state.position);
            assert_eq!(a.u_expert.unwrap().force, b.u_expert.unwrap().force);
            assert_eq!(a.u_applied.force, b.u_applied.force);
        }
    }

    #[test]
    fn clean_records_apply_the_expert_command() {
        let mut cfg = desk_config();
        cfg.transits.step_budget = 10;
        let bundle = SceneBundle::from_config(&cfg).unwrap();
        let env = bundle.rollout_env(&cfg);
        let r0 = bundle.keep_out.semi_axes.max();
        let start = SpacecraftState::at_rest(Vector3::new(1.4 * r0, 0.0, 0.0));
        let goal = SpacecraftState::at_rest(Vector3::new(0.0, 1.4 * r0, 0.0));
        let run = run_expert_episode(
            &start, &goal, false, 3, 0, &env, &bundle.solver, &FrameSource::Raycast,
        );
        assert!(!run.records.is_empty());
        for rec in &run.records {
            assert_eq!(rec.u_applied.force, rec.u_expert.unwrap().force);
            assert!(rec.u_applied.within_box(cfg.sim.u_max));
        }
    }

    #[test]
    fn grid_skips_interior_points() {
        let cfg = desk_config();
        let mesh = cfg.load_mesh().unwrap();
        let geometry = lidar::LidarArrayGeometry::build(4, 24, cfg.lidar.max_range).unwrap();
        let caster = cfg.raycaster(&mesh);
        let side = 2.5 * mesh.bounding_radius();
        let (samples, skipped) =
            generate_surrogate_grid(&mesh, &geometry, &caster, side, 7).unwrap();
        assert!(samples.len() <= 343);
        assert!(skipped > 0, "a cube this tight must clip the body");
        assert_eq!(samples.len() + skipped, 343);
        for s in &samples {
            let frame = LidarFrame {
                azimuth_count: 24,
                plane_count: 4,
                ranges: s.ranges.clone(),
                pose_position: s.position,
                t: 0.0,
            };
            frame.check_invariants(cfg.lidar.max_range).unwrap();
        }
    }

    #[test]
    fn grid_corner_consistency_with_single_raycast() {
        let cfg = desk_config();
        let mesh = cfg.load_mesh().unwrap();
        let geometry = cfg.lidar_geometry().unwrap();
        let caster = cfg.raycaster(&mesh);
        let side = cfg.dataset.grid_cube_side;
        let corner = mesh.centroid() + Vector3::new(side / 2.0, side / 2.0, side / 2.0);
        let frame = lidar::scan(&mesh, &geometry, &caster, &corner, 0.0).unwrap();
        let toward_body = (mesh.centroid() - corner).normalize();
        let hit = caster.cast(&mesh, &corner, &toward_body);
        let any_hit = frame.ranges.iter().any(|&r| r != MISS_SENTINEL);
        match hit {
            Some(d) if d <= geometry.max_range => {
                assert!(any_hit, "direct ray hits at {d} m but the frame is empty")
            }
            _ => {
                // The nearest surface exceeds max range, so the whole frame
                // must be misses.
                assert!(!any_hit);
            }
        }
    }

    #[test]
    fn policy_sample_windows_repeat_pad() {
        let frames: Vec<Rc<Vec<f32>>> = (0..3).map(|k| Rc::new(vec![k as f32])).collect();
        let records: Vec<EpisodeRecord> = (0..3)
            .map(|k| EpisodeRecord {
                t: k as f64,
                state: SpacecraftState::at_rest(Vector3::zeros()),
                goal: SpacecraftState::at_rest(Vector3::new(1.0, 0.0, 0.0)),
                u_expert: Some(ThrustCommand::zero()),
                u_applied: ThrustCommand::zero(),
                episode_id: 0,
                disturbed: false,
                frame_index: k as u32,
            })
            .collect();
        let ep = LoadedEpisode {
            meta: EpisodeMeta {
                id: 0,
                seed: 0,
                start: records[0].state,
                goal: records[0].goal,
                disturbed: false,
                steps: 3,
                outcome: Outcome::Reached,
                records_file: String::new(),
                frames_file: String::new(),
            },
            records,
            frames,
        };
        let samples = build_policy_samples(&[&ep], 4, 1.0, 1.0);
        assert_eq!(samples.len(), 3);
        let w0: Vec<f32> = samples[0].frames.iter().map(|f| f[0]).collect();
        assert_eq!(w0, vec![0.0, 0.0, 0.0, 0.0]);
        let w2: Vec<f32> = samples[2].frames.iter().map(|f| f[0]).collect();
        assert_eq!(w2, vec![0.0, 0.0, 1.0, 2.0]);
    }
}
