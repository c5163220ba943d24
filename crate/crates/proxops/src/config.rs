//! Run configuration: one TOML file drives every pipeline stage, and the
//! manifest echoes it verbatim for provenance.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gravity::{GravityParams, GRAVITATIONAL_CONSTANT};
use crate::hybrid::HybridConfig;
use crate::lidar::{Bvh, LidarArrayGeometry, LidarError, Raycaster};
use crate::mesh::{AsteroidMesh, MeshError};
use crate::mpc::{KeepOutEllipsoid, MpcParams, MpcSolver};
use crate::sim::SimConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("mesh error: {0}")]
    Mesh(#[from] MeshError),
    #[error("lidar error: {0}")]
    Lidar(#[from] LidarError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    /// OBJ file path, resolved relative to the config file location.
    pub path: String,
    /// Body density, kg/m^3.
    pub density: f64,
    pub gravitational_constant: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            path: "fixtures/asteroid_ellipsoid.obj".into(),
            density: 2000.0,
            gravitational_constant: GRAVITATIONAL_CONSTANT,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub n_planes: usize,
    pub rays_per_plane: usize,
    pub max_range: f64,
    /// Accelerate scans with the BVH (bit-identical to brute force).
    pub use_bvh: bool,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            n_planes: 12,
            rays_per_plane: 360,
            max_range: 200_000.0,
            use_bvh: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Stage position weight, 1/m^2.
    pub q_pos: f64,
    /// Stage velocity weight, s^2/m^2.
    pub q_vel: f64,
    /// Control weight, 1/N^2.
    pub r_ctrl: f64,
    /// Terminal weight as a multiple of the stage weight.
    pub qf_scale: f64,
    /// Keep-out inflation over the tight bounding ellipsoid.
    pub keep_out_scale: f64,
    pub scp_iterations: usize,
    pub tol: f64,
    pub max_inner_iterations: usize,
    pub al_iterations: usize,
    pub penalty: f64,
    pub constraint_activation_margin: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            q_pos: 1e-6,
            q_vel: 1e-2,
            r_ctrl: 1e-2,
            qf_scale: 100.0,
            keep_out_scale: 1.2,
            scp_iterations: 5,
            tol: 1e-6,
            max_inner_iterations: 4000,
            al_iterations: 8,
            penalty: 1.0,
            constraint_activation_margin: 0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitConfig {
    /// Shell radii as multiples of the largest keep-out semi-axis.
    pub shell_inner_scale: f64,
    pub shell_outer_scale: f64,
    /// Required keep-out margin of sampled endpoints.
    pub min_margin: f64,
    /// Goal-ball tolerances.
    pub eps_pos: f64,
    pub eps_vel: f64,
    pub step_budget: usize,
}

impl Default for TransitConfig {
    fn default() -> Self {
        Self {
            shell_inner_scale: 1.05,
            shell_outer_scale: 1.5,
            min_margin: 0.05,
            eps_pos: 500.0,
            eps_vel: 0.5,
            step_budget: 900,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetGenConfig {
    pub n_clean: usize,
    pub n_disturbed: usize,
    pub split_fractions: [f64; 3],
    pub grid_points_per_axis: usize,
    /// Side of the surrogate sampling cube, meters.
    pub grid_cube_side: f64,
}

impl Default for DatasetGenConfig {
    fn default() -> Self {
        Self {
            n_clean: 8,
            n_disturbed: 24,
            split_fractions: [0.6, 0.2, 0.2],
            grid_points_per_axis: 13,
            grid_cube_side: 340_000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_lr_factor: f64,
    pub miss_loss_weight: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden: vec![96, 96, 128],
            epochs: 80,
            batch_size: 16,
            learning_rate: 3e-3,
            final_lr_factor: 0.1,
            miss_loss_weight: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub buffer_len: usize,
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
    pub goal_vel_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_lr_factor: f64,
    pub weight_decay: f64,
    pub max_batches_per_epoch: Option<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            buffer_len: 4,
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
            goal_vel_scale: 50.0,
            epochs: 25,
            batch_size: 16,
            learning_rate: 1e-3,
            final_lr_factor: 0.1,
            weight_decay: 0.0,
            max_batches_per_epoch: Some(250),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_test_transits: usize,
    /// Histogram bin width, newtons; bins span [-limit, limit].
    pub histogram_bin_width: f64,
    pub histogram_limit: f64,
    pub histogram_clip_ceiling: u64,
    /// Declared energy model (wall time x TDP).
    pub expert_time_s: f64,
    pub expert_tdp_w: f64,
    pub model_time_s: f64,
    pub model_tdp_w: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_test_transits: 5,
            histogram_bin_width: 0.5,
            histogram_limit: 7.25,
            histogram_clip_ceiling: 1000,
            expert_time_s: 0.473,
            expert_tdp_w: 155.0,
            model_time_s: 0.053,
            model_tdp_w: 300.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub version: u32,
    pub mesh: MeshConfig,
    pub sim: SimConfig,
    pub lidar: LidarConfig,
    pub mpc: MpcConfig,
    pub transits: TransitConfig,
    pub dataset: DatasetGenConfig,
    pub surrogate: SurrogateConfig,
    pub policy: PolicyConfig,
    pub hybrid: HybridConfig,
    pub eval: EvalConfig,
    /// Directory the mesh path resolves against; set when loading from a
    /// file, unset for in-memory configs.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        if cfg.version == 0 {
            cfg.version = CONFIG_VERSION;
        }
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::Invalid(format!(
                "unsupported config version {}",
                cfg.version
            )));
        }
        cfg.base_dir = path.parent().map(|p| p.to_path_buf());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate().map_err(ConfigError::Invalid)?;
        self.hybrid.validate().map_err(ConfigError::Invalid)?;
        let f = &self.dataset.split_fractions;
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 || f.iter().any(|x| *x < 0.0) {
            return Err(ConfigError::Invalid(
                "split fractions must be non-negative and sum to 1".into(),
            ));
        }
        if self.transits.shell_inner_scale < 1.0
            || self.transits.shell_outer_scale <= self.transits.shell_inner_scale
        {
            return Err(ConfigError::Invalid(
                "transit shell must satisfy 1 <= inner < outer".into(),
            ));
        }
        if self.dataset.grid_points_per_axis < 2 {
            return Err(ConfigError::Invalid(
                "grid_points_per_axis must be >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn mesh_path(&self) -> PathBuf {
        let p = Path::new(&self.mesh.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else if let Some(base) = &self.base_dir {
            base.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn load_mesh(&self) -> Result<AsteroidMesh, ConfigError> {
        Ok(AsteroidMesh::load_obj_path(&self.mesh_path())?)
    }

    pub fn gravity_params(&self) -> GravityParams {
        GravityParams {
            density: self.mesh.density,
            gravitational_constant: self.mesh.gravitational_constant,
        }
    }

    pub fn lidar_geometry(&self) -> Result<LidarArrayGeometry, ConfigError> {
        Ok(LidarArrayGeometry::build(
            self.lidar.n_planes,
            self.lidar.rays_per_plane,
            self.lidar.max_range,
        )?)
    }

    pub fn raycaster(&self, mesh: &AsteroidMesh) -> Raycaster {
        if self.lidar.use_bvh {
            Raycaster::Accelerated(Bvh::build(mesh))
        } else {
            Raycaster::BruteForce
        }
    }

    pub fn keep_out(&self, mesh: &AsteroidMesh) -> KeepOutEllipsoid {
        KeepOutEllipsoid::enclosing(mesh, self.mpc.keep_out_scale)
    }

    pub fn mpc_params(&self, keep_out: KeepOutEllipsoid) -> MpcParams {
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = self.mpc.q_pos;
            q[(i + 3, i + 3)] = self.mpc.q_vel;
        }
        MpcParams {
            horizon: self.mpc.horizon,
            q,
            r: Matrix3::identity() * self.mpc.r_ctrl,
            q_f: q * self.mpc.qf_scale,
            u_max: self.sim.u_max,
            keep_out,
            scp_iterations: self.mpc.scp_iterations,
            tol: self.mpc.tol,
            max_inner_iterations: self.mpc.max_inner_iterations,
            al_iterations: self.mpc.al_iterations,
            penalty: self.mpc.penalty,
            constraint_activation_margin: self.mpc.constraint_activation_margin,
        }
    }

    pub fn mpc_solver(&self, mesh: &AsteroidMesh) -> MpcSolver {
        let params = self.mpc_params(self.keep_out(mesh));
        MpcSolver::new(params, self.sim.mass, self.sim.dt)
    }

    /// Goal positions are scaled by the outer shell radius before entering
    /// the policy network.
    pub fn goal_pos_scale(&self, keep_out: &KeepOutEllipsoid) -> f64 {
        self.transits.shell_outer_scale * keep_out.semi_axes.max()
    }

    /// Echo for manifests and reports.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.sim.mass, cfg.sim.mass);
        assert_eq!(back.dataset.split_fractions, cfg.dataset.split_fractions);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = toml::from_str(
            "[sim]\nmass = 100.0\n[dataset]\nn_clean = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.sim.mass, 100.0);
        assert_eq!(cfg.dataset.n_clean, 2);
        assert_eq!(cfg.dataset.n_disturbed, 24);
        assert_eq!(cfg.lidar.rays_per_plane, 360);
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.dataset.split_fractions = [0.5, 0.2, 0.2];
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }
}
