//! Evaluation machinery: per-axis correlation histograms of predicted vs.
//! expert force, position/control error curves against the MPC baseline,
//! per-provenance timing statistics and the declared TDP energy model.
//! Every figure-equivalent output is backed by an untruncated CSV.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpc::{MpcError, MpcSolver};
use crate::rollout::{shift_warm_start, RolloutEnv, TrajectoryLog};
use crate::sim::ThrustCommand;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("mpc error during counterfactual solve: {0}")]
    Mpc(#[from] MpcError),
}

/// 2-D histogram of (actual, predicted) force along one axis.
///
/// The clip ceiling is rendering metadata only; stored counts are never
/// clipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram2D {
    pub axis: String,
    /// Shared bin edges for both axes, ascending, length `bins + 1`.
    pub edges: Vec<f64>,
    /// Row-major counts, row = actual bin, column = predicted bin.
    pub counts: Vec<u64>,
    pub clip_ceiling: u64,
    pub total: u64,
}

impl Histogram2D {
    pub fn new(axis: &str, bin_width: f64, limit: f64, clip_ceiling: u64) -> Self {
        assert!(bin_width > 0.0 && limit > 0.0);
        let n_bins = (2.0 * limit / bin_width).round() as usize;
        let edges: Vec<f64> = (0..=n_bins)
            .map(|i| -limit + bin_width * i as f64)
            .collect();
        Self {
            axis: axis.to_string(),
            counts: vec![0; n_bins * n_bins],
            edges,
            clip_ceiling,
            total: 0,
        }
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    fn bin_index(&self, v: f64) -> usize {
        let lo = self.edges[0];
        let hi = *self.edges.last().unwrap();
        let n = self.bins();
        let clamped = v.clamp(lo, hi);
        let idx = ((clamped - lo) / (hi - lo) * n as f64) as usize;
        idx.min(n - 1)
    }

    pub fn record(&mut self, actual: f64, predicted: f64) {
        let r = self.bin_index(actual);
        let c = self.bin_index(predicted);
        let n = self.bins();
        self.counts[r * n + c] += 1;
        self.total += 1;
    }

    pub fn count_at(&self, actual_bin: usize, predicted_bin: usize) -> u64 {
        self.counts[actual_bin * self.bins() + predicted_bin]
    }

    /// Index of the bin containing zero.
    pub fn zero_bin(&self) -> usize {
        self.bin_index(0.0)
    }

    /// (actual_bin, predicted_bin, count) of the most populated cell.
    pub fn argmax(&self) -> (usize, usize, u64) {
        let mut best = (0, 0, 0);
        for r in 0..self.bins() {
            for c in 0..self.bins() {
                let v = self.count_at(r, c);
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        best
    }

    /// Full counts as CSV: header row of predicted-bin centers, then one row
    /// per actual bin.
    pub fn to_csv(&self) -> String {
        let centers: Vec<f64> = (0..self.bins())
            .map(|i| 0.5 * (self.edges[i] + self.edges[i + 1]))
            .collect();
        let mut out = String::from("actual_center");
        for c in &centers {
            out.push_str(&format!(",pred_{c:.3}"));
        }
        out.push('\n');
        for r in 0..self.bins() {
            out.push_str(&format!("{:.3}", centers[r]));
            for c in 0..self.bins() {
                out.push_str(&format!(",{}", self.count_at(r, c)));
            }
            out.push('\n');
        }
        out
    }
}

/// Build the three per-axis histograms from aligned (actual, predicted)
/// command pairs.
pub fn correlation_histograms(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    bin_width: f64,
    limit: f64,
    clip_ceiling: u64,
) -> Result<[Histogram2D; 3], EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut hists = [
        Histogram2D::new("x", bin_width, limit, clip_ceiling),
        Histogram2D::new("y", bin_width, limit, clip_ceiling),
        Histogram2D::new("z", bin_width, limit, clip_ceiling),
    ];
    for (actual, predicted) in pairs {
        for axis in 0..3 {
            hists[axis].record(actual[axis], predicted[axis]);
        }
    }
    Ok(hists)
}

/// Time series comparing a flown trajectory against the MPC baseline from
/// the same transit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorCurves {
    /// Per-step position difference to the reference trajectory, meters.
    pub position_error_m: Vec<f64>,
    /// Per-step difference between the applied command and what the MPC
    /// would command from the comparison trajectory's own state, newtons.
    pub control_error_n: Vec<f64>,
    /// Set when the two logs had different lengths and the curves were
    /// truncated to the shorter.
    pub truncated: bool,
}

impl ErrorCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,position_error_m,control_error_n\n");
        for (i, (p, c)) in self
            .position_error_m
            .iter()
            .zip(self.control_error_n.iter())
            .enumerate()
        {
            out.push_str(&format!("{i},{p},{c}\n"));
        }
        out
    }
}

/// Compare `comparison` to the `reference` baseline.
///
/// The control curve measures against a counterfactual expert: a fresh MPC
/// solve from the comparison trajectory's own state at each step,
/// warm-started along the comparison trajectory.
pub fn trajectory_error_curves(
    reference: &TrajectoryLog,
    comparison: &TrajectoryLog,
    solver: &MpcSolver,
    env: &RolloutEnv,
) -> Result<ErrorCurves, EvalError> {
    let n = reference.steps.len().min(comparison.steps.len());
    let truncated = reference.steps.len() != comparison.steps.len();

    let mut position_error_m = Vec::with_capacity(n);
    let mut control_error_n = Vec::with_capacity(n);
    let mut warm: Option<Vec<ThrustCommand>> = None;

    for i in 0..n {
        let r = &reference.steps[i];
        let c = &comparison.steps[i];
        position_error_m.push((c.state.position - r.state.position).norm());

        let sol = solver.solve(
            &c.state,
            &comparison.goal,
            env.mesh,
            &env.gravity,
            warm.as_deref(),
        )?;
        let u_cf = sol.controls[0];
        warm = Some(shift_warm_start(&sol.controls));
        control_error_n.push((c.command.force - u_cf.force).norm());
    }

    Ok(ErrorCurves {
        position_error_m,
        control_error_n,
        truncated,
    })
}

/// Declared energy model: wall time times thermal design power.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyModel {
    pub expert_time_s: f64,
    pub expert_tdp_w: f64,
    pub model_time_s: f64,
    pub model_tdp_w: f64,
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), String> {
        let vals = [
            self.expert_time_s,
            self.expert_tdp_w,
            self.model_time_s,
            self.model_tdp_w,
        ];
        if vals.iter().all(|v| *v > 0.0) {
            Ok(())
        } else {
            Err("energy model entries must be positive".into())
        }
    }
}

/// Model-to-expert energy ratio (dimensionless).
pub fn energy_ratio(model: &EnergyModel) -> f64 {
    (model.model_time_s * model.model_tdp_w) / (model.expert_time_s * model.expert_tdp_w)
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TimingStats {
    pub count: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
}

impl TimingStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let count = samples.len();
        let mean = samples.iter().sum::<f64>() / count as f64;
        let median = samples[count / 2];
        let p95 = samples[((count as f64 * 0.95) as usize).min(count - 1)];
        Self {
            count,
            mean_s: mean,
            median_s: median,
            p95_s: p95,
        }
    }
}

/// Wall-time statistics per provenance class over a set of rollout logs.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TimingReport {
    pub policy_inference: TimingStats,
    pub mpc_solve: TimingStats,
}

pub fn timing_report(logs: &[&TrajectoryLog]) -> TimingReport {
    let mut policy = Vec::new();
    let mut mpc = Vec::new();
    for log in logs {
        for s in &log.steps {
            if let Some(t) = s.policy_time_s {
                policy.push(t);
            }
            if let Some(t) = s.mpc_time_s {
                mpc.push(t);
            }
        }
    }
    TimingReport {
        policy_inference: TimingStats::from_samples(policy),
        mpc_solve: TimingStats::from_samples(mpc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_energy_figures_reproduce() {
        let gpu = EnergyModel {
            expert_time_s: 0.473,
            expert_tdp_w: 155.0,
            model_time_s: 0.053,
            model_tdp_w: 300.0,
        };
        let r = energy_ratio(&gpu);
        assert!((r - 0.216).abs() < 0.001, "gpu ratio {r}");

        let cpu = EnergyModel {
            model_time_s: 0.138,
            model_tdp_w: 155.0,
            ..gpu
        };
        let r = energy_ratio(&cpu);
        assert!((r - 0.292).abs() < 0.001, "cpu ratio {r}");

        let same = EnergyModel {
            expert_time_s: 1.0,
            expert_tdp_w: 10.0,
            model_time_s: 1.0,
            model_tdp_w: 10.0,
        };
        assert_eq!(energy_ratio(&same), 1.0);
    }

    #[test]
    fn identical_predictions_fill_the_diagonal() {
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = (0..100)
            .map(|k| {
                let v = Vector3::new(
                    -7.0 + 0.14 * k as f64,
                    3.0 - 0.05 * k as f64,
                    0.0,
                );
                (v, v)
            })
            .collect();
        let hists = correlation_histograms(&pairs, 0.5, 7.25, 1000).unwrap();
        for h in &hists {
            assert_eq!(h.total, 100);
            for r in 0..h.bins() {
                for c in 0..h.bins() {
                    if r != c {
                        assert_eq!(h.count_at(r, c), 0, "axis {} r {r} c {c}", h.axis);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_zero_predictor_fills_one_column() {
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = (0..50)
            .map(|k| {
                (
                    Vector3::new(-6.0 + 0.2 * k as f64, 0.0, 0.0),
                    Vector3::zeros(),
                )
            })
            .collect();
        let hists = correlation_histograms(&pairs, 0.5, 7.25, 1000).unwrap();
        let h = &hists[0];
        let zc = h.zero_bin();
        for r in 0..h.bins() {
            for c in 0..h.bins() {
                if c != zc {
                    assert_eq!(h.count_at(r, c), 0);
                }
            }
        }
        let col_total: u64 = (0..h.bins()).map(|r| h.count_at(r, zc)).sum();
        assert_eq!(col_total, 50);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            correlation_histograms(&[], 0.5, 7.25, 1000),
            Err(EvalError::EmptyInput)
        ));
    }

    #[test]
    fn histogram_csv_has_full_counts() {
        let mut h = Histogram2D::new("x", 0.5, 7.25, 3);
        for _ in 0..10 {
            h.record(0.0, 0.0);
        }
        // The clip ceiling never touches stored counts.
        let csv = h.to_csv();
        assert!(csv.contains(",10"));
        assert_eq!(h.argmax().2, 10);
    }

    #[test]
    fn timing_stats_basic() {
        let s = TimingStats::from_samples(vec![3.0, 1.0, 2.0]);
        assert_eq!(s.count, 3);
        assert!((s.mean_s - 2.0).abs() < 1e-12);
        assert_eq!(s.median_s, 2.0);
        let empty = TimingStats::from_samples(vec![]);
        assert_eq!(empty.count, 0);
    }
}
