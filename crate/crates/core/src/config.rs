//! Run configuration shared by the pipeline and the command line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::{Initial, SimulationConfig, SmallJumps};

fn default_grid() -> usize {
    256
}
fn default_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}
fn default_dt() -> f64 {
    0.01
}
fn default_horizon() -> f64 {
    1.0
}
fn default_paths() -> usize {
    10_000
}
fn default_cutoff() -> f64 {
    0.1
}
fn default_small_jumps() -> SmallJumps {
    SmallJumps::Gaussian
}
fn default_initial() -> Initial {
    Initial::Uniform
}
fn default_mesh() -> usize {
    1
}
fn default_deltas() -> Vec<f64> {
    vec![0.5]
}
fn default_etp2_tol() -> f64 {
    0.05
}
fn default_etp1_tol() -> f64 {
    0.05
}
fn default_alpha() -> f64 {
    0.01
}
fn default_ergodicity_horizon() -> f64 {
    100.0
}

/// The Monte Carlo sweep over `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cutoff")]
    pub small_jump_cutoff: f64,
    #[serde(default = "default_small_jumps")]
    pub small_jumps: SmallJumps,
    #[serde(default = "default_initial")]
    pub initial: Initial,
    #[serde(default = "default_mesh")]
    pub mesh: usize,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            eps: default_eps(),
            dt: default_dt(),
            horizon: default_horizon(),
            n_paths: default_paths(),
            seed: 0,
            small_jump_cutoff: default_cutoff(),
            small_jumps: default_small_jumps(),
            initial: default_initial(),
            mesh: default_mesh(),
            deltas: default_deltas(),
        }
    }
}

impl SweepConfig {
    /// Simulation settings for one `ε` of the sweep.
    pub fn at(&self, eps: f64) -> SimulationConfig {
        SimulationConfig {
            small_jump_cutoff: self.small_jump_cutoff,
            small_jumps: self.small_jumps,
            initial: self.initial.clone(),
            mesh: self.mesh,
            deltas: self.deltas.clone(),
            ..SimulationConfig::new(self.dt, self.horizon, eps, self.n_paths, self.seed)
        }
    }
}

/// Verdict tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative tolerance for `E C̃^ε_T` against `TΣ`.
    #[serde(default = "default_etp2_tol")]
    pub etp2: f64,
    /// Bound on the mean large-jump count at the smallest `ε`.
    #[serde(default = "default_etp1_tol")]
    pub etp1: f64,
    /// Significance level of the Gaussianity tests.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Time horizon for the ergodicity estimate behind the jump envelope.
    #[serde(default = "default_ergodicity_horizon")]
    pub ergodicity_horizon: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            etp2: default_etp2_tol(),
            etp1: default_etp1_tol(),
            alpha: default_alpha(),
            ergodicity_horizon: default_ergodicity_horizon(),
        }
    }
}

/// Everything that determines a run's numbers. Execution details (worker
/// count, output directory) live outside so that reports do not depend on
/// them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model file path, or `builtin:<name>`.
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: String::new(),
            grid: default_grid(),
            sweep: SweepConfig::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
