//! TOML experiment configurations.

use nalgebra::DVector;
use rhclab::models::CostModel;
use rhclab::planner::PlannerConfig;
use rhclab::sampling::SampleSpec;
use rhclab::signal::ControlSignal;
use rhclab::systems::{bump_study_cost, SystemCatalogEntry};
use rhclab::models::QuadraticCost;
use rhclab::TimeGrid;
use serde::Deserialize;
use std::path::Path;
use std::sync::Arc;

use crate::CliError;

/// How a control signal is produced.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    /// Identically zero.
    Zero,
    /// Constant nodal value.
    Constant { values: Vec<f64> },
    /// Band-limited random draw from the run's seed.
    Random { amplitude: f64 },
    /// Loaded from a signal CSV (header `t,v0,...`).
    Csv { path: String },
}

impl Default for ControlSpec {
    fn default() -> Self {
        Self::Zero
    }
}

impl ControlSpec {
    pub fn build(
        &self,
        grid: TimeGrid,
        dim: usize,
        base_dir: &Path,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<ControlSignal, CliError> {
        match self {
            Self::Zero => Ok(ControlSignal::zero(grid, dim)),
            Self::Constant { values } => {
                if values.len() != dim {
                    return Err(CliError::Config(format!(
                        "constant control has {} entries, system has {dim} inputs",
                        values.len()
                    )));
                }
                Ok(ControlSignal::constant(
                    grid,
                    DVector::from_vec(values.clone()),
                ))
            }
            Self::Random { amplitude } => Ok(rhclab::sampling::random_smooth_control(
                grid, dim, *amplitude, rng,
            )),
            Self::Csv { path } => {
                let full = base_dir.join(path);
                let u = ControlSignal::read_csv(&full)
                    .map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?;
                u.resample(grid)
                    .map_err(|e| CliError::Config(e.to_string()))
            }
        }
    }
}

/// Quadratic cost weights; absent sections fall back to the catalog default.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub q: f64,
    pub r: f64,
    #[serde(default)]
    pub q_f: Option<f64>,
    /// Diagonal terminal weights; overrides `q_f`.
    #[serde(default)]
    pub terminal_weights: Option<Vec<f64>>,
    /// Terminal cost on the first state coordinate only (the spliced-system
    /// study form `V = q_f x_1^2`).
    #[serde(default)]
    pub terminal_on_first_coordinate: bool,
}

impl CostSpec {
    pub fn build(&self, n: usize, m: usize) -> Result<Arc<dyn CostModel>, CliError> {
        let cost: QuadraticCost = if let Some(w) = &self.terminal_weights {
            QuadraticCost::with_terminal_weights(self.q, self.r, DVector::from_vec(w.clone()), m)
                .map_err(|e| CliError::Config(e.to_string()))?
        } else if self.terminal_on_first_coordinate {
            if n < 1 {
                return Err(CliError::Config("empty state".into()));
            }
            bump_study_cost(self.q, self.r, self.q_f.unwrap_or(1.0))
                .map_err(|e| CliError::Config(e.to_string()))?
        } else {
            QuadraticCost::isotropic(self.q, self.r, self.q_f.unwrap_or(0.0), n, m)
                .map_err(|e| CliError::Config(e.to_string()))?
        };
        Ok(Arc::new(cost))
    }
}

fn default_n_replans() -> usize {
    10
}

/// One experiment configuration; the relevant fields depend on the command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    #[serde(default)]
    pub planner: Option<PlannerConfig>,
    /// Replanning interval (rhc) or decay window for certificates without
    /// terminal curvature (certify).
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_n_replans")]
    pub n_replans: usize,
    #[serde(default)]
    pub warm_start: Option<ControlSpec>,
    #[serde(default)]
    pub sampling: Option<SampleSpec>,
    /// Planner tolerance parameter used by the decay constants (rhc).
    #[serde(default)]
    pub eps0: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config: Self =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok((config, text))
    }

    pub fn entry(&self) -> Result<SystemCatalogEntry, CliError> {
        rhclab::systems::lookup(&self.system).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        let horizon = self
            .horizon
            .ok_or_else(|| CliError::Config("missing `horizon`".into()))?;
        match self.n_steps {
            Some(n) => TimeGrid::new(horizon, n),
            None => TimeGrid::with_default_steps(horizon),
        }
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn initial_state(&self, n: usize) -> Result<DVector<f64>, CliError> {
        let x0 = self
            .x0
            .clone()
            .ok_or_else(|| CliError::Config("missing `x0`".into()))?;
        if x0.len() != n {
            return Err(CliError::Config(format!(
                "x0 has {} entries, system state dimension is {n}",
                x0.len()
            )));
        }
        Ok(DVector::from_vec(x0))
    }

    pub fn cost_model(&self, n: usize, m: usize) -> Result<Arc<dyn CostModel>, CliError> {
        match &self.cost {
            Some(spec) => spec.build(n, m),
            None => Ok(self.entry()?.default_cost.clone()),
        }
    }
}
