use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform grid of `n_steps` intervals over the horizon `[0, T]`.
///
/// All sampled quantities in this crate (controls, trajectories, costates,
/// linearization coefficients, Riccati solutions) live on the `n_steps + 1`
/// nodes of such a grid. Quadrature is the trapezoid rule throughout, which
/// is consistent with the piecewise-linear nodal representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter(
                "a grid needs at least one step".into(),
            ));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Grid with the default resolution `dt <= min(0.01, T/100)`.
    pub fn with_default_steps(horizon: f64) -> Result<Self> {
        let max_dt = (0.01_f64).min(horizon / 100.0);
        let n_steps = (horizon / max_dt).ceil() as usize;
        Self::new(horizon, n_steps.max(1))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Time of node `k`; the last node is exactly the horizon.
    pub fn node_time(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|k| self.node_time(k)).collect()
    }

    /// Trapezoid-rule weight of node `k`.
    pub fn trapezoid_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.n_steps {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }

    fn domain_slack(&self) -> f64 {
        1e-9 * self.horizon.max(1.0)
    }

    /// Locate `t` as `(lower node index, interpolation fraction in [0, 1])`.
    ///
    /// Times outside `[0, T]` (beyond a small representation-rounding slack)
    /// are an error.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !t.is_finite() || t < -self.domain_slack() || t > self.horizon + self.domain_slack() {
            return Err(Error::OutOfDomain {
                t,
                horizon: self.horizon,
            });
        }
        let t = t.clamp(0.0, self.horizon);
        let pos = t / self.dt();
        let mut idx = pos.floor() as usize;
        if idx >= self.n_steps {
            idx = self.n_steps - 1;
        }
        let frac = (pos - idx as f64).clamp(0.0, 1.0);
        Ok((idx, frac))
    }

    /// Nearest node to `t`, with the same domain check as `locate`.
    pub fn nearest_node(&self, t: f64) -> Result<usize> {
        let (idx, frac) = self.locate(t)?;
        Ok(if frac < 0.5 { idx } else { idx + 1 })
    }

    /// Number of grid steps that make up `delta`, if `delta` is a node multiple.
    pub fn aligned_steps(&self, delta: f64) -> Result<usize> {
        let dt = self.dt();
        let k = (delta / dt).round();
        if k < 1.0 || (delta - k * dt).abs() > self.domain_slack() {
            return Err(Error::MisalignedDelta { delta, dt });
        }
        Ok(k as usize)
    }
}
