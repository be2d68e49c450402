//! First-order local search with a descent contract.
//!
//! [`plan`] runs plain gradient descent with Armijo backtracking from a warm
//! start and stops once the gradient norm falls below
//! `max(eps0 * sqrt(J(u_init)), grad_floor)`. Every accepted step strictly
//! decreases the cost, so the output satisfies both halves of the planner
//! contract: it never costs more than the warm start, and it is an
//! approximate stationary point with tolerance proportional to the square
//! root of the warm-start cost. The normalization keeps replanning
//! tolerances shrinking as the state approaches the origin.
//!
//! [`brute_force_min`] is the desk-scale global oracle: bounded enumeration
//! over a coarse control lattice, each candidate refined by [`plan`]. It is
//! used to certify that stuck stationary points are not global minima.

use crate::adjoint::gradient;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::models::{CostModel, SystemModel};
use crate::sim::eval_cost;
use crate::signal::ControlSignal;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Descent parameters. The defaults are deliberately plain: the planner
/// models what a first-order method delivers, not a tuned solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Normalized stationarity tolerance; the stop threshold is
    /// `eps0 * sqrt(J(u_init))`.
    pub eps0: f64,
    pub max_iters: usize,
    pub init_step: f64,
    /// Backtracking shrink factor, in (0, 1).
    pub shrink: f64,
    /// Armijo sufficient-decrease constant, in (0, 1).
    pub armijo_c: f64,
    /// Absolute gradient floor; prevents endless grinding when the
    /// warm-start cost is already numerically zero.
    pub grad_floor: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            eps0: 1e-2,
            max_iters: 10_000,
            init_step: 1.0,
            shrink: 0.5,
            // Steps grow between iterations, so the sufficient-decrease
            // constant must stay well away from zero to keep the linear
            // rate; see the surrogate minimizer for the same choice.
            armijo_c: 0.4,
            grad_floor: 1e-9,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps0 must be positive, got {}",
                self.eps0
            )));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "shrink factor must lie in (0,1), got {}",
                self.shrink
            )));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Armijo constant must lie in (0,1), got {}",
                self.armijo_c
            )));
        }
        if !(self.init_step > 0.0) || !(self.grad_floor >= 0.0) {
            return Err(Error::InvalidParameter(
                "init_step must be positive and grad_floor nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Stop threshold for a given warm-start cost; the larger of the
    /// normalized tolerance and the absolute floor applies.
    pub fn threshold(&self, j_init: f64) -> f64 {
        (self.eps0 * j_init.max(0.0).sqrt()).max(self.grad_floor)
    }
}

/// Outcome of a planning call.
#[derive(Debug, Clone)]
pub struct PlannerResult {
    pub u_out: ControlSignal,
    pub j_in: f64,
    pub j_out: f64,
    pub eps_measured: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Threshold that was in force (`max(eps0 sqrt(J_in), floor)`).
    pub threshold: f64,
    /// Accepted cost sequence, strictly decreasing; `j_history[0] = j_in`.
    pub j_history: Vec<f64>,
}

/// JSON summary `{J_in, J_out, eps_measured, iterations, converged}`.
#[derive(Debug, Clone, Serialize)]
pub struct PlannerSummary {
    #[serde(rename = "J_in")]
    pub j_in: f64,
    #[serde(rename = "J_out")]
    pub j_out: f64,
    pub eps_measured: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PlannerResult {
    pub fn summary(&self) -> PlannerSummary {
        PlannerSummary {
            j_in: self.j_in,
            j_out: self.j_out,
            eps_measured: self.eps_measured,
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

/// Gradient descent with Armijo backtracking from `u_init`.
pub fn plan(
    system: &dyn SystemModel,
    costs: &dyn CostModel,
    x0: &DVector<f64>,
    u_init: &ControlSignal,
    config: &PlannerConfig,
) -> Result<PlannerResult> {
    config.validate()?;
    let mut u = u_init.clone();
    let mut g = gradient(system, costs, &u, x0)?;
    let j_in = g.cost;
    let threshold = config.threshold(j_in);
    let mut history = vec![j_in];
    let mut step = config.init_step;

    for iterations in 0..=config.max_iters {
        if g.eps_measured <= threshold {
            return Ok(PlannerResult {
                u_out: u,
                j_in,
                j_out: *history.last().unwrap(),
                eps_measured: g.eps_measured,
                iterations,
                converged: true,
                threshold,
                j_history: history,
            });
        }
        if iterations == config.max_iters {
            break;
        }
        let j_cur = *history.last().unwrap();
        let g2 = g.eps_measured * g.eps_measured;
        let mut accepted = false;
        while step > 1e-18 {
            let trial = u.add_scaled(&g.gradient, -step)?;
            let j_trial = match eval_cost(system, costs, &trial, x0) {
                Ok(res) => res.cost,
                Err(Error::Divergence { .. }) => {
                    step *= config.shrink;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if j_trial <= j_cur - config.armijo_c * step * g2 && j_trial < j_cur {
                u = trial;
                history.push(j_trial);
                g = gradient(system, costs, &u, x0)?;
                step *= 2.0;
                accepted = true;
                break;
            }
            step *= config.shrink;
        }
        if !accepted {
            return Err(Error::Stalled {
                grad_norm: g.eps_measured,
                iterate: Box::new(u),
            });
        }
    }
    Ok(PlannerResult {
        eps_measured: g.eps_measured,
        j_out: *history.last().unwrap(),
        iterations: config.max_iters,
        converged: false,
        threshold,
        j_in,
        j_history: history,
        u_out: u,
    })
}

/// Bounded enumeration spec for the global oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoarseGridSpec {
    /// Coarse control nodes over the horizon; at most 6.
    pub n_nodes: usize,
    /// Lattice levels per node and channel; at most 9.
    pub levels: usize,
    pub u_min: f64,
    pub u_max: f64,
    /// Evaluation grid the coarse candidates are resampled onto.
    pub grid: TimeGrid,
    /// Refinement settings applied to every candidate.
    pub refine: PlannerConfig,
}

const ENUMERATION_CAP: usize = 100_000;

/// Exhaustive minimum over the coarse control lattice, each candidate
/// refined by local descent. Candidates are evaluated concurrently and
/// reduced deterministically (cost first, then lexicographic control).
pub fn brute_force_min(
    system: &dyn SystemModel,
    costs: &dyn CostModel,
    x0: &DVector<f64>,
    spec: &CoarseGridSpec,
) -> Result<(ControlSignal, f64)> {
    spec.refine.validate()?;
    if spec.n_nodes < 2 || spec.n_nodes > 6 || spec.levels < 2 || spec.levels > 9 {
        return Err(Error::InvalidParameter(format!(
            "coarse spec out of range: {} nodes, {} levels (need 2..=6 nodes, 2..=9 levels)",
            spec.n_nodes, spec.levels
        )));
    }
    if !(spec.u_min < spec.u_max) {
        return Err(Error::InvalidParameter("empty control range".into()));
    }
    let m = system.input_dim();
    let dials = spec.n_nodes * m;
    let candidates = spec.levels.checked_pow(dials as u32).unwrap_or(usize::MAX);
    if candidates > ENUMERATION_CAP {
        return Err(Error::BudgetExceeded {
            candidates,
            cap: ENUMERATION_CAP,
        });
    }

    let coarse = TimeGrid::new(spec.grid.horizon(), spec.n_nodes - 1)?;
    let level_value = |idx: usize| {
        spec.u_min + (spec.u_max - spec.u_min) * idx as f64 / (spec.levels - 1) as f64
    };

    let best = (0..candidates)
        .into_par_iter()
        .filter_map(|mut code| {
            let mut samples = Vec::with_capacity(spec.n_nodes);
            for _ in 0..spec.n_nodes {
                let mut node = DVector::zeros(m);
                for i in 0..m {
                    node[i] = level_value(code % spec.levels);
                    code /= spec.levels;
                }
                samples.push(node);
            }
            let coarse_u = ControlSignal::new(coarse, samples).ok()?;
            let u = coarse_u.resample(spec.grid).ok()?;
            match plan(system, costs, x0, &u, &spec.refine) {
                Ok(res) => Some((res.j_out, res.u_out)),
                // A stalled line search still carries its best iterate.
                Err(Error::Stalled { iterate, .. }) => {
                    let j = eval_cost(system, costs, &iterate, x0).ok()?.cost;
                    Some((j, *iterate))
                }
                Err(_) => None,
            }
        })
        .reduce_with(|a, b| if candidate_le(&a, &b) { a } else { b });

    best.map(|(j, u)| (u, j))
        .ok_or_else(|| Error::InvalidParameter("no enumeration candidate was evaluable".into()))
}

/// Deterministic total order on candidates: cost, then the flattened
/// control samples.
fn candidate_le(a: &(f64, ControlSignal), b: &(f64, ControlSignal)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            for (sa, sb) in a.1.samples().iter().zip(b.1.samples()) {
                for (va, vb) in sa.iter().zip(sb.iter()) {
                    match va.total_cmp(vb) {
                        std::cmp::Ordering::Less => return true,
                        std::cmp::Ordering::Greater => return false,
                        std::cmp::Ordering::Equal => {}
                    }
                }
            }
            true
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticCost;
    use crate::systems::{lookup, sin_drift_stationary_weights, SinDrift};
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn config_validation() {
        assert!(PlannerConfig::default().validate().is_ok());
        let bad = PlannerConfig {
            shrink: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PlannerConfig {
            eps0: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn converges_immediately_at_the_origin() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let u = ControlSignal::zero(grid, 1);
        let costs = QuadraticCost::isotropic(1.0, 1.0, 1.0, 1, 1).unwrap();
        let res = plan(
            &SinDrift,
            &costs,
            &DVector::zeros(1),
            &u,
            &PlannerConfig::default(),
        )
        .unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.converged);
        assert_eq!(res.eps_measured, 0.0);
        assert_eq!(res.j_out, 0.0);
        assert!(res.u_out.l2_norm() == 0.0);
    }

    #[test]
    fn converges_immediately_at_the_stuck_stationary_point() {
        let (q, r, q_f) = sin_drift_stationary_weights(1.0);
        let costs = QuadraticCost::isotropic(q, r, q_f, 1, 1).unwrap();
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let u = ControlSignal::constant(grid, DVector::from_element(1, -1.0 / 2.0_f64.sqrt()));
        let x0 = DVector::from_element(1, 3.0 * FRAC_PI_4);
        let res = plan(&SinDrift, &costs, &x0, &u, &PlannerConfig::default()).unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.converged);
        assert!(res.eps_measured < 1e-9);
        assert_eq!(res.j_out, res.j_in);
    }

    #[test]
    fn descent_contract_holds_on_a_generic_run() {
        let entry = lookup("sin_drift").unwrap();
        let costs = entry.default_cost.as_ref();
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let u0 = ControlSignal::zero(grid, 1);
        let x0 = DVector::from_element(1, 1.0);
        let res = plan(entry.system.as_ref(), costs, &x0, &u0, &PlannerConfig::default())
            .unwrap();
        assert!(res.converged);
        assert!(res.j_out <= res.j_in);
        assert!(res.eps_measured <= res.threshold);
        // Strict monotone descent of the accepted cost sequence.
        for w in res.j_history.windows(2) {
            assert!(w[1] < w[0]);
        }
        // Replanning from the output cannot worsen it.
        let again = plan(
            entry.system.as_ref(),
            costs,
            &x0,
            &res.u_out,
            &PlannerConfig::default(),
        )
        .unwrap();
        assert!(again.j_out <= res.j_out + 1e-12);
    }

    #[test]
    fn idempotent_at_stationary_points() {
        // At an (exact) stationary point the replan terminates immediately,
        // and so does a replan of the replan.
        let (q, r, q_f) = sin_drift_stationary_weights(1.0);
        let costs = QuadraticCost::isotropic(q, r, q_f, 1, 1).unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let u = ControlSignal::constant(grid, DVector::from_element(1, -1.0 / 2.0_f64.sqrt()));
        let x0 = DVector::from_element(1, 3.0 * FRAC_PI_4);
        let first = plan(&SinDrift, &costs, &x0, &u, &PlannerConfig::default()).unwrap();
        assert_eq!(first.iterations, 0);
        let second = plan(&SinDrift, &costs, &x0, &first.u_out, &PlannerConfig::default())
            .unwrap();
        assert_eq!(second.iterations, 0);
        assert_eq!(second.u_out, first.u_out);
    }

    #[test]
    fn brute_force_at_origin_returns_zero() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let costs = QuadraticCost::isotropic(1.0, 1.0, 1.0, 1, 1).unwrap();
        let spec = CoarseGridSpec {
            n_nodes: 3,
            levels: 3,
            u_min: -1.0,
            u_max: 1.0,
            grid,
            refine: PlannerConfig {
                max_iters: 200,
                ..Default::default()
            },
        };
        let (u_star, j_star) = brute_force_min(&SinDrift, &costs, &DVector::zeros(1), &spec)
            .unwrap();
        assert!(j_star.abs() < 1e-10);
        assert!(u_star.l2_norm() < 1e-4);
    }

    #[test]
    fn brute_force_respects_the_budget() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let costs = QuadraticCost::isotropic(1.0, 1.0, 1.0, 1, 1).unwrap();
        let spec = CoarseGridSpec {
            n_nodes: 7,
            levels: 9,
            u_min: -1.0,
            u_max: 1.0,
            grid,
            refine: PlannerConfig::default(),
        };
        assert!(brute_force_min(&SinDrift, &costs, &DVector::zeros(1), &spec).is_err());
    }
}
