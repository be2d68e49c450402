//! The warm-started receding-horizon control loop.
//!
//! Every `delta` seconds the loop measures the state, builds a warm start by
//! shifting the previous plan forward `delta` and padding with zero input,
//! replans with the first-order planner, applies the first `delta` seconds
//! of the result to the true system, and repeats. The measured state is the
//! exact simulated state; the model is noise-free.
//!
//! `delta` is constrained to grid multiples so applied segments stitch
//! node-exactly across cycle boundaries.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::models::{CostModel, SystemModel};
use crate::planner::{plan, PlannerConfig, PlannerResult};
use crate::sim::rollout;
use crate::signal::{ControlSignal, Trajectory};
use nalgebra::DVector;
use serde::Serialize;

/// Closed-loop run configuration.
#[derive(Debug, Clone)]
pub struct RhcConfig {
    /// Prediction horizon of each planning problem.
    pub horizon: f64,
    /// Replanning interval, a node multiple of the grid step.
    pub delta: f64,
    pub n_replans: usize,
    pub planner: PlannerConfig,
    pub x0: DVector<f64>,
    /// Initial warm start on `[0, T]`.
    pub warm_start: ControlSignal,
}

impl RhcConfig {
    pub fn validate(&self) -> Result<usize> {
        self.planner.validate()?;
        if !(self.delta > 0.0 && self.delta <= self.horizon) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < delta <= T, got delta = {}, T = {}",
                self.delta, self.horizon
            )));
        }
        if self.warm_start.grid().horizon() != self.horizon {
            return Err(Error::GridMismatch(format!(
                "warm start lives on [0, {}], expected [0, {}]",
                self.warm_start.grid().horizon(),
                self.horizon
            )));
        }
        if self.n_replans == 0 {
            return Err(Error::InvalidParameter("n_replans must be positive".into()));
        }
        self.warm_start.grid().aligned_steps(self.delta)
    }
}

/// Shift a plan forward by `delta` and pad the tail with zero input:
/// `u(t) = u_prev(t + delta)` on `[0, T - delta]`, `0` on `(T - delta, T]`.
/// A full shift (`delta = T`) discards the whole plan and returns zero.
pub fn warm_start_shift(u_prev: &ControlSignal, delta: f64) -> Result<ControlSignal> {
    let grid = *u_prev.grid();
    let shift = grid.aligned_steps(delta)?;
    let n_nodes = grid.n_nodes();
    let dim = u_prev.dim();
    if shift == grid.n_steps() {
        return Ok(ControlSignal::zero(grid, dim));
    }
    let samples: Vec<DVector<f64>> = (0..n_nodes)
        .map(|k| {
            if k + shift < n_nodes {
                u_prev.node(k + shift).clone()
            } else {
                DVector::zeros(dim)
            }
        })
        .collect();
    ControlSignal::new(grid, samples)
}

/// One replanning cycle record.
#[derive(Debug, Clone)]
pub struct RhcCycle {
    pub t_k: f64,
    pub state: DVector<f64>,
    pub warm_start: ControlSignal,
    pub planner: PlannerResult,
    /// The applied segment on `[0, delta]`, later shifted to `[t_k, t_k+delta]`.
    pub applied: ControlSignal,
}

/// Why a trace stopped early.
#[derive(Debug, Clone, Serialize)]
pub struct CycleFailure {
    pub cycle: usize,
    pub reason: String,
}

/// Record of a closed-loop run.
#[derive(Debug, Clone)]
pub struct RhcTrace {
    pub delta: f64,
    pub horizon: f64,
    pub cycles: Vec<RhcCycle>,
    /// Stitched closed-loop state over `[0, n_replans * delta]`
    /// (up to the failure point when truncated).
    pub closed_loop: Trajectory,
    /// `|x(t_k)|` at each replanning time, including the final measurement.
    pub state_norms: Vec<f64>,
    pub failure: Option<CycleFailure>,
}

impl RhcTrace {
    pub fn truncated(&self) -> bool {
        self.failure.is_some()
    }
}

/// Run the closed loop: measure, warm-start, plan, apply `delta` seconds.
/// Planner stalls and rollout divergence truncate the trace at the failing
/// cycle with a failure record instead of erroring.
pub fn run_fo_rhc(
    system: &dyn SystemModel,
    costs: &dyn CostModel,
    config: &RhcConfig,
) -> Result<RhcTrace> {
    let steps_per_cycle = config.validate()?;
    let grid = *config.warm_start.grid();
    let dt = grid.dt();
    let segment_grid = TimeGrid::new(config.delta, steps_per_cycle)?;

    let mut x = config.x0.clone();
    let mut warm = config.warm_start.clone();
    let mut cycles: Vec<RhcCycle> = Vec::with_capacity(config.n_replans);
    let mut stitched: Vec<DVector<f64>> = vec![x.clone()];
    let mut state_norms = vec![x.norm()];
    let mut failure = None;

    for k in 0..config.n_replans {
        let t_k = k as f64 * config.delta;
        let warm_for_cycle = warm.clone();
        let planner_result = match plan(system, costs, &x, &warm_for_cycle, &config.planner) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(CycleFailure {
                    cycle: k,
                    reason: e.to_string(),
                });
                break;
            }
        };

        // First delta seconds of the plan, re-anchored to [0, delta].
        let applied = ControlSignal::new(
            segment_grid,
            (0..=steps_per_cycle)
                .map(|i| planner_result.u_out.node(i).clone())
                .collect(),
        )?;

        let segment = match rollout(system, &applied, &x) {
            Ok(t) => t,
            Err(e) => {
                failure = Some(CycleFailure {
                    cycle: k,
                    reason: e.to_string(),
                });
                break;
            }
        };

        x = segment.terminal().clone();
        stitched.extend(segment.states()[1..].iter().cloned());
        state_norms.push(x.norm());
        warm = warm_start_shift(&planner_result.u_out, config.delta)?;
        cycles.push(RhcCycle {
            t_k,
            state: segment.initial().clone(),
            warm_start: warm_for_cycle,
            planner: planner_result,
            applied,
        });
    }

    let total_steps = stitched.len() - 1;
    let closed_loop = if total_steps == 0 {
        // Failure before the first segment: a one-step stub at x0.
        Trajectory::new(
            TimeGrid::new(dt, 1)?,
            vec![stitched[0].clone(), stitched[0].clone()],
        )?
    } else {
        Trajectory::new(TimeGrid::new(total_steps as f64 * dt, total_steps)?, stitched)?
    };

    Ok(RhcTrace {
        delta: config.delta,
        horizon: config.horizon,
        cycles,
        closed_loop,
        state_norms,
        failure,
    })
}

/// Per-cycle verdict of the closed-loop decay envelope
/// `|x(t_k)| <= sqrt(M) e^{eta t_k} |x0|`, plus the empirically fitted rate.
#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub bound_holds: bool,
    pub violations: usize,
    /// Log-linear regression slope of `|x(t_k)|`; `None` when some norm
    /// vanishes (nothing to fit in log space).
    pub fitted_rate: Option<f64>,
    pub predicted_rate: f64,
    pub envelope_gain: f64,
    /// Whether the certificate behind the constants claimed applicability.
    pub applicable: bool,
}

/// Compare a trace against the envelope implied by `constants`. When the
/// underlying certificate was inapplicable the check is still reported but
/// flagged as such.
pub fn decay_report(
    trace: &RhcTrace,
    constants: &crate::certify::RhcConstants,
    applicable: bool,
) -> DecayReport {
    let sqrt_m = constants.m.sqrt();
    let x0 = trace.state_norms[0];
    let mut violations = 0;
    for (k, &norm) in trace.state_norms.iter().enumerate() {
        let t_k = k as f64 * trace.delta;
        let envelope = sqrt_m * (constants.eta * t_k).exp() * x0;
        if norm > envelope * (1.0 + 1e-9) + 1e-300 {
            violations += 1;
        }
    }

    let fitted_rate = if trace.state_norms.iter().all(|&n| n > 0.0) {
        // Least-squares slope of ln|x(t_k)| against t_k.
        let n = trace.state_norms.len() as f64;
        let mut st = 0.0;
        let mut sy = 0.0;
        let mut stt = 0.0;
        let mut sty = 0.0;
        for (k, &norm) in trace.state_norms.iter().enumerate() {
            let t = k as f64 * trace.delta;
            let y = norm.ln();
            st += t;
            sy += y;
            stt += t * t;
            sty += t * y;
        }
        let denom = n * stt - st * st;
        (denom.abs() > 1e-30).then(|| (n * sty - st * sy) / denom)
    } else {
        None
    };

    DecayReport {
        bound_holds: violations == 0,
        violations,
        fitted_rate,
        predicted_rate: constants.eta,
        envelope_gain: sqrt_m,
        applicable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticCost;
    use crate::systems::{lookup, sin_drift_stationary_weights};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn shift_by_full_horizon_zeroes_everything() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let u = ControlSignal::from_fn(grid, 1, |t| DVector::from_element(1, 1.0 + t)).unwrap();
        let shifted = warm_start_shift(&u, 1.0).unwrap();
        assert_eq!(shifted.l2_norm(), 0.0);

        let zero = ControlSignal::zero(grid, 1);
        assert_eq!(warm_start_shift(&zero, 0.5).unwrap().l2_norm(), 0.0);
    }

    #[test]
    fn shift_of_linear_signal_is_node_exact() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let u = ControlSignal::from_fn(grid, 1, |t| DVector::from_element(1, t)).unwrap();
        let s = warm_start_shift(&u, 0.5).unwrap();
        for k in 0..=5 {
            assert_abs_diff_eq!(s.node(k)[0], grid.node_time(k) + 0.5, epsilon = 1e-15);
        }
        for k in 6..=10 {
            assert_eq!(s.node(k)[0], 0.0);
        }
        // Misaligned delta is rejected.
        assert!(warm_start_shift(&u, 0.23).is_err());
    }

    #[test]
    fn composed_shifts_equal_one_big_shift() {
        let grid = TimeGrid::new(2.0, 40).unwrap();
        let u = ControlSignal::from_fn(grid, 2, |t| {
            DVector::from_vec(vec![(3.0 * t).sin(), t * t])
        })
        .unwrap();
        let twice = warm_start_shift(&warm_start_shift(&u, 0.5).unwrap(), 0.5).unwrap();
        let once = warm_start_shift(&u, 1.0).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn origin_is_a_fixed_point_of_the_loop() {
        let entry = lookup("sin_drift").unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let config = RhcConfig {
            horizon: 1.0,
            delta: 0.25,
            n_replans: 4,
            planner: PlannerConfig::default(),
            x0: DVector::zeros(1),
            warm_start: ControlSignal::zero(grid, 1),
        };
        let trace = run_fo_rhc(entry.system.as_ref(), entry.default_cost.as_ref(), &config)
            .unwrap();
        assert!(!trace.truncated());
        for &n in &trace.state_norms {
            assert_eq!(n, 0.0);
        }
        for c in &trace.cycles {
            assert_eq!(c.planner.iterations, 0);
        }
    }

    #[test]
    fn stuck_warm_start_pins_the_state() {
        let (q, r, q_f) = sin_drift_stationary_weights(1.0);
        let costs = QuadraticCost::isotropic(q, r, q_f, 1, 1).unwrap();
        let entry = lookup("sin_drift").unwrap();
        let grid = TimeGrid::new(4.0, 400).unwrap();
        let config = RhcConfig {
            horizon: 4.0,
            delta: 0.5,
            n_replans: 6,
            planner: PlannerConfig {
                // Loose stationarity tolerance: the zero-padded warm starts
                // stay within the acceptance region of the stuck point, so
                // every cycle converges where it started.
                eps0: 2.0,
                ..Default::default()
            },
            x0: DVector::from_element(1, 3.0 * FRAC_PI_4),
            warm_start: ControlSignal::constant(
                grid,
                DVector::from_element(1, -1.0 / 2.0_f64.sqrt()),
            ),
        };
        let trace = run_fo_rhc(entry.system.as_ref(), &costs, &config).unwrap();
        assert!(!trace.truncated());
        for c in &trace.cycles {
            assert_eq!(c.planner.iterations, 0, "cycle at t = {}", c.t_k);
            assert_abs_diff_eq!(c.state[0], 3.0 * FRAC_PI_4, epsilon = 1e-8);
        }
        for &n in &trace.state_norms {
            assert_abs_diff_eq!(n, 3.0 * FRAC_PI_4, epsilon = 1e-8);
        }
    }

    #[test]
    fn applied_segments_stitch_continuously() {
        let entry = lookup("sin_drift").unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let config = RhcConfig {
            horizon: 1.0,
            delta: 0.25,
            n_replans: 4,
            planner: PlannerConfig::default(),
            x0: DVector::from_element(1, 0.8),
            warm_start: ControlSignal::zero(grid, 1),
        };
        let trace = run_fo_rhc(entry.system.as_ref(), entry.default_cost.as_ref(), &config)
            .unwrap();
        assert!(!trace.truncated());
        assert_eq!(trace.cycles.len(), 4);
        // The stitched path starts each cycle at the recorded state.
        let steps_per_cycle = 25;
        for (k, c) in trace.cycles.iter().enumerate() {
            let node = k * steps_per_cycle;
            assert_abs_diff_eq!(
                (trace.closed_loop.node(node) - &c.state).norm(),
                0.0,
                epsilon = 1e-12
            );
            // Applied segment is the head of the plan.
            for i in 0..=steps_per_cycle {
                assert_eq!(c.applied.node(i), c.planner.u_out.node(i));
            }
        }
        // Descent across cycles: the planner never worsens its warm start.
        for c in &trace.cycles {
            assert!(c.planner.j_out <= c.planner.j_in + 1e-12);
        }
        // Recorded warm starts chain by shift-and-pad.
        for k in 1..trace.cycles.len() {
            let expect =
                warm_start_shift(&trace.cycles[k - 1].planner.u_out, 0.25).unwrap();
            assert_eq!(trace.cycles[k].warm_start, expect);
        }
    }

    #[test]
    fn all_zero_trace_reports_undefined_rate() {
        let entry = lookup("sin_drift").unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let config = RhcConfig {
            horizon: 1.0,
            delta: 0.5,
            n_replans: 2,
            planner: PlannerConfig::default(),
            x0: DVector::zeros(1),
            warm_start: ControlSignal::zero(grid, 1),
        };
        let trace = run_fo_rhc(entry.system.as_ref(), entry.default_cost.as_ref(), &config)
            .unwrap();
        let constants = crate::certify::RhcConstants {
            delta: 0.5,
            horizon: 1.0,
            eps0: 0.0,
            m: 4.0,
            eta: -0.1,
            eps_term: 0.0,
            horizon_term: 0.0,
            min_horizon: 0.0,
            eta_negative: true,
            denominator: 1.0,
            within_stated_cap: true,
        };
        let report = decay_report(&trace, &constants, true);
        assert!(report.bound_holds);
        assert!(report.fitted_rate.is_none());
    }
}
