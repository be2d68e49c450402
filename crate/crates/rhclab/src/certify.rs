//! Assumption checking and the stability constants it feeds.
//!
//! Given a regularity bundle (Lipschitz constant `L_F`, stabilizability
//! level `gamma`, drift gains `L_x`, `L_u`, and the cost Hessian bounds),
//! the decay analysis produces constants
//!
//! ```text
//! C1 = 4 gamma max{beta_V, beta_R, beta_Q}
//! C2 = (1 / 2 alpha_R) (1 + 8 beta_R max{L_x^2 / alpha_Q, L_u^2 / alpha_R})
//! C0 = 6 L_F + 2 L_F alpha_Q / alpha_R + 2 alpha_Q / alpha_V      (alpha_V > 0)
//! C0^d = 6 L_F + 2 L_F alpha_Q / alpha_R + min{2/d, 2 alpha_Q / alpha_R}
//! C1^d = exp(d / C1) C1                                            (any alpha_V >= 0)
//! ```
//!
//! under which every eps-approximate stationary point decays node-wise as
//! `|x(s)|^2 <= C0 (C1 e^{-s/C1} |x0|^2 + C2 eps^2)` (with the delta
//! variants replacing `C0`, `C1` when the terminal cost has no curvature).
//! The receding-horizon constants `M`, `eta` and the minimum-horizon rule
//! are derived from the same bundle.
//!
//! All gains entering a bundle are measured on a sampled census and the
//! certificate records that census; universality is never claimed.

use crate::error::{Error, Result};
use crate::linearize::{drift_gain_fit, matching_residual};
use crate::models::{CostBounds, CostModel, SystemModel};
use crate::riccati::gamma_over_paths;
use crate::sampling::{census_of, sample_paths, SampleCensus, SampleSpec};
use crate::sim::{value_to_go, RolloutResult};
use serde::Serialize;

/// Measured regularity data for one system-cost pair.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityBundle {
    #[serde(rename = "L_F")]
    pub l_f: f64,
    pub gamma: f64,
    #[serde(rename = "L_x")]
    pub l_x: f64,
    #[serde(rename = "L_u")]
    pub l_u: f64,
    #[serde(flatten)]
    pub bounds: CostBounds,
}

impl RegularityBundle {
    /// Drift-input compatibility `L_u^2 <= alpha_R / (8 beta_R)`.
    pub fn input_gain_compatible(&self) -> bool {
        self.l_u * self.l_u <= self.bounds.alpha_r / (8.0 * self.bounds.beta_r) + 1e-12
    }

    /// Drift-state compatibility `L_x^2 <= alpha_Q / (8 beta_R)`.
    pub fn state_gain_compatible(&self) -> bool {
        self.l_x * self.l_x <= self.bounds.alpha_q / (8.0 * self.bounds.beta_r) + 1e-12
    }

    /// Derived consequence of input-gain compatibility: `L_u^2 < 1/8`
    /// (i.e. `L_u <= 1/(2 sqrt 2) ~ 0.354`).
    pub fn input_gain_below_cap(&self) -> bool {
        self.l_u * self.l_u < 0.125 + 1e-12
    }

    pub fn finite(&self) -> bool {
        self.l_f.is_finite()
            && self.gamma.is_finite()
            && self.l_x.is_finite()
            && self.l_u.is_finite()
    }
}

/// The decay constants computed from a bundle.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConstantSet {
    #[serde(rename = "C0")]
    pub c0: Option<f64>,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C0_delta")]
    pub c0_delta: Option<f64>,
    #[serde(rename = "C1_delta")]
    pub c1_delta: Option<f64>,
}

/// Compute the decay constants. `delta` is required exactly when the
/// terminal cost has no curvature (`alpha_V = 0`); when provided alongside
/// a positive `alpha_V`, both families are reported.
pub fn stability_constants(bundle: &RegularityBundle, delta: Option<f64>) -> Result<ConstantSet> {
    let b = &bundle.bounds;
    if let Some(d) = delta {
        if !(d > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {d}"
            )));
        }
    }
    if b.alpha_v == 0.0 && delta.is_none() {
        return Err(Error::MissingDelta);
    }
    let c1 = 4.0 * bundle.gamma * b.beta_v.max(b.beta_r).max(b.beta_q);
    let c2 = 0.5 / b.alpha_r
        * (1.0 + 8.0 * b.beta_r * (bundle.l_x * bundle.l_x / b.alpha_q)
            .max(bundle.l_u * bundle.l_u / b.alpha_r));
    let base = 6.0 * bundle.l_f + 2.0 * bundle.l_f * b.alpha_q / b.alpha_r;
    let c0 = (b.alpha_v > 0.0).then(|| base + 2.0 * b.alpha_q / b.alpha_v);
    let (c0_delta, c1_delta) = match delta {
        Some(d) => (
            Some(base + (2.0 / d).min(2.0 * b.alpha_q / b.alpha_r)),
            Some((d / c1).exp() * c1),
        ),
        None => (None, None),
    };
    Ok(ConstantSet {
        c0,
        c1,
        c2,
        c0_delta,
        c1_delta,
    })
}

/// One assumption check with its evidence.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub pass: bool,
    pub evidence: String,
}

/// Pass/fail list for the four sampled assumptions: drift matching (a4),
/// uniform stabilizability (a5), drift gain growth (a6), gain-cost
/// compatibility (a7).
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub a4: AssumptionCheck,
    pub a5: AssumptionCheck,
    pub a6: AssumptionCheck,
    pub a7: AssumptionCheck,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.a4.pass && self.a5.pass && self.a6.pass && self.a7.pass
    }
}

/// Assumption-check results plus the decay constants they imply.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityCertificate {
    pub bundle: RegularityBundle,
    pub constants: ConstantSet,
    pub delta: Option<f64>,
    pub assumptions: AssumptionReport,
    pub matching_residual_max: f64,
    pub census: SampleCensus,
    /// Whether the decay bound is claimed to apply (all assumptions pass
    /// and the constants are finite). Constants are reported regardless.
    pub applicable: bool,
}

impl StabilityCertificate {
    /// Certificate JSON with the fixed field layout
    /// `{assumptions, bundle, constants, census, ...}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "assumptions": self.assumptions,
            "bundle": self.bundle,
            "constants": self.constants,
            "census": self.census,
            "delta": self.delta,
            "matching_residual_max": self.matching_residual_max,
            "applicable": self.applicable,
        })
    }
}

/// A certificate from a bundle alone, with the sampled assumptions taken at
/// face value. Used by the pipeline and by tests on hand-built bundles.
pub fn certificate_from_bundle(
    bundle: RegularityBundle,
    delta: Option<f64>,
    assumptions: AssumptionReport,
    matching_residual_max: f64,
    census: SampleCensus,
) -> Result<StabilityCertificate> {
    let constants = stability_constants(&bundle, delta)?;
    let applicable = assumptions.all_pass() && bundle.finite();
    Ok(StabilityCertificate {
        bundle,
        constants,
        delta,
        assumptions,
        matching_residual_max,
        census,
        applicable,
    })
}

/// Run the full assumption pipeline over a sampled census and assemble the
/// certificate. Checker failures are embedded as failed flags, not thrown.
pub fn certify_system(
    system: &dyn SystemModel,
    costs: &dyn CostModel,
    spec: &SampleSpec,
    delta: Option<f64>,
) -> Result<StabilityCertificate> {
    let paths = sample_paths(system, spec)?;
    let census = census_of(system, spec, paths.len());

    let mut residual_max = 0.0_f64;
    let mut residual_where = (0usize, 0usize);
    for (i, path) in paths.iter().enumerate() {
        for (k, r) in matching_residual(path).into_iter().enumerate() {
            if r > residual_max {
                residual_max = r;
                residual_where = (i, k);
            }
        }
    }
    let a4 = AssumptionCheck {
        pass: residual_max <= 1e-6,
        evidence: format!(
            "max unmatched drift {residual_max:.6e} at path {} node {}",
            residual_where.0, residual_where.1
        ),
    };

    let (gamma, a5) = match gamma_over_paths(&paths) {
        Ok(g) => (
            g,
            AssumptionCheck {
                pass: true,
                evidence: format!("max gamma {g:.6e} over {} paths", paths.len()),
            },
        ),
        Err(e) => (
            f64::INFINITY,
            AssumptionCheck {
                pass: false,
                evidence: e.to_string(),
            },
        ),
    };

    let (l_x, l_u, a6) = match drift_gain_fit(&paths) {
        Ok(fit) => {
            let evidence = format!(
                "L_x = {:.6e}, L_u = {:.6e}, binding path {} node {}, slack {:.3e}",
                fit.l_x, fit.l_u, fit.binding.0, fit.binding.1, fit.max_violation
            );
            (
                fit.l_x,
                fit.l_u,
                AssumptionCheck {
                    pass: true,
                    evidence,
                },
            )
        }
        Err(e) => (
            f64::INFINITY,
            f64::INFINITY,
            AssumptionCheck {
                pass: false,
                evidence: e.to_string(),
            },
        ),
    };

    let bundle = RegularityBundle {
        l_f: system.lipschitz_bound(),
        gamma,
        l_x,
        l_u,
        bounds: costs.bounds(),
    };
    let a7 = AssumptionCheck {
        pass: bundle.finite() && bundle.input_gain_compatible() && bundle.state_gain_compatible(),
        evidence: format!(
            "L_u^2 = {:.3e} vs alpha_R/(8 beta_R) = {:.3e}; L_x^2 = {:.3e} vs alpha_Q/(8 beta_R) = {:.3e}; L_u^2 < 1/8: {}",
            l_u * l_u,
            bundle.bounds.alpha_r / (8.0 * bundle.bounds.beta_r),
            l_x * l_x,
            bundle.bounds.alpha_q / (8.0 * bundle.bounds.beta_r),
            bundle.input_gain_below_cap(),
        ),
    };

    let assumptions = AssumptionReport { a4, a5, a6, a7 };
    let applicable = assumptions.all_pass() && bundle.finite();
    // Infinite gains make the constant formulas meaningless; substitute a
    // zero-gain bundle for reporting while keeping applicable = false.
    let reporting_bundle = if bundle.finite() {
        bundle
    } else {
        RegularityBundle {
            l_x: if l_x.is_finite() { l_x } else { 0.0 },
            l_u: if l_u.is_finite() { l_u } else { 0.0 },
            gamma: if gamma.is_finite() { gamma } else { 0.0 },
            ..bundle
        }
    };
    let constants = stability_constants(&reporting_bundle, delta)?;
    Ok(StabilityCertificate {
        bundle: reporting_bundle,
        constants,
        delta,
        assumptions,
        matching_residual_max: residual_max,
        census,
        applicable,
    })
}

/// Node-wise verdict of the decay envelope along one rollout.
#[derive(Debug, Clone, Serialize)]
pub struct DecayBoundReport {
    pub holds: bool,
    pub violations: usize,
    /// Largest `|x(s)|^2 / rhs(s)`; below one when the bound holds.
    pub max_ratio: f64,
    pub worst_node: usize,
}

/// Check `|x(s)|^2 <= C0 (C1 e^{-s/C1} |x0|^2 + C2 eps^2)` at every node
/// (delta variants when the terminal cost has no curvature). Vanishing
/// sides are treated as a pass.
pub fn check_decay_bound(
    cert: &StabilityCertificate,
    rollout: &RolloutResult,
    eps: f64,
) -> DecayBoundReport {
    let c = &cert.constants;
    let (outer, envelope_gain) = match (c.c0, cert.bundle.bounds.alpha_v > 0.0) {
        (Some(c0), true) => (c0, c.c1),
        _ => (
            c.c0_delta.unwrap_or(f64::INFINITY),
            c.c1_delta.unwrap_or(f64::INFINITY),
        ),
    };
    let traj = &rollout.trajectory;
    let x0sq = traj.initial().norm_squared();
    let mut max_ratio = 0.0_f64;
    let mut worst = 0;
    let mut violations = 0;
    for k in 0..traj.grid().n_nodes() {
        let s = traj.grid().node_time(k);
        let lhs = traj.node(k).norm_squared();
        let rhs = outer * (envelope_gain * (-s / c.c1).exp() * x0sq + c.c2 * eps * eps);
        if rhs == 0.0 {
            if lhs > 0.0 {
                violations += 1;
                max_ratio = f64::INFINITY;
                worst = k;
            }
            continue;
        }
        let ratio = lhs / rhs;
        if ratio > max_ratio {
            max_ratio = ratio;
            worst = k;
        }
        if lhs > rhs * (1.0 + 1e-9) {
            violations += 1;
        }
    }
    DecayBoundReport {
        holds: violations == 0,
        violations,
        max_ratio,
        worst_node: worst,
    }
}

/// Verdict of the cost-to-go two-sided bounds along one rollout.
#[derive(Debug, Clone, Serialize)]
pub struct ValueBoundsReport {
    pub underbound_violations: usize,
    pub overbound_violations: usize,
    pub exp_bound_violations: usize,
    pub pairs_checked: usize,
}

impl ValueBoundsReport {
    pub fn holds(&self) -> bool {
        self.underbound_violations == 0
            && self.overbound_violations == 0
            && self.exp_bound_violations == 0
    }
}

/// Check, along one rollout of an eps-approximate stationary point:
/// the state under-bound `|x(s)|^2 <= C0 / alpha_Q * V(s')` for `s' <= s`,
/// the cost-to-go over-bound `V(s) <= alpha_Q (C1 |x(s)|^2 + C2/2 eps^2)`,
/// and the integrated decay `V(s) <= e^{-s/C1} V(0) + alpha_Q/2 C2 eps^2`.
pub fn check_value_bounds(
    cert: &StabilityCertificate,
    rollout: &RolloutResult,
    costs: &dyn CostModel,
    eps: f64,
) -> Result<ValueBoundsReport> {
    let grid = rollout.trajectory.grid();
    let n_nodes = grid.n_nodes();
    let horizon = grid.horizon();
    let b = &cert.bundle.bounds;
    let c = &cert.constants;
    let slack = 1.0 + 1e-9;

    let values: Vec<f64> = (0..n_nodes)
        .map(|k| value_to_go(rollout, costs, grid.node_time(k)))
        .collect::<Result<_>>()?;

    // Under-bound: with curvature in the terminal cost the pair range is
    // 0 <= s' <= s <= T; without it, s' must additionally stay below
    // T - delta.
    let (outer, s_prime_cap) = if b.alpha_v > 0.0 {
        (c.c0.unwrap(), horizon)
    } else {
        let d = cert
            .delta
            .ok_or(Error::MissingDelta)?;
        (c.c0_delta.unwrap(), horizon - d)
    };
    let stride = (n_nodes / 250).max(1);
    let mut underbound_violations = 0;
    let mut pairs = 0;
    for kp in (0..n_nodes).step_by(stride) {
        if grid.node_time(kp) > s_prime_cap + 1e-12 {
            break;
        }
        for k in (kp..n_nodes).step_by(stride) {
            pairs += 1;
            let lhs = rollout.trajectory.node(k).norm_squared();
            if lhs > outer / b.alpha_q * values[kp] * slack + 1e-12 {
                underbound_violations += 1;
            }
        }
    }

    let mut overbound_violations = 0;
    let mut exp_bound_violations = 0;
    for k in 0..n_nodes {
        let s = grid.node_time(k);
        let xsq = rollout.trajectory.node(k).norm_squared();
        let over = b.alpha_q * (c.c1 * xsq + 0.5 * c.c2 * eps * eps);
        if values[k] > over * slack + 1e-12 {
            overbound_violations += 1;
        }
        let integrated = (-s / c.c1).exp() * values[0] + 0.5 * b.alpha_q * c.c2 * eps * eps;
        if values[k] > integrated * slack + 1e-12 {
            exp_bound_violations += 1;
        }
    }

    Ok(ValueBoundsReport {
        underbound_violations,
        overbound_violations,
        exp_bound_violations,
        pairs_checked: pairs,
    })
}

/// Receding-horizon decay constants for a given replanning interval,
/// horizon and planner tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct RhcConstants {
    pub delta: f64,
    pub horizon: f64,
    pub eps0: f64,
    /// Envelope gain; the closed loop satisfies
    /// `|x(t_k)| <= sqrt(M) e^{eta t_k} |x0|`.
    pub m: f64,
    /// Envelope rate; negative once the horizon term and tolerance term
    /// are small enough.
    pub eta: f64,
    /// Tolerance contribution inside the rate logarithm.
    pub eps_term: f64,
    /// Horizon-truncation contribution inside the rate logarithm.
    pub horizon_term: f64,
    /// Smallest horizon the decay rule asks for at this delta.
    pub min_horizon: f64,
    pub eta_negative: bool,
    /// `1 - alpha_Q/2 C2 eps0^2`, the denominator of `M`; must be positive.
    pub denominator: f64,
    /// Whether eps0 also satisfies the coarser stated admissibility cap
    /// `eps0 < sqrt(2 alpha_Q C2)`. Recorded, not enforced.
    pub within_stated_cap: bool,
}

/// Compute the receding-horizon constants from a certificate. The delta
/// variants of the constants are recomputed for the given `delta`.
pub fn rhc_constants(
    cert: &StabilityCertificate,
    delta: f64,
    horizon: f64,
    eps0: f64,
) -> Result<RhcConstants> {
    if !(delta > 0.0 && delta <= horizon) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < delta <= T, got delta = {delta}, T = {horizon}"
        )));
    }
    if !(eps0 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps0 must be nonnegative, got {eps0}"
        )));
    }
    let b = &cert.bundle.bounds;
    let consts = stability_constants(&cert.bundle, Some(delta))?;
    let c0d = consts.c0_delta.unwrap();
    let c1 = consts.c1;
    let c2 = consts.c2;
    let l_f = cert.bundle.l_f;

    let denominator = 1.0 - 0.5 * b.alpha_q * c2 * eps0 * eps0;
    if denominator <= 0.0 {
        return Err(Error::InadmissibleEps0 { eps0, denominator });
    }
    let m = c0d * c1 / denominator;
    let eps_term =
        0.5 * c0d * c2 * (2.0 * l_f * delta).exp() * ((delta + 1.0) * b.alpha_q + b.alpha_v)
            * eps0
            * eps0;
    let horizon_term = c0d
        * c1
        * (delta * b.alpha_q + b.alpha_v)
        * (-horizon / c1 + delta * (1.0 / c1 + 2.0 * l_f)).exp();
    let eta = 0.5 / delta * ((-delta / c1).exp() + horizon_term + eps_term).ln();
    let min_horizon =
        (c0d * c1 * (delta * b.alpha_q + b.alpha_v)).ln() + delta * (1.0 + c1 * 2.0 * l_f);
    Ok(RhcConstants {
        delta,
        horizon,
        eps0,
        m,
        eta,
        eps_term,
        horizon_term,
        min_horizon,
        eta_negative: eta < 0.0,
        denominator,
        within_stated_cap: eps0 < (2.0 * b.alpha_q * c2).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticCost;
    use crate::sampling::SampleSpec;
    use crate::signal::ControlSignal;
    use crate::sim::eval_cost;
    use crate::systems::{bump_study_cost, lookup};
    use crate::TimeGrid;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn small_spec(seed: u64) -> SampleSpec {
        SampleSpec {
            horizons: vec![1.0, 2.0],
            n_initial: 4,
            n_controls: 2,
            control_amplitude: 1.5,
            seed,
            max_dt: 0.01,
        }
    }

    fn unit_bundle() -> RegularityBundle {
        RegularityBundle {
            l_f: 1.0,
            gamma: 1.0,
            l_x: 0.0,
            l_u: 0.0,
            bounds: CostBounds {
                alpha_q: 1.0,
                beta_q: 1.0,
                alpha_r: 1.0,
                beta_r: 1.0,
                alpha_v: 1.0,
                beta_v: 1.0,
            },
        }
    }

    #[test]
    fn unit_bundle_constants() {
        let c = stability_constants(&unit_bundle(), None).unwrap();
        assert_eq!(c.c0, Some(10.0));
        assert_eq!(c.c1, 4.0);
        assert_eq!(c.c2, 0.5);
        assert!(c.c0_delta.is_none());
    }

    #[test]
    fn zero_gains_collapse_the_c2_correction() {
        let mut b = unit_bundle();
        b.bounds.alpha_r = 0.4;
        let c = stability_constants(&b, None).unwrap();
        assert_abs_diff_eq!(c.c2, 0.5 / 0.4, epsilon = 1e-15);
    }

    #[test]
    fn delta_variant_saturates_for_large_delta() {
        let mut b = unit_bundle();
        b.bounds.alpha_v = 0.0;
        b.bounds.beta_v = 0.0;
        let c = stability_constants(&b, Some(1e9)).unwrap();
        // min(2/delta, 2 alpha_Q / alpha_R) saturates at the cost ratio.
        let base = 6.0 + 2.0;
        assert_abs_diff_eq!(c.c0_delta.unwrap(), base + 2.0e-9, epsilon = 1e-12);
        let c = stability_constants(&b, Some(1e-3)).unwrap();
        assert_abs_diff_eq!(c.c0_delta.unwrap(), base + 2.0, epsilon = 1e-12);
        assert!(c.c0.is_none());
    }

    #[test]
    fn missing_delta_is_an_error_without_terminal_curvature() {
        let mut b = unit_bundle();
        b.bounds.alpha_v = 0.0;
        assert!(matches!(
            stability_constants(&b, None),
            Err(Error::MissingDelta)
        ));
        assert!(stability_constants(&b, Some(0.5)).is_ok());
    }

    #[test]
    fn constants_are_monotone_in_the_gains() {
        let mut prev = 0.0;
        for lx in [0.0, 0.2, 0.5, 1.0, 2.0] {
            let mut b = unit_bundle();
            b.l_x = lx;
            let c = stability_constants(&b, None).unwrap();
            assert!(c.c2 >= prev);
            prev = c.c2;
        }
        let mut prev = 0.0;
        for lu in [0.0, 0.05, 0.1, 0.3] {
            let mut b = unit_bundle();
            b.l_u = lu;
            let c = stability_constants(&b, None).unwrap();
            assert!(c.c2 >= prev);
            prev = c.c2;
        }
    }

    #[test]
    fn rhc_constants_limits_and_signs() {
        let cert = certificate_from_bundle(
            unit_bundle(),
            Some(1.0),
            AssumptionReport {
                a4: AssumptionCheck { pass: true, evidence: String::new() },
                a5: AssumptionCheck { pass: true, evidence: String::new() },
                a6: AssumptionCheck { pass: true, evidence: String::new() },
                a7: AssumptionCheck { pass: true, evidence: String::new() },
            },
            0.0,
            SampleCensus {
                horizons: vec![],
                n_initial: 0,
                n_controls: 0,
                control_amplitude: 0.0,
                seed: 0,
                total_paths: 0,
                sample_box: String::new(),
            },
        )
        .unwrap();

        // eps0 -> 0 gives M -> C0^delta C1 exactly.
        let r = rhc_constants(&cert, 1.0, 50.0, 0.0).unwrap();
        let c = stability_constants(&cert.bundle, Some(1.0)).unwrap();
        assert_abs_diff_eq!(r.m, c.c0_delta.unwrap() * c.c1, epsilon = 1e-12);

        // eps0 -> 0, T -> infinity gives eta -> -1/(2 C1).
        let r = rhc_constants(&cert, 1.0, 1e6, 0.0).unwrap();
        assert_abs_diff_eq!(r.eta, -1.0 / (2.0 * c.c1), epsilon = 1e-12);

        // Unit bundle, delta 1, T 50, eps0 1e-3: decaying envelope.
        let r = rhc_constants(&cert, 1.0, 50.0, 1e-3).unwrap();
        assert!(r.eta_negative, "eta = {}", r.eta);

        // Monotonicity: eta nonincreasing in T, M nondecreasing in eps0.
        let mut prev = f64::INFINITY;
        for t in [5.0, 10.0, 20.0, 40.0] {
            let r = rhc_constants(&cert, 1.0, t, 1e-3).unwrap();
            assert!(r.eta <= prev + 1e-15);
            prev = r.eta;
        }
        let mut prev = 0.0;
        for e in [0.0, 1e-3, 1e-2, 1e-1] {
            let r = rhc_constants(&cert, 1.0, 50.0, e).unwrap();
            assert!(r.m >= prev);
            prev = r.m;
        }

        // Inadmissible eps0 trips the denominator error.
        let big = (2.0 / (cert.bundle.bounds.alpha_q * c.c2)).sqrt() * 1.01;
        assert!(matches!(
            rhc_constants(&cert, 1.0, 50.0, big),
            Err(Error::InadmissibleEps0 { .. })
        ));
    }

    #[test]
    fn lti_certificate_passes_with_zero_gains() {
        let entry = lookup("lti").unwrap();
        let costs = QuadraticCost::isotropic(1.0, 1.0, 1.0, 2, 2).unwrap();
        let cert =
            certify_system(entry.system.as_ref(), &costs, &small_spec(5), None).unwrap();
        assert!(cert.applicable, "{:?}", cert.assumptions);
        assert_eq!(cert.bundle.l_x, 0.0);
        assert_eq!(cert.bundle.l_u, 0.0);
        assert!(cert.matching_residual_max <= 1e-9);
        assert!(cert.constants.c0.is_some());
    }

    #[test]
    fn spliced_system_fails_the_matching_check() {
        let entry = lookup("bump").unwrap();
        let costs = bump_study_cost(1.0, 1.0, 1.0).unwrap();
        // Terminal curvature is zero for this cost, so a window is required.
        assert!(matches!(
            certify_system(entry.system.as_ref(), &costs, &small_spec(6), None),
            Err(Error::MissingDelta)
        ));
        let cert =
            certify_system(entry.system.as_ref(), &costs, &small_spec(6), Some(0.5)).unwrap();
        assert!(!cert.assumptions.a4.pass);
        assert!(!cert.applicable);
        // The census wanders through the affine regime where the unmatched
        // component has magnitude 10 (larger inside the transition window).
        assert!(
            cert.matching_residual_max >= 9.9,
            "max residual {}",
            cert.matching_residual_max
        );
        assert!(cert.constants.c0.is_none());
        assert!(cert.constants.c0_delta.is_some());
    }

    #[test]
    fn compliant_scalar_drift_certificate_passes() {
        let entry = lookup("sin_drift").unwrap();
        // q well above 8 alpha_R.
        let costs = QuadraticCost::isotropic(1.0, 0.05, 1.0, 1, 1).unwrap();
        let cert =
            certify_system(entry.system.as_ref(), &costs, &small_spec(7), Some(0.5)).unwrap();
        assert!(cert.applicable, "{:?}", cert.assumptions);
        assert!(cert.bundle.l_u <= 1e-6);
        assert!(cert.bundle.l_x > 0.5 && cert.bundle.l_x < 1.2, "{}", cert.bundle.l_x);
        assert!(cert.bundle.gamma >= 1.0 && cert.bundle.gamma < 5.0);

        // Certificate JSON carries the pinned field layout.
        let json = cert.to_json();
        for key in ["assumptions", "bundle", "constants", "census"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        for key in ["a4", "a5", "a6", "a7"] {
            assert!(json["assumptions"][key].get("pass").is_some());
            assert!(json["assumptions"][key].get("evidence").is_some());
        }
        for key in ["C0", "C1", "C2", "C0_delta", "C1_delta"] {
            assert!(json["constants"].get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn decay_bound_reports() {
        let entry = lookup("sin_drift").unwrap();
        let costs = QuadraticCost::isotropic(1.0, 0.05, 1.0, 1, 1).unwrap();
        let cert =
            certify_system(entry.system.as_ref(), &costs, &small_spec(8), Some(0.5)).unwrap();

        // Origin run: both sides vanish, treated as a pass with no ratio.
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let u = ControlSignal::zero(grid, 1);
        let roll = eval_cost(entry.system.as_ref(), &costs, &u, &DVector::zeros(1)).unwrap();
        let report = check_decay_bound(&cert, &roll, 0.0);
        assert!(report.holds);
        assert_eq!(report.max_ratio, 0.0);
        let values = check_value_bounds(&cert, &roll, &costs, 0.0).unwrap();
        assert!(values.holds());

        // eps = 0 reduces the right side to the pure exponential envelope;
        // a diverging run must violate it somewhere.
        let bad = ControlSignal::constant(grid, DVector::from_element(1, 3.0));
        let roll = eval_cost(entry.system.as_ref(), &costs, &bad, &DVector::from_element(1, 0.01))
            .unwrap();
        let report = check_decay_bound(&cert, &roll, 0.0);
        assert!(!report.holds);
        assert!(report.max_ratio > 1.0);
    }
}
