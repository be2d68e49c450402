//! Stabilizability measurement via the finite-horizon time-varying Riccati
//! equation.
//!
//! A linearization path `(A(.), B(.))` on `[0, T]` is gamma-stabilizable if
//! the unit-weight LQR value from every start `(s, x0)`,
//!
//! ```text
//! inf_u integral_s^T |x(t)|^2 + |u(t)|^2 dt + |x(T)|^2  <=  gamma |x0|^2,
//! ```
//!
//! is bounded by `gamma |x0|^2`. That value equals `x0^T P(s) x0` where `P`
//! solves the backward matrix Riccati equation
//!
//! ```text
//! -Pdot = A^T P + P A - P B B^T P + I,    P(T) = I,
//! ```
//!
//! so `gamma` is realized as the largest eigenvalue of `P` over the horizon.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linearize::LinearizationPath;
use crate::models::SystemModel;
use crate::sampling::{census_of, sample_paths, SampleCensus, SampleSpec};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Blow-up threshold on `lambda_max(P)`; beyond it the path is reported
/// unstabilizable at this tolerance.
pub const BLOWUP_LIMIT: f64 = 1e10;

/// Backward Riccati solution along a path, with `gamma = max lambda_max(P)`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    /// Symmetric PSD cost-to-go matrix per node; the terminal node is `I`.
    pub p: Vec<DMatrix<f64>>,
    pub gamma: f64,
}

/// JSON summary `{gamma, blowup, T, n_steps}`.
#[derive(Debug, Clone, Serialize)]
pub struct RiccatiSummary {
    pub gamma: Option<f64>,
    pub blowup: bool,
    #[serde(rename = "T")]
    pub t: f64,
    pub n_steps: usize,
}

impl RiccatiSolution {
    pub fn summary(&self) -> RiccatiSummary {
        RiccatiSummary {
            gamma: Some(self.gamma),
            blowup: false,
            t: self.grid.horizon(),
            n_steps: self.grid.n_steps(),
        }
    }

    pub fn p_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let (idx, frac) = self.grid.locate(t)?;
        Ok(if frac == 0.0 {
            self.p[idx].clone()
        } else {
            &self.p[idx] * (1.0 - frac) + &self.p[idx + 1] * frac
        })
    }
}

fn lambda_max(p: &DMatrix<f64>) -> f64 {
    p.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

fn symmetrized(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

/// Matrix RK4 step of the backward Riccati equation (post-step
/// symmetrization cures the drift in symmetry).
fn riccati_rhs(path: &LinearizationPath, t: f64, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a = path.a_at(t)?;
    let b = path.b_at(t)?;
    let n = p.nrows();
    // Pdot = -(A^T P + P A - P B B^T P + I).
    Ok(-(a.transpose() * p + p * a - p * &b * b.transpose() * p + DMatrix::identity(n, n)))
}

/// Solve the backward Riccati equation along the path.
pub fn solve_riccati(path: &LinearizationPath) -> Result<RiccatiSolution> {
    let grid = *path.grid();
    let n = path.state_dim();
    let dt = grid.dt();
    let mut p = DMatrix::identity(n, n);
    let mut nodes = vec![DMatrix::zeros(n, n); grid.n_nodes()];
    nodes[grid.n_steps()] = p.clone();
    let mut gamma = 1.0_f64;
    for k in (0..grid.n_steps()).rev() {
        let t_hi = grid.node_time(k + 1);
        let k1 = riccati_rhs(path, t_hi, &p)?;
        let k2 = riccati_rhs(path, t_hi - 0.5 * dt, &(&p + &k1 * (-0.5 * dt)))?;
        let k3 = riccati_rhs(path, t_hi - 0.5 * dt, &(&p + &k2 * (-0.5 * dt)))?;
        let k4 = riccati_rhs(path, t_hi - dt, &(&p + &k3 * (-dt)))?;
        p = symmetrized(&p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (-dt / 6.0));
        let lam = lambda_max(&p);
        if !lam.is_finite() || lam > BLOWUP_LIMIT {
            return Err(Error::RiccatiBlowup {
                t: grid.node_time(k),
                lambda: lam,
            });
        }
        gamma = gamma.max(lam);
        nodes[k] = p.clone();
    }
    Ok(RiccatiSolution {
        grid,
        p: nodes,
        gamma,
    })
}

/// Roll out the optimal law `u = -B^T P x` from `(s, x0)` and return the
/// realized unit-weight cost; it should match `x0^T P(s) x0`.
pub fn verify_gamma(
    path: &LinearizationPath,
    solution: &RiccatiSolution,
    x0: &DVector<f64>,
    s: f64,
) -> Result<f64> {
    let grid = *path.grid();
    let k0 = grid.nearest_node(s)?;
    let dt = grid.dt();
    let n_steps = grid.n_steps();
    if k0 == n_steps {
        return Ok(x0.norm_squared());
    }

    let mut f = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let a = path.a_at(t)?;
        let b = path.b_at(t)?;
        let p = solution.p_at(t)?;
        Ok(a * x - &b * (b.transpose() * p * x))
    };
    let mut x = x0.clone();
    let mut integrand = Vec::with_capacity(n_steps - k0 + 1);
    let stage_cost = |x: &DVector<f64>, t: f64| -> Result<f64> {
        let b = path.b_at(t)?;
        let p = solution.p_at(t)?;
        let u = -(b.transpose() * p * x);
        Ok(x.norm_squared() + u.norm_squared())
    };
    integrand.push(stage_cost(&x, grid.node_time(k0))?);
    for k in k0..n_steps {
        let t = grid.node_time(k);
        x = crate::sim::rk4_step(&mut f, t, &x, dt)?;
        let norm = x.norm();
        if !norm.is_finite() || norm > crate::sim::DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                t: grid.node_time(k + 1),
                norm,
            });
        }
        integrand.push(stage_cost(&x, grid.node_time(k + 1))?);
    }
    let mut cost = 0.0;
    for (i, v) in integrand.iter().enumerate() {
        let w = if i == 0 || i == integrand.len() - 1 {
            0.5 * dt
        } else {
            dt
        };
        cost += w * v;
    }
    Ok(cost + x.norm_squared())
}

/// Largest `gamma` over a sampled census of linearization paths.
#[derive(Debug, Clone)]
pub struct GammaEstimate {
    pub gamma: f64,
    pub census: SampleCensus,
}

/// Estimate the uniform stabilizability constant by sampling nominal pairs.
/// Any unstabilizable sample propagates as an error with its context.
pub fn estimate_gamma_uniform(
    system: &dyn SystemModel,
    spec: &SampleSpec,
) -> Result<GammaEstimate> {
    let paths = sample_paths(system, spec)?;
    let gamma = gamma_over_paths(&paths)?;
    Ok(GammaEstimate {
        gamma,
        census: census_of(system, spec, paths.len()),
    })
}

/// Max `gamma` over already-sampled paths.
pub fn gamma_over_paths(paths: &[LinearizationPath]) -> Result<f64> {
    let mut gamma = 0.0_f64;
    for (i, path) in paths.iter().enumerate() {
        let sol = solve_riccati(path).map_err(|e| match e {
            Error::RiccatiBlowup { t, lambda } => Error::NoFiniteGain(format!(
                "path {i} unstabilizable at tolerance: lambda_max = {lambda:.3e} at t = {t:.4}"
            )),
            other => other,
        })?;
        gamma = gamma.max(sol.gamma);
    }
    Ok(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::linearize_along;
    use crate::sampling::random_smooth_control;
    use crate::signal::ControlSignal;
    use crate::sim::rollout;
    use crate::systems::{lookup, LinearSystem};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_path(a: f64, b: f64, horizon: f64, n_steps: usize) -> LinearizationPath {
        let system = LinearSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
        )
        .unwrap();
        let grid = TimeGrid::new(horizon, n_steps).unwrap();
        let u = ControlSignal::zero(grid, 1);
        let x = rollout(&system, &u, &DVector::from_element(1, 0.5)).unwrap();
        linearize_along(&system, &x, &u).unwrap()
    }

    #[test]
    fn integrator_with_unit_input_has_constant_p() {
        // A = 0, B = 1: P = 1 solves the stationary equation and matches the
        // terminal condition, so P(s) = 1 for every s and every horizon.
        let path = scalar_path(0.0, 1.0, 20.0, 2000);
        let sol = solve_riccati(&path).unwrap();
        // Terminal condition is the identity exactly.
        assert_eq!(sol.p.last().unwrap()[(0, 0)], 1.0);
        for p in &sol.p {
            assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sol.gamma, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stable_uncontrolled_scalar_matches_closed_form() {
        // A = -1, B = 0: P(s) = 1/2 + exp(-2 (T - s)) / 2.
        let t_final = 5.0;
        let n = 5000;
        let path = scalar_path(-1.0, 0.0, t_final, n);
        let sol = solve_riccati(&path).unwrap();
        for (k, p) in sol.p.iter().enumerate() {
            let s = sol.grid.node_time(k);
            let expect = 0.5 + 0.5 * (-2.0 * (t_final - s)).exp();
            assert_abs_diff_eq!(p[(0, 0)], expect, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(sol.gamma, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uncontrollable_neutral_scalar_grows_linearly() {
        // A = 0, B = 0: P(s) = 1 + (T - s); gamma grows with the horizon.
        let t_final = 3.0;
        let path = scalar_path(0.0, 0.0, t_final, 3000);
        let sol = solve_riccati(&path).unwrap();
        for (k, p) in sol.p.iter().enumerate() {
            let s = sol.grid.node_time(k);
            assert_abs_diff_eq!(p[(0, 0)], 1.0 + (t_final - s), epsilon = 1e-8);
        }
        assert_abs_diff_eq!(sol.gamma, 1.0 + t_final, epsilon = 1e-8);
    }

    #[test]
    fn riccati_preserves_symmetry() {
        let entry = lookup("bump").unwrap();
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_smooth_control(grid, 1, 2.0, &mut rng);
        let x = rollout(entry.system.as_ref(), &u, &DVector::from_vec(vec![3.0, -2.0])).unwrap();
        let path = linearize_along(entry.system.as_ref(), &x, &u).unwrap();
        let sol = solve_riccati(&path).unwrap();
        for p in &sol.p {
            assert!((p - p.transpose()).norm() <= 1e-12);
            assert!(lambda_max(&(-p.clone())) <= 1e-9); // PSD up to tolerance
        }
    }

    #[test]
    fn closed_loop_cost_matches_quadratic_form() {
        let t_final = 2.0;
        let path = scalar_path(-1.0, 0.0, t_final, 2000);
        let sol = solve_riccati(&path).unwrap();

        // x0 = 0: zero cost.
        assert_eq!(
            verify_gamma(&path, &sol, &DVector::zeros(1), 0.0).unwrap(),
            0.0
        );

        // Analytic value at s = 0.
        let cost = verify_gamma(&path, &sol, &DVector::from_element(1, 1.0), 0.0).unwrap();
        let expect = 0.5 + 0.5 * (-2.0 * t_final).exp();
        assert_abs_diff_eq!(cost, expect, epsilon = 1e-6);

        // Consistency on a generic nonlinear path at several start times.
        let entry = lookup("sin_drift").unwrap();
        let grid = TimeGrid::new(2.0, 2000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_smooth_control(grid, 1, 1.0, &mut rng);
        let x = rollout(entry.system.as_ref(), &u, &DVector::from_element(1, 1.2)).unwrap();
        let path = linearize_along(entry.system.as_ref(), &x, &u).unwrap();
        let sol = solve_riccati(&path).unwrap();
        for s in [0.0, 0.5, 1.0, 1.9] {
            let x0 = DVector::from_element(1, -0.8);
            let realized = verify_gamma(&path, &sol, &x0, s).unwrap();
            let predicted = (x0.transpose() * sol.p_at(s).unwrap() * &x0)[(0, 0)];
            let rel = (realized - predicted).abs() / predicted.abs().max(1e-12);
            assert!(rel <= 1e-4, "s = {s}: relative error {rel}");
        }
    }

    #[test]
    fn truncation_monotonicity_on_stable_scalar() {
        // For A = -1, B = 0 the analytic cost-to-go from fixed s decreases
        // toward 1/2 as the horizon grows; the terminal-term change bounds
        // the difference.
        let p_short = {
            let path = scalar_path(-1.0, 0.0, 2.0, 2000);
            solve_riccati(&path).unwrap().p[0][(0, 0)]
        };
        let p_long = {
            let path = scalar_path(-1.0, 0.0, 4.0, 4000);
            solve_riccati(&path).unwrap().p[0][(0, 0)]
        };
        assert!(p_long <= p_short);
        let analytic_gap = 0.5 * ((-4.0_f64).exp() - (-8.0_f64).exp());
        assert_abs_diff_eq!(p_short - p_long, analytic_gap, epsilon = 1e-8);
    }

    #[test]
    fn gamma_estimate_is_finite_for_catalog_systems() {
        let spec = SampleSpec {
            horizons: vec![1.0, 3.0],
            n_initial: 3,
            n_controls: 2,
            control_amplitude: 1.5,
            seed: 7,
            max_dt: 0.01,
        };
        for name in ["sin_drift", "bump", "lti"] {
            let entry = lookup(name).unwrap();
            let est = estimate_gamma_uniform(entry.system.as_ref(), &spec).unwrap();
            assert!(est.gamma.is_finite() && est.gamma >= 1.0, "{name}: {}", est.gamma);
            assert!(est.census.total_paths > 0);
        }
    }

    #[test]
    fn lti_gamma_ignores_the_nominal_control() {
        // The linearization of an LTI system does not depend on the nominal,
        // so gamma is identical across control draws.
        let entry = lookup("lti").unwrap();
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gammas = Vec::new();
        for _ in 0..3 {
            let u = random_smooth_control(grid, 2, 2.0, &mut rng);
            let x = rollout(entry.system.as_ref(), &u, &DVector::from_vec(vec![1.0, -1.0]))
                .unwrap();
            let path = linearize_along(entry.system.as_ref(), &x, &u).unwrap();
            gammas.push(solve_riccati(&path).unwrap().gamma);
        }
        assert_abs_diff_eq!(gammas[0], gammas[1], epsilon = 1e-12);
        assert_abs_diff_eq!(gammas[0], gammas[2], epsilon = 1e-12);
    }
}
