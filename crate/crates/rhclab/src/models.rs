//! System and cost abstractions.
//!
//! A [`SystemModel`] packages a vector field `F(x, u)` with its Jacobians,
//! a declared Lipschitz constant and a compact test box used by the
//! sampling-based checks. The origin must be an equilibrium, `F(0,0) = 0`.
//!
//! A [`CostModel`] packages running costs `Q(x)`, `R(u)` and terminal cost
//! `V(x)` together with declared Hessian bounds
//! `alpha_Q <= beta_Q`, `alpha_R <= beta_R`, `alpha_V <= beta_V`
//! (`alpha_Q, alpha_R > 0`, `alpha_V >= 0`). All three costs vanish at the
//! origin with vanishing gradient.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Compact box used for sampling-based invariant checks. Global properties
/// (Lipschitz constants, drift gains) are certified on this box only.
#[derive(Debug, Clone)]
pub struct SampleBox {
    pub x_lo: DVector<f64>,
    pub x_hi: DVector<f64>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
}

impl SampleBox {
    pub fn symmetric(n: usize, x_extent: f64, m: usize, u_extent: f64) -> Self {
        Self {
            x_lo: DVector::from_element(n, -x_extent),
            x_hi: DVector::from_element(n, x_extent),
            u_lo: DVector::from_element(m, -u_extent),
            u_hi: DVector::from_element(m, u_extent),
        }
    }

    pub fn sample_state(&self, rng: &mut impl Rng) -> DVector<f64> {
        sample_between(&self.x_lo, &self.x_hi, rng)
    }

    pub fn sample_input(&self, rng: &mut impl Rng) -> DVector<f64> {
        sample_between(&self.u_lo, &self.u_hi, rng)
    }

    pub fn describe(&self) -> String {
        format!(
            "x in [{:.3}, {:.3}]^{}, u in [{:.3}, {:.3}]^{}",
            self.x_lo.min(),
            self.x_hi.max(),
            self.x_lo.len(),
            self.u_lo.min(),
            self.u_hi.max(),
            self.u_lo.len()
        )
    }
}

fn sample_between(lo: &DVector<f64>, hi: &DVector<f64>, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_iterator(
        lo.len(),
        lo.iter().zip(hi.iter()).map(|(&a, &b)| rng.gen_range(a..=b)),
    )
}

/// Control system `xdot = F(x, u)` with origin equilibrium and known Jacobians.
pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn jacobian_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// Declared Lipschitz constant of `F` in `(x, u)` jointly, valid on the
    /// test box (and globally for the globally Lipschitz systems).
    fn lipschitz_bound(&self) -> f64;
    fn sample_box(&self) -> SampleBox;
}

/// Declared Hessian bounds of a cost triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBounds {
    pub alpha_q: f64,
    pub beta_q: f64,
    pub alpha_r: f64,
    pub beta_r: f64,
    pub alpha_v: f64,
    pub beta_v: f64,
}

/// Cost functional data: running state cost `Q`, running input cost `R`,
/// terminal cost `V`, their gradients and Hessian bounds.
pub trait CostModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn state_cost(&self, x: &DVector<f64>) -> f64;
    fn state_grad(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input_cost(&self, u: &DVector<f64>) -> f64;
    fn input_grad(&self, u: &DVector<f64>) -> DVector<f64>;
    fn terminal_cost(&self, x: &DVector<f64>) -> f64;
    fn terminal_grad(&self, x: &DVector<f64>) -> DVector<f64>;
    fn bounds(&self) -> CostBounds;
}

/// Quadratic cost triple `Q = q|x|^2`, `R = r|u|^2`, `V = sum_i w_i x_i^2`
/// with a diagonal terminal weight vector.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    q: f64,
    r: f64,
    terminal_weights: DVector<f64>,
    input_dim: usize,
}

impl QuadraticCost {
    /// Isotropic terminal cost `V = q_f |x|^2`.
    pub fn isotropic(q: f64, r: f64, q_f: f64, n: usize, m: usize) -> Result<Self> {
        Self::with_terminal_weights(q, r, DVector::from_element(n, q_f), m)
    }

    /// Diagonal terminal cost; weights must be nonnegative.
    pub fn with_terminal_weights(
        q: f64,
        r: f64,
        terminal_weights: DVector<f64>,
        m: usize,
    ) -> Result<Self> {
        if !(q > 0.0) || !(r > 0.0) || !q.is_finite() || !r.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "running cost weights must be positive, got q = {q}, r = {r}"
            )));
        }
        if terminal_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "terminal weights must be nonnegative".into(),
            ));
        }
        if m == 0 || terminal_weights.is_empty() {
            return Err(Error::InvalidParameter("zero dimensions".into()));
        }
        Ok(Self {
            q,
            r,
            terminal_weights,
            input_dim: m,
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }
}

impl CostModel for QuadraticCost {
    fn state_dim(&self) -> usize {
        self.terminal_weights.len()
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn state_cost(&self, x: &DVector<f64>) -> f64 {
        self.q * x.norm_squared()
    }

    fn state_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        x * (2.0 * self.q)
    }

    fn input_cost(&self, u: &DVector<f64>) -> f64 {
        self.r * u.norm_squared()
    }

    fn input_grad(&self, u: &DVector<f64>) -> DVector<f64> {
        u * (2.0 * self.r)
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        x.iter()
            .zip(self.terminal_weights.iter())
            .map(|(&xi, &wi)| wi * xi * xi)
            .sum()
    }

    fn terminal_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.terminal_weights.iter())
                .map(|(&xi, &wi)| 2.0 * wi * xi),
        )
    }

    fn bounds(&self) -> CostBounds {
        CostBounds {
            alpha_q: 2.0 * self.q,
            beta_q: 2.0 * self.q,
            alpha_r: 2.0 * self.r,
            beta_r: 2.0 * self.r,
            alpha_v: 2.0 * self.terminal_weights.min(),
            beta_v: 2.0 * self.terminal_weights.max(),
        }
    }
}

/// Report of the sampling-based model checks.
#[derive(Debug, Clone, Serialize)]
pub struct SystemCheckReport {
    pub origin_equilibrium_norm: f64,
    pub max_jacobian_rel_err: f64,
    pub max_lipschitz_ratio: f64,
    pub samples: usize,
}

impl SystemCheckReport {
    pub fn passes(&self) -> bool {
        self.origin_equilibrium_norm == 0.0
            && self.max_jacobian_rel_err <= 1e-5
            && self.max_lipschitz_ratio <= 1.0 + 1e-9
    }
}

/// Check `F(0,0) = 0`, Jacobians against central differences, and the
/// declared Lipschitz constant over random pairs in the test box.
pub fn check_system(system: &dyn SystemModel, n_points: usize, rng: &mut impl Rng) -> SystemCheckReport {
    let n = system.state_dim();
    let m = system.input_dim();
    let sbox = system.sample_box();

    let origin = system
        .dynamics(&DVector::zeros(n), &DVector::zeros(m))
        .norm();

    let mut max_jac = 0.0_f64;
    let mut max_lip = 0.0_f64;
    for _ in 0..n_points {
        let x = sbox.sample_state(rng);
        let u = sbox.sample_input(rng);

        let jx = system.jacobian_x(&x, &u);
        let ju = system.jacobian_u(&x, &u);
        let scale = 1.0 + jx.norm().max(ju.norm());

        let h = 1e-5;
        let mut fd_x = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (system.dynamics(&xp, &u) - system.dynamics(&xm, &u)) / (2.0 * h);
            fd_x.set_column(j, &col);
        }
        let mut fd_u = DMatrix::zeros(n, m);
        for j in 0..m {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            let col = (system.dynamics(&x, &up) - system.dynamics(&x, &um)) / (2.0 * h);
            fd_u.set_column(j, &col);
        }
        max_jac = max_jac
            .max((&jx - &fd_x).norm() / scale)
            .max((&ju - &fd_u).norm() / scale);

        let x2 = sbox.sample_state(rng);
        let u2 = sbox.sample_input(rng);
        let df = (system.dynamics(&x, &u) - system.dynamics(&x2, &u2)).norm();
        let denom = system.lipschitz_bound() * ((&x - &x2).norm() + (&u - &u2).norm());
        if denom > 0.0 {
            max_lip = max_lip.max(df / denom);
        }
    }

    SystemCheckReport {
        origin_equilibrium_norm: origin,
        max_jacobian_rel_err: max_jac,
        max_lipschitz_ratio: max_lip,
        samples: n_points,
    }
}

/// Report of the sampling-based cost checks.
#[derive(Debug, Clone, Serialize)]
pub struct CostCheckReport {
    pub origin_values: [f64; 3],
    pub origin_grad_norms: [f64; 3],
    pub max_curvature_excess: f64,
    pub max_strong_convexity_violation: f64,
    pub samples: usize,
}

impl CostCheckReport {
    pub fn passes(&self) -> bool {
        self.origin_values.iter().all(|&v| v == 0.0)
            && self.origin_grad_norms.iter().all(|&v| v == 0.0)
            && self.max_curvature_excess <= 1e-4
            && self.max_strong_convexity_violation <= 1e-8
    }
}

/// Check vanishing values/gradients at the origin, directional second
/// differences against the declared Hessian bounds, and strong convexity
/// along random pairs.
pub fn check_cost(cost: &dyn CostModel, extent: f64, n_points: usize, rng: &mut impl Rng) -> CostCheckReport {
    let n = cost.state_dim();
    let m = cost.input_dim();
    let b = cost.bounds();

    let zn = DVector::zeros(n);
    let zm = DVector::zeros(m);
    let origin_values = [
        cost.state_cost(&zn),
        cost.input_cost(&zm),
        cost.terminal_cost(&zn),
    ];
    let origin_grad_norms = [
        cost.state_grad(&zn).norm(),
        cost.input_grad(&zm).norm(),
        cost.terminal_grad(&zn).norm(),
    ];

    let mut curvature_excess = 0.0_f64;
    let mut convexity_violation = 0.0_f64;
    let h = 1e-4;

    let mut check_one = |f: &dyn Fn(&DVector<f64>) -> f64,
                         g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
                         dim: usize,
                         alpha: f64,
                         beta: f64,
                         rng: &mut rand_chacha::ChaCha8Rng| {
        for _ in 0..n_points {
            let x = DVector::from_fn(dim, |_, _| rng.gen_range(-extent..=extent));
            let mut v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..=1.0));
            if v.norm() < 1e-12 {
                v[0] = 1.0;
            }
            v /= v.norm();
            let second = (f(&(&x + &v * h)) - 2.0 * f(&x) + f(&(&x - &v * h))) / (h * h);
            curvature_excess = curvature_excess
                .max(alpha - second)
                .max(second - beta);

            let y = DVector::from_fn(dim, |_, _| rng.gen_range(-extent..=extent));
            let gap =
                f(&x) + g(&x).dot(&(&y - &x)) + 0.5 * alpha * (&y - &x).norm_squared() - f(&y);
            convexity_violation = convexity_violation.max(gap);
        }
    };

    // Re-seed deterministically per cost component.
    use rand::SeedableRng;
    let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(rng.gen());
    let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(rng.gen());
    let mut r3 = rand_chacha::ChaCha8Rng::seed_from_u64(rng.gen());
    check_one(&|x| cost.state_cost(x), &|x| cost.state_grad(x), n, b.alpha_q, b.beta_q, &mut r1);
    check_one(&|u| cost.input_cost(u), &|u| cost.input_grad(u), m, b.alpha_r, b.beta_r, &mut r2);
    check_one(&|x| cost.terminal_cost(x), &|x| cost.terminal_grad(x), n, b.alpha_v, b.beta_v, &mut r3);

    CostCheckReport {
        origin_values,
        origin_grad_norms,
        max_curvature_excess: curvature_excess,
        max_strong_convexity_violation: convexity_violation,
        samples: n_points,
    }
}
