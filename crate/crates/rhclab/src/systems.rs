//! Built-in example systems and the system catalog.

use crate::error::{Error, Result};
use crate::models::{CostModel, QuadraticCost, SampleBox, SystemModel};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// `sigma(w) = exp(-1/w)` for `w > 0`, else `0`; the standard smooth cutoff.
fn sigma(w: f64) -> f64 {
    if w > 0.0 {
        (-1.0 / w).exp()
    } else {
        0.0
    }
}

/// First derivative of `sigma`.
fn sigma_d1(w: f64) -> f64 {
    if w > 0.0 {
        sigma(w) / (w * w)
    } else {
        0.0
    }
}

/// Second derivative of `sigma`.
fn sigma_d2(w: f64) -> f64 {
    if w > 0.0 {
        sigma(w) * (1.0 - 2.0 * w) / (w * w * w * w)
    } else {
        0.0
    }
}

/// Smooth transition `s(w)` with `s = 0` for `w <= 0`, `s = 1` for `w >= 1`,
/// built as `sigma(w) / (sigma(w) + sigma(1-w))`. `C-infinity`, nondecreasing.
fn smooth_step(w: f64) -> f64 {
    if w <= 0.0 {
        0.0
    } else if w >= 1.0 {
        1.0
    } else {
        let n = sigma(w);
        n / (n + sigma(1.0 - w))
    }
}

fn smooth_step_d1(w: f64) -> f64 {
    if w <= 0.0 || w >= 1.0 {
        0.0
    } else {
        let n = sigma(w);
        let d = n + sigma(1.0 - w);
        let nd1 = sigma_d1(w);
        let dd1 = nd1 - sigma_d1(1.0 - w);
        (nd1 * d - n * dd1) / (d * d)
    }
}

fn smooth_step_d2(w: f64) -> f64 {
    if w <= 0.0 || w >= 1.0 {
        0.0
    } else {
        let n = sigma(w);
        let d = n + sigma(1.0 - w);
        let nd1 = sigma_d1(w);
        let nd2 = sigma_d2(w);
        let dd1 = nd1 - sigma_d1(1.0 - w);
        let dd2 = nd2 + sigma_d2(1.0 - w);
        nd2 / d - (2.0 * nd1 * dd1 + n * dd2) / (d * d) + 2.0 * n * dd1 * dd1 / (d * d * d)
    }
}

/// Bump `eta(z)`: zero for `z <= 1`, one for `z >= 2`, smooth and
/// nondecreasing in between.
pub fn bump(z: f64) -> f64 {
    smooth_step(z - 1.0)
}

pub fn bump_d1(z: f64) -> f64 {
    smooth_step_d1(z - 1.0)
}

pub fn bump_d2(z: f64) -> f64 {
    smooth_step_d2(z - 1.0)
}

/// Scalar system `xdot = sin(x) + u`.
#[derive(Debug, Clone, Copy)]
pub struct SinDrift;

impl SystemModel for SinDrift {
    fn state_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0].sin() + u[0])
    }

    fn jacobian_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x[0].cos())
    }

    fn jacobian_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }

    fn lipschitz_bound(&self) -> f64 {
        1.0
    }

    fn sample_box(&self) -> SampleBox {
        // Covers the stationary-point study at x0 = 3*pi/4 with 2x margin.
        SampleBox::symmetric(1, 4.8, 1, 3.0)
    }
}

/// Linear time-invariant system `xdot = A x + B u`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    lipschitz: f64,
    sample_box: SampleBox,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.nrows() || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let lipschitz = spectral_norm(&a).max(spectral_norm(&b)).max(1e-12);
        let sample_box = SampleBox::symmetric(a.nrows(), 10.0, b.ncols(), 10.0);
        Ok(Self {
            a,
            b,
            lipschitz,
            sample_box,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

impl SystemModel for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    fn jacobian_x(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }

    fn jacobian_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }

    fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    fn sample_box(&self) -> SampleBox {
        self.sample_box.clone()
    }
}

/// Planar system `xdot = A x + B u + eta(x_1) (10, 0)` splicing a
/// controllable linear regime (`x_1 <= 1`) onto an affine regime with an
/// unmatched constant disturbance (`x_1 >= 2`).
#[derive(Debug, Clone)]
pub struct BumpSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    lipschitz: f64,
}

pub const BUMP_DISTURBANCE: [f64; 2] = [10.0, 0.0];

impl BumpSystem {
    pub fn new() -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        // Jacobian in x is A plus 10*eta'(x_1) in the (0,0) entry; scan the
        // transition window for the largest spectral norm on the box.
        let mut lip = spectral_norm(&a).max(1.0);
        for k in 0..=4000 {
            let z = 0.9 + 1.2 * k as f64 / 4000.0;
            let mut jx = a.clone();
            jx[(0, 0)] += BUMP_DISTURBANCE[0] * bump_d1(z);
            lip = lip.max(spectral_norm(&jx));
        }
        Self {
            a,
            b,
            lipschitz: lip,
        }
    }
}

impl Default for BumpSystem {
    fn default() -> Self {
        Self::new()
    }
}

impl SystemModel for BumpSystem {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut f = &self.a * x + &self.b * u;
        let eta = bump(x[0]);
        f[0] += eta * BUMP_DISTURBANCE[0];
        f[1] += eta * BUMP_DISTURBANCE[1];
        f
    }

    fn jacobian_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let mut jx = self.a.clone();
        let d1 = bump_d1(x[0]);
        jx[(0, 0)] += d1 * BUMP_DISTURBANCE[0];
        jx[(1, 0)] += d1 * BUMP_DISTURBANCE[1];
        jx
    }

    fn jacobian_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }

    fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    fn sample_box(&self) -> SampleBox {
        // Covers the affine-regime equilibrium (5, -5) with 2x margin.
        SampleBox::symmetric(2, 10.0, 1, 10.0)
    }
}

/// The bump system rewritten in its input-output linearizing coordinates
/// `xi_1 = x_1`, `xi_2 = -x_1 + x_2 + 10 eta(x_1)`, where the dynamics are
/// `xi_1dot = xi_2`, `xi_2dot = (10 eta'(xi_1) - 1) xi_2 + u`.
#[derive(Debug, Clone)]
pub struct BumpLinearized {
    lipschitz: f64,
}

impl BumpLinearized {
    pub fn new() -> Self {
        // max over the box of the Jacobian norm; the (1,0) entry
        // 10 eta''(xi_1) xi_2 dominates inside the transition window.
        let mut lip: f64 = 2.0;
        for k in 0..=4000 {
            let z = 0.9 + 1.2 * k as f64 / 4000.0;
            let row = (10.0 * bump_d2(z) * 12.0).abs() + (10.0 * bump_d1(z) - 1.0).abs();
            lip = lip.max(row + 1.0);
        }
        Self { lipschitz: lip }
    }

    /// Diffeomorphism from original coordinates to linearizing coordinates.
    pub fn to_linearizing(x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[0], -x[0] + x[1] + 10.0 * bump(x[0])])
    }

    /// Inverse diffeomorphism.
    pub fn from_linearizing(xi: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![xi[0], xi[1] + xi[0] - 10.0 * bump(xi[0])])
    }

    /// Bound on the drift nonlinearity gradient over the sample box, for the
    /// feedback-linearization drift-gain comparison.
    pub fn nonlinearity_gradient_bound(&self) -> f64 {
        let mut l_hat: f64 = 0.0;
        for k in 0..=4000 {
            let z = 0.9 + 1.2 * k as f64 / 4000.0;
            let a = 10.0 * bump_d1(z) - 1.0;
            let a_d = 10.0 * bump_d2(z) * 12.0;
            l_hat = l_hat.max((a * a + a_d * a_d).sqrt());
        }
        l_hat.max(1.0)
    }
}

impl Default for BumpLinearized {
    fn default() -> Self {
        Self::new()
    }
}

impl SystemModel for BumpLinearized {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[1], (10.0 * bump_d1(x[0]) - 1.0) * x[1] + u[0]])
    }

    fn jacobian_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                0.0,
                1.0,
                10.0 * bump_d2(x[0]) * x[1],
                10.0 * bump_d1(x[0]) - 1.0,
            ],
        )
    }

    fn jacobian_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
    }

    fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    fn sample_box(&self) -> SampleBox {
        SampleBox::symmetric(2, 12.0, 1, 10.0)
    }
}

/// Stationary-point weight triple for the sin-drift study: with
/// `q = q_f / sqrt(2)` and `r = 3 pi q_f / (2 sqrt(2))` the constant pair
/// `x = 3 pi / 4`, `u = -1/sqrt(2)` makes the cost gradient vanish for
/// every horizon.
pub fn sin_drift_stationary_weights(q_f: f64) -> (f64, f64, f64) {
    let q = q_f / 2.0_f64.sqrt();
    let r = 3.0 * std::f64::consts::PI * q_f / (2.0 * 2.0_f64.sqrt());
    (q, r, q_f)
}

/// Cost for the bump-system stationary-point study: `Q = q|x|^2`,
/// `R = r|u|^2`, terminal cost on the first coordinate only,
/// `V = q_f x_1^2`. With `q = q_f` the pair `x = (5,-5)`, `u = 0` is
/// stationary for every horizon and every `r > 0`.
pub fn bump_study_cost(q: f64, r: f64, q_f: f64) -> Result<QuadraticCost> {
    QuadraticCost::with_terminal_weights(q, r, DVector::from_vec(vec![q_f, 0.0]), 1)
}

/// A named system with a default cost and a provenance note.
#[derive(Clone)]
pub struct SystemCatalogEntry {
    pub name: &'static str,
    pub system: Arc<dyn SystemModel>,
    pub default_cost: Arc<dyn CostModel>,
    pub provenance: &'static str,
}

/// All built-in systems. Names are stable identifiers used by CLI configs.
pub fn catalog() -> Vec<SystemCatalogEntry> {
    vec![
        SystemCatalogEntry {
            name: "sin_drift",
            system: Arc::new(SinDrift),
            default_cost: Arc::new(QuadraticCost::isotropic(1.0, 0.05, 1.0, 1, 1).unwrap()),
            provenance: "scalar xdot = sin(x) + u; default weights put the state cost well \
                         above the input cost so the decay certificate applies",
        },
        SystemCatalogEntry {
            name: "bump",
            system: Arc::new(BumpSystem::new()),
            default_cost: Arc::new(bump_study_cost(1.0, 1.0, 1.0).unwrap()),
            provenance: "planar spliced system with an unmatched constant disturbance for \
                         x_1 >= 2; default cost reproduces the stuck equilibrium at (5,-5)",
        },
        SystemCatalogEntry {
            name: "bump_linearized",
            system: Arc::new(BumpLinearized::new()),
            default_cost: Arc::new(QuadraticCost::isotropic(1.0, 1.0, 1.0, 2, 1).unwrap()),
            provenance: "the bump system in its input-output linearizing coordinates, where \
                         the drift satisfies the matching condition",
        },
        SystemCatalogEntry {
            name: "lti",
            system: Arc::new(
                LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap(),
            ),
            default_cost: Arc::new(QuadraticCost::isotropic(1.0, 1.0, 1.0, 2, 2).unwrap()),
            provenance: "controllable baseline integrator, A = 0, B = I",
        },
        SystemCatalogEntry {
            name: "lti_scalar_stable",
            system: Arc::new(
                LinearSystem::new(
                    DMatrix::from_element(1, 1, -1.0),
                    DMatrix::from_element(1, 1, 1.0),
                )
                .unwrap(),
            ),
            default_cost: Arc::new(QuadraticCost::isotropic(1.0, 1.0, 1.0, 1, 1).unwrap()),
            provenance: "scalar xdot = -x + u; closed-form rollouts for integrator checks",
        },
    ]
}

/// Look up a catalog entry by name.
pub fn lookup(name: &str) -> Result<SystemCatalogEntry> {
    catalog()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownSystem(name.to_string()))
}
