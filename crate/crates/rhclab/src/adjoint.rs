//! Cost gradients via the costate equation, and stationarity measurement.
//!
//! Along the rollout `x(.)` of a control `u`, the costate integrates
//! backward from the terminal condition
//!
//! ```text
//! -pdot(t) = A(t)^T p(t) + grad Q(x(t)),    p(T) = grad V(x(T)),
//! ```
//!
//! with `A(t)` the state Jacobian along the nominal pair, and the L2
//! gradient density of the cost is
//!
//! ```text
//! g(t) = B(t)^T p(t) + grad R(u(t)).
//! ```
//!
//! The costate is integrated on the same grid as the state with RK4, using
//! the stored forward trajectory with linear interpolation at stage times.
//! This is the differentiate-then-discretize convention: the exact gradient
//! of the discretized cost differs from this sampled density by O(dt^2) at
//! interior nodes and, after the hat correction below, by a residual
//! first-order term confined to the two boundary nodes (O(dt^1.5) in the
//! L2 norm). The finite-difference oracle tolerance covers the mismatch.

use crate::error::Result;
use crate::grid::TimeGrid;
use crate::models::{CostModel, SystemModel};
use crate::sim::{cost_along, eval_cost, rk4_step, rollout};
use crate::signal::{ControlSignal, Trajectory};
use nalgebra::DVector;
use serde::Serialize;

/// Backward adjoint path `p(.)`; the terminal node equals `grad V(x(T))`.
#[derive(Debug, Clone)]
pub struct CostatePath {
    pub grid: TimeGrid,
    pub samples: Vec<DVector<f64>>,
}

/// Gradient of the cost at a control, with its L2 norm.
#[derive(Debug, Clone)]
pub struct GradientResult {
    pub gradient: ControlSignal,
    pub eps_measured: f64,
    pub costate: CostatePath,
    /// Cost of the underlying rollout, retained since it is free here.
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientSummary {
    pub eps_measured: f64,
}

impl GradientResult {
    /// Whether this point is an eps-approximate first-order stationary point,
    /// `|grad J|_2 <= eps`.
    pub fn is_eps_fos(&self, eps: f64) -> bool {
        self.eps_measured <= eps
    }

    pub fn summary(&self) -> GradientSummary {
        GradientSummary {
            eps_measured: self.eps_measured,
        }
    }
}

/// See [`GradientResult::is_eps_fos`].
pub fn is_eps_fos(result: &GradientResult, eps: f64) -> bool {
    result.is_eps_fos(eps)
}

/// Integrate the costate backward along `(x, u)` and assemble the gradient
/// density at the nodes. Shared by the true-dynamics gradient and the
/// frozen-linearization gradient, which differ only in the Jacobian source.
pub(crate) fn costate_gradient(
    jac_x: &dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> nalgebra::DMatrix<f64>,
    jac_u: &dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> nalgebra::DMatrix<f64>,
    costs: &dyn CostModel,
    x: &Trajectory,
    u: &ControlSignal,
) -> Result<(ControlSignal, CostatePath)> {
    let grid = *u.grid();
    let n = grid.n_steps();
    let dt = grid.dt();

    let mut p = costs.terminal_grad(x.terminal());
    let mut costate = vec![DVector::zeros(0); grid.n_nodes()];
    costate[n] = p.clone();

    let mut f = |t: f64, pv: &DVector<f64>| -> Result<DVector<f64>> {
        let xt = x.eval(t)?;
        let ut = u.eval(t)?;
        let a = jac_x(t, &xt, &ut);
        Ok(-(a.transpose() * pv + costs.state_grad(&xt)))
    };
    for k in (0..n).rev() {
        let t_hi = grid.node_time(k + 1);
        p = rk4_step(&mut f, t_hi, &p, -dt)?;
        costate[k] = p.clone();
    }

    let mut g = Vec::with_capacity(grid.n_nodes());
    for k in 0..grid.n_nodes() {
        let t = grid.node_time(k);
        let b = jac_u(t, x.node(k), u.node(k));
        g.push(b.transpose() * &costate[k] + costs.input_grad(u.node(k)));
    }
    // The boundary nodes carry one-sided hat functions, so the plain density
    // sample differs from the discretized gradient by O(dt) there (O(dt^2)
    // at interior nodes). The hat correction
    // (2/dt) int g (1 - t/dt) dt = g(0) + dt g'(0)/3 removes the leading
    // part; a smaller first-order term from the one-sided RK4 stage
    // allocation remains at the two end nodes.
    if n >= 1 {
        let head = (&g[1] - &g[0]) / 3.0;
        g[0] += head;
        let tail = (&g[n - 1] - &g[n]) / 3.0;
        g[n] += tail;
    }
    Ok((
        ControlSignal::new(grid, g)?,
        CostatePath {
            grid,
            samples: costate,
        },
    ))
}

/// Adjoint gradient of the cost functional at `u`.
pub fn gradient(
    system: &dyn SystemModel,
    costs: &dyn CostModel,
    u: &ControlSignal,
    x0: &DVector<f64>,
) -> Result<GradientResult> {
    let x = rollout(system, u, x0)?;
    let (grad, costate) = costate_gradient(
        &|_t, xt, ut| system.jacobian_x(xt, ut),
        &|_t, xt, ut| system.jacobian_u(xt, ut),
        costs,
        &x,
        u,
    )?;
    let eps_measured = grad.l2_norm();
    let cost = cost_along(costs, x, u)?.cost;
    Ok(GradientResult {
        gradient: grad,
        eps_measured,
        costate,
        cost,
    })
}

/// Central-difference gradient of the discretized cost with respect to each
/// nodal value, divided by the node's trapezoid weight to express it as an
/// L2 density. Oracle for the adjoint path; O(nodes * dim) cost evaluations.
pub fn finite_difference_gradient(
    system: &dyn SystemModel,
    costs: &dyn CostModel,
    u: &ControlSignal,
    x0: &DVector<f64>,
    h: f64,
) -> Result<ControlSignal> {
    if !(h > 0.0) {
        return Err(crate::error::Error::InvalidParameter(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let grid = *u.grid();
    let m = u.dim();
    let mut samples = vec![DVector::zeros(m); grid.n_nodes()];
    let mut work = u.samples().to_vec();
    for k in 0..grid.n_nodes() {
        for i in 0..m {
            let base = work[k][i];
            work[k][i] = base + h;
            let plus = eval_cost(system, costs, &ControlSignal::new(grid, work.clone())?, x0)?.cost;
            work[k][i] = base - h;
            let minus =
                eval_cost(system, costs, &ControlSignal::new(grid, work.clone())?, x0)?.cost;
            work[k][i] = base;
            samples[k][i] = (plus - minus) / (2.0 * h) / grid.trapezoid_weight(k);
        }
    }
    ControlSignal::new(grid, samples)
}
