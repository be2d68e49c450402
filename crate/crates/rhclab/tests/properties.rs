//! Property tests for the L2 geometry and the warm-start shift.

use nalgebra::DVector;
use proptest::prelude::*;
use rhclab::rhc::warm_start_shift;
use rhclab::signal::ControlSignal;
use rhclab::TimeGrid;

fn signal_strategy() -> impl Strategy<Value = (ControlSignal, ControlSignal)> {
    (2usize..40, 1usize..3, 0.1f64..5.0).prop_flat_map(|(n_steps, dim, horizon)| {
        let nodes = n_steps + 1;
        (
            Just(n_steps),
            Just(dim),
            Just(horizon),
            proptest::collection::vec(-10.0f64..10.0, nodes * dim),
            proptest::collection::vec(-10.0f64..10.0, nodes * dim),
        )
            .prop_map(|(n_steps, dim, horizon, a, b)| {
                let grid = TimeGrid::new(horizon, n_steps).unwrap();
                let build = |vals: Vec<f64>| {
                    ControlSignal::new(
                        grid,
                        vals.chunks(dim).map(|c| DVector::from_row_slice(c)).collect(),
                    )
                    .unwrap()
                };
                (build(a), build(b))
            })
    })
}

proptest! {
    #[test]
    fn cauchy_schwarz((a, b) in signal_strategy()) {
        let inner = a.l2_inner(&b).unwrap().abs();
        let bound = a.l2_norm() * b.l2_norm();
        prop_assert!(inner <= bound + 1e-12 + 1e-12 * bound);
    }

    #[test]
    fn resampling_reproduces_linear_signals_node_exactly(
        a0 in -5.0f64..5.0,
        a1 in -5.0f64..5.0,
        horizon in 0.5f64..4.0,
        coarse in 3usize..20,
        refine in 2usize..8,
    ) {
        let grid = TimeGrid::new(horizon, coarse).unwrap();
        let sig = ControlSignal::from_fn(grid, 1, |t| DVector::from_element(1, a0 + a1 * t))
            .unwrap();
        let fine = TimeGrid::new(horizon, coarse * refine).unwrap();
        let resampled = sig.resample(fine).unwrap();
        // Linear interpolation reproduces a linear signal at every new node,
        // so the resampled norm agrees with the closed-form integral up to
        // the quadrature error of the finer grid. (The trapezoid norm itself
        // is grid-dependent at second order: the squared integrand is
        // quadratic.)
        for (k, s) in resampled.samples().iter().enumerate() {
            let expect = a0 + a1 * fine.node_time(k);
            prop_assert!((s[0] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
        let exact = |t: f64| {
            a0 * a0 * t + a0 * a1 * t * t + a1 * a1 * t * t * t / 3.0
        };
        let exact_norm = exact(horizon).max(0.0).sqrt();
        let dt = fine.dt();
        let budget = a1 * a1 * dt * dt * horizon / 6.0 + 1e-12;
        prop_assert!(
            (resampled.l2_norm().powi(2) - exact_norm.powi(2)).abs() <= budget,
            "norm defect {} over budget {budget}",
            (resampled.l2_norm().powi(2) - exact_norm.powi(2)).abs()
        );
    }

    #[test]
    fn resampling_smooth_signals_drifts_at_second_order(
        freq in 0.5f64..3.0,
        coarse in 20usize..40,
    ) {
        let horizon = 2.0;
        let build = |n: usize| {
            let grid = TimeGrid::new(horizon, n).unwrap();
            ControlSignal::from_fn(grid, 1, |t| DVector::from_element(1, (freq * t).sin()))
                .unwrap()
        };
        let reference = build(coarse * 64).l2_norm();
        let err = |n: usize| {
            let grid_n = TimeGrid::new(horizon, n).unwrap();
            (build(coarse * 64).resample(grid_n).unwrap().l2_norm() - reference).abs()
        };
        // Halving dt should cut the resampling norm defect by roughly 4.
        let e1 = err(coarse);
        let e2 = err(coarse * 2);
        prop_assert!(e2 <= e1 / 2.5 + 1e-12);
    }

    #[test]
    fn composed_warm_start_shifts_collapse(
        n_cycles in 1usize..5,
        steps_per_cycle in 1usize..5,
        vals in proptest::collection::vec(-3.0f64..3.0, 21),
    ) {
        let n_steps = 20usize;
        prop_assume!(n_cycles * steps_per_cycle <= n_steps);
        let grid = TimeGrid::new(2.0, n_steps).unwrap();
        let delta = steps_per_cycle as f64 * grid.dt();
        let u = ControlSignal::new(
            grid,
            vals.iter().map(|&v| DVector::from_element(1, v)).collect(),
        )
        .unwrap();
        let mut shifted = u.clone();
        for _ in 0..n_cycles {
            shifted = warm_start_shift(&shifted, delta).unwrap();
        }
        let once = warm_start_shift(&u, n_cycles as f64 * delta).unwrap();
        prop_assert_eq!(shifted, once);
    }
}
