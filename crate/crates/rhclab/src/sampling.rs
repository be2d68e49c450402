//! Seeded sampling of nominal pairs for the assumption checkers.
//!
//! Universal statements ("for every trajectory of the system") cannot be
//! verified computationally; every checker in this crate works over a
//! recorded census of sampled trajectories instead, and certificates carry
//! verified-on-census semantics.

use crate::error::Result;
use crate::grid::TimeGrid;
use crate::linearize::{linearize_along, LinearizationPath};
use crate::models::SystemModel;
use crate::signal::ControlSignal;
use crate::sim::rollout;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What to sample: horizons, initial conditions and control draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSpec {
    pub horizons: Vec<f64>,
    /// Initial conditions per horizon, drawn from the interior of the
    /// system's test box.
    pub n_initial: usize,
    /// Control draws per initial condition (plus the zero control).
    pub n_controls: usize,
    pub control_amplitude: f64,
    pub seed: u64,
    /// Upper bound on dt; the default grid rule also applies.
    pub max_dt: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            horizons: vec![1.0, 3.0],
            n_initial: 8,
            n_controls: 3,
            control_amplitude: 2.0,
            seed: 0,
            max_dt: 0.01,
        }
    }
}

/// Record of what a sampling-based check actually covered.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleCensus {
    pub horizons: Vec<f64>,
    pub n_initial: usize,
    pub n_controls: usize,
    pub control_amplitude: f64,
    pub seed: u64,
    pub total_paths: usize,
    pub sample_box: String,
}

/// Random band-limited control: three sinusoids per channel with amplitudes
/// summing to at most `amplitude`.
pub fn random_smooth_control(
    grid: TimeGrid,
    dim: usize,
    amplitude: f64,
    rng: &mut impl Rng,
) -> ControlSignal {
    let mut terms: Vec<Vec<(f64, f64, f64)>> = Vec::new();
    for _ in 0..dim {
        let mut channel: Vec<(f64, f64, f64)> = Vec::new();
        for _ in 0..3 {
            let a = rng.gen_range(-1.0..=1.0);
            let w = rng.gen_range(0.3..=4.0);
            let phi = rng.gen_range(0.0..=std::f64::consts::TAU);
            channel.push((a, w, phi));
        }
        let norm: f64 = channel.iter().map(|(a, _, _)| a.abs()).sum::<f64>().max(1e-9);
        for t in &mut channel {
            t.0 *= amplitude / norm;
        }
        terms.push(channel);
    }
    ControlSignal::from_fn(grid, dim, move |t| {
        DVector::from_iterator(
            dim,
            terms.iter().map(|channel| {
                channel
                    .iter()
                    .map(|(a, w, phi)| a * (w * t + phi).sin())
                    .sum::<f64>()
            }),
        )
    })
    .expect("sampler dimensions are consistent")
}

/// Roll out and linearize the sampled census of nominal pairs.
pub fn sample_paths(system: &dyn SystemModel, spec: &SampleSpec) -> Result<Vec<LinearizationPath>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sbox = system.sample_box();
    let m = system.input_dim();
    let mut paths = Vec::new();
    for &horizon in &spec.horizons {
        let n_steps = ((horizon / spec.max_dt).ceil() as usize)
            .max(TimeGrid::with_default_steps(horizon)?.n_steps());
        let grid = TimeGrid::new(horizon, n_steps)?;
        for _ in 0..spec.n_initial {
            // Interior draw keeps most of the resulting trajectory inside
            // the certified box.
            let x0 = sbox.sample_state(&mut rng) * 0.5;
            let mut controls = vec![ControlSignal::zero(grid, m)];
            for _ in 0..spec.n_controls {
                controls.push(random_smooth_control(
                    grid,
                    m,
                    spec.control_amplitude,
                    &mut rng,
                ));
            }
            for u in controls {
                let x = rollout(system, &u, &x0)?;
                paths.push(linearize_along(system, &x, &u)?);
            }
        }
    }
    Ok(paths)
}

/// The census corresponding to a spec over a given system.
pub fn census_of(system: &dyn SystemModel, spec: &SampleSpec, total_paths: usize) -> SampleCensus {
    SampleCensus {
        horizons: spec.horizons.clone(),
        n_initial: spec.n_initial,
        n_controls: spec.n_controls,
        control_amplitude: spec.control_amplitude,
        seed: spec.seed,
        total_paths,
        sample_box: system.sample_box().describe(),
    }
}
