//! Grid-sampled functions on `[0, T]` and their L2 geometry.
//!
//! A [`ControlSignal`] is the optimization variable: nodal values on a
//! [`TimeGrid`], interpreted piecewise-linearly between nodes. The inner
//! product is the trapezoid-rule approximation of the L2 pairing, so the
//! discrete gradient of a discretized cost is the exact gradient with
//! respect to this geometry.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use nalgebra::DVector;
use std::path::Path;

fn validate_samples(grid: &TimeGrid, samples: &[DVector<f64>]) -> Result<usize> {
    if samples.len() != grid.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} nodes, got {}",
            grid.n_nodes(),
            samples.len()
        )));
    }
    let dim = samples[0].len();
    if dim == 0 {
        return Err(Error::DimensionMismatch("zero-dimensional samples".into()));
    }
    for (k, s) in samples.iter().enumerate() {
        if s.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "node {k} has dimension {}, expected {dim}",
                s.len()
            )));
        }
        if !s.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite sample at node {k}"
            )));
        }
    }
    Ok(dim)
}

fn interpolate(grid: &TimeGrid, samples: &[DVector<f64>], t: f64) -> Result<DVector<f64>> {
    let (idx, frac) = grid.locate(t)?;
    if frac == 0.0 {
        return Ok(samples[idx].clone());
    }
    Ok(&samples[idx] * (1.0 - frac) + &samples[idx + 1] * frac)
}

fn to_csv(grid: &TimeGrid, samples: &[DVector<f64>]) -> String {
    let dim = samples[0].len();
    let mut out = String::from("t");
    for i in 0..dim {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for (k, s) in samples.iter().enumerate() {
        out.push_str(&format!("{:.16e}", grid.node_time(k)));
        for v in s.iter() {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

fn from_csv(text: &str) -> Result<(TimeGrid, Vec<DVector<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty csv".into()))?;
    let dim = header.split(',').count().saturating_sub(1);
    if dim == 0 {
        return Err(Error::Parse("csv header has no value columns".into()));
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse(format!("bad csv row: {line}")));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad float `{s}`: {e}")))
        };
        times.push(parse(fields[0])?);
        let vals: Result<Vec<f64>> = fields[1..].iter().map(|s| parse(s)).collect();
        samples.push(DVector::from_vec(vals?));
    }
    if samples.len() < 2 {
        return Err(Error::Parse("csv needs at least two rows".into()));
    }
    let horizon = *times.last().unwrap();
    let grid = TimeGrid::new(horizon, samples.len() - 1)?;
    Ok((grid, samples))
}

/// A grid-sampled input signal `[0, T] -> R^m`, piecewise linear between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    grid: TimeGrid,
    samples: Vec<DVector<f64>>,
}

impl ControlSignal {
    pub fn new(grid: TimeGrid, samples: Vec<DVector<f64>>) -> Result<Self> {
        validate_samples(&grid, &samples)?;
        Ok(Self { grid, samples })
    }

    pub fn zero(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            samples: vec![DVector::zeros(dim); grid.n_nodes()],
        }
    }

    pub fn constant(grid: TimeGrid, value: DVector<f64>) -> Self {
        Self {
            grid,
            samples: vec![value; grid.n_nodes()],
        }
    }

    /// Sample a time function onto the grid nodes.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let samples: Vec<DVector<f64>> = grid.times().iter().map(|&t| f(t)).collect();
        let got = validate_samples(&grid, &samples)?;
        if got != dim {
            return Err(Error::DimensionMismatch(format!(
                "sampler returned dimension {got}, expected {dim}"
            )));
        }
        Ok(Self { grid, samples })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn node(&self, k: usize) -> &DVector<f64> {
        &self.samples[k]
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    /// Linear interpolant at `t`; an error outside `[0, T]`.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        interpolate(&self.grid, &self.samples, t)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != *other.grid() {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid,
                other.grid()
            )));
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "signal dims {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    /// Trapezoid-rule approximation of the L2 inner product on `[0, T]`.
    pub fn l2_inner(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let mut acc = 0.0;
        for k in 0..self.grid.n_nodes() {
            acc += self.grid.trapezoid_weight(k) * self.samples[k].dot(&other.samples[k]);
        }
        Ok(acc)
    }

    /// L2 norm; nonnegative.
    pub fn l2_norm(&self) -> f64 {
        // The self inner product cannot fail.
        self.l2_inner(self).unwrap().max(0.0).sqrt()
    }

    /// Re-sample onto a new grid over the same horizon.
    pub fn resample(&self, grid: TimeGrid) -> Result<Self> {
        if grid.horizon() != self.grid.horizon() {
            return Err(Error::GridMismatch(format!(
                "resample horizon {} != source horizon {}",
                grid.horizon(),
                self.grid.horizon()
            )));
        }
        if grid == self.grid {
            return Ok(self.clone());
        }
        let samples: Result<Vec<DVector<f64>>> =
            grid.times().iter().map(|&t| self.eval(t)).collect();
        Ok(Self {
            grid,
            samples: samples?,
        })
    }

    /// `self + scale * other`, node-wise.
    pub fn add_scaled(&self, other: &Self, scale: f64) -> Result<Self> {
        self.check_compatible(other)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b * scale)
            .collect();
        Ok(Self {
            grid: self.grid,
            samples,
        })
    }

    pub fn to_csv(&self) -> String {
        to_csv(&self.grid, &self.samples)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (grid, samples) = from_csv(&std::fs::read_to_string(path)?)?;
        Self::new(grid, samples)
    }
}

/// A grid-sampled state path `[0, T] -> R^n` produced by rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Vec<DVector<f64>>) -> Result<Self> {
        validate_samples(&grid, &states)?;
        Ok(Self { grid, states })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn node(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        interpolate(&self.grid, &self.states, t)
    }

    pub fn to_csv(&self) -> String {
        to_csv(&self.grid, &self.states)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (grid, states) = from_csv(&std::fs::read_to_string(path)?)?;
        Self::new(grid, states)
    }
}
