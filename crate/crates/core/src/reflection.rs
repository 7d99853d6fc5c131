//! The reflection machinery on uniformly sampled trajectories.
//!
//! For a driving path `gamma`, the operator
//!
//! ```text
//! Pi_gamma(v)(t) = sup_{0 <= s <= t} [R^T v(s) - gamma(s)]_+
//! ```
//!
//! is a contraction in the trajectory norm `|| sup_t |f(t)| ||_w`, with factor
//! the induced weighted norm of `R^T`. Its fixed point `Psi(gamma)` is the
//! minimal non-decreasing regulator that keeps `gamma + (I - R^T) Psi(gamma)`
//! non-negative, and `Phi(y) = y + (I - R^T) Psi(y)` is the reflected path.
//!
//! All suprema run over grid samples only.

use crate::error::{FlowError, Result};
use crate::network::{RoutingSpec, WeightedNorm};

/// Default fixed-point tolerance for the regulator, in the trajectory norm.
pub const DEFAULT_PSI_TOL: f64 = 1e-10;

/// Uniform time grid `t_k = t0 + k h`, `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    h: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, h: f64, n: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite() && t0.is_finite()) {
            return Err(FlowError::Structural(format!(
                "grid step must be positive and finite, got {h}"
            )));
        }
        if n == 0 {
            return Err(FlowError::Structural("grid needs at least one step".into()));
        }
        Ok(Self { t0, h, n })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Number of steps. The grid has `steps() + 1` samples.
    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn end(&self) -> f64 {
        self.time(self.n)
    }

    /// Grid of samples `k0..=k0+steps` of this grid.
    pub fn slice(&self, k0: usize, steps: usize) -> Result<Self> {
        if k0 + steps > self.n {
            return Err(FlowError::Structural(format!(
                "slice {k0}+{steps} exceeds grid with {} steps",
                self.n
            )));
        }
        Self::new(self.time(k0), self.h, steps)
    }
}

/// Vector-valued samples on a [`TimeGrid`], stored row-major (one row per time).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            data: vec![0.0; grid.len() * dim],
        }
    }

    /// Samples `f(t_k)` at every grid time.
    pub fn from_fn(grid: TimeGrid, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len() * dim);
        for k in 0..grid.len() {
            let row = f(grid.time(k));
            if row.len() != dim {
                return Err(FlowError::Structural(format!(
                    "sample at t={} has {} entries, expected {dim}",
                    grid.time(k),
                    row.len()
                )));
            }
            data.extend(row);
        }
        Self::from_data(grid, dim, data)
    }

    pub fn from_data(grid: TimeGrid, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() * dim {
            return Err(FlowError::Structural(format!(
                "{} values for {} samples of dimension {dim}",
                data.len(),
                grid.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(FlowError::Structural(format!("non-finite trajectory value {bad}")));
        }
        Ok(Self { grid, dim, data })
    }

    /// Constant path equal to `value` at every sample.
    pub fn constant(grid: TimeGrid, value: &[f64]) -> Self {
        let mut data = Vec::with_capacity(grid.len() * value.len());
        for _ in 0..grid.len() {
            data.extend_from_slice(value);
        }
        Self {
            grid,
            dim: value.len(),
            data,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Samples of a single coordinate over time.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.rows().map(|r| r[i]).collect()
    }

    /// The first `steps + 1` samples.
    pub fn prefix(&self, steps: usize) -> Result<Self> {
        let grid = self.grid.slice(0, steps)?;
        Ok(Self {
            grid,
            dim: self.dim,
            data: self.data[..grid.len() * self.dim].to_vec(),
        })
    }

    /// Samples `k0..=k0+steps` on their own grid.
    pub fn window(&self, k0: usize, steps: usize) -> Result<Self> {
        let grid = self.grid.slice(k0, steps)?;
        Ok(Self {
            grid,
            dim: self.dim,
            data: self.data[k0 * self.dim..(k0 + steps + 1) * self.dim].to_vec(),
        })
    }

    pub fn sub(&self, other: &Trajectory) -> Result<Self> {
        check_same_shape(self, other)?;
        Ok(Self {
            grid: self.grid,
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }
}

fn check_same_shape(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.grid != b.grid || a.dim != b.dim {
        return Err(FlowError::Structural(format!(
            "trajectory shapes differ: {:?}x{} vs {:?}x{}",
            a.grid, a.dim, b.grid, b.dim
        )));
    }
    Ok(())
}

fn check_dim(v: &Trajectory, n: usize) -> Result<()> {
    if v.dim != n {
        return Err(FlowError::Structural(format!(
            "trajectory has dimension {} but the network has {n} links",
            v.dim
        )));
    }
    Ok(())
}

/// `|| sup_k |v(t_k)| ||_w`.
pub fn traj_norm(v: &Trajectory, wn: &WeightedNorm) -> f64 {
    let u = wn.weights();
    v.rows().fold(0.0, |acc, row| {
        row.iter()
            .zip(u)
            .fold(acc, |a, (x, w)| a.max(x.abs() / w))
    })
}

/// `traj_norm(a - b)` without allocating.
pub fn traj_distance(a: &Trajectory, b: &Trajectory, wn: &WeightedNorm) -> f64 {
    let u = wn.weights();
    a.rows().zip(b.rows()).fold(0.0, |acc, (ra, rb)| {
        ra.iter()
            .zip(rb)
            .zip(u)
            .fold(acc, |m, ((x, y), w)| m.max((x - y).abs() / w))
    })
}

// out(t_k) = max(out(t_{k-1}), [R^T v(t_k) - gamma(t_k)]_+)
fn pi_into(gamma: &Trajectory, v: &Trajectory, routing: &RoutingSpec, out: &mut Trajectory) {
    let n = gamma.dim;
    let mut running = vec![0.0; n];
    for k in 0..gamma.len() {
        let vk = v.row(k);
        let gk = gamma.row(k);
        let ok = out.row_mut(k);
        for i in 0..n {
            let rt: f64 = routing.predecessors(i).iter().map(|&(j, r)| r * vk[j]).sum();
            let cand = rt - gk[i];
            if cand > running[i] {
                running[i] = cand;
            }
            ok[i] = running[i];
        }
    }
}

/// One application of the reflection operator `Pi_gamma` to `v`.
pub fn apply_pi(gamma: &Trajectory, v: &Trajectory, routing: &RoutingSpec) -> Result<Trajectory> {
    check_same_shape(gamma, v)?;
    check_dim(gamma, routing.num_links())?;
    let mut out = Trajectory::zeros(gamma.grid, gamma.dim);
    pi_into(gamma, v, routing, &mut out);
    Ok(out)
}

/// Fixed point of `Pi_gamma` together with its convergence certificate.
#[derive(Debug, Clone)]
pub struct Regulator {
    pub w: Trajectory,
    pub iterations: usize,
    /// Certified bound on `|| w - Pi_gamma(w) ||`.
    pub residual: f64,
}

/// Iteration cap `10 * ceil(log(tol) / log(rate)) + 100` shared by the fixed-point loops.
pub(crate) fn iteration_cap(tol: f64, rate: f64) -> usize {
    let k = if rate <= 0.0 {
        0.0
    } else {
        (tol.ln() / rate.ln() - 1e-9).ceil().max(0.0)
    };
    10 * k as usize + 100
}

/// Computes `Psi(gamma)` by Picard iteration `v <- Pi_gamma(v)` from `v = 0`.
///
/// Stops once successive iterates are within `tol (1 - rho) / rho`, which
/// bounds the distance to the true fixed point by `tol`.
pub fn fixed_point_psi(
    gamma: &Trajectory,
    routing: &RoutingSpec,
    wn: &WeightedNorm,
    tol: f64,
) -> Result<Regulator> {
    check_dim(gamma, routing.num_links())?;
    if !(tol > 0.0) {
        return Err(FlowError::Structural(format!("tolerance must be positive, got {tol}")));
    }
    let rho = wn.contraction();
    if !(rho < 1.0) {
        return Err(FlowError::NotCertified { bound: rho });
    }
    let threshold = tol * (1.0 - rho) / rho.max(f64::EPSILON);
    let cap = iteration_cap(tol, rho);
    let mut current = Trajectory::zeros(gamma.grid, gamma.dim);
    let mut next = current.clone();
    let mut dist = f64::INFINITY;
    for it in 1..=cap {
        pi_into(gamma, &current, routing, &mut next);
        dist = traj_distance(&next, &current, wn);
        std::mem::swap(&mut current, &mut next);
        if dist <= threshold {
            return Ok(Regulator {
                w: current,
                iterations: it,
                residual: rho * dist,
            });
        }
    }
    Err(FlowError::NonConvergence {
        what: "regulator fixed point",
        iterations: cap,
        residual: rho * dist,
    })
}

/// Reflected path `x = y + (I - R^T) Psi(y)` plus the regulator used.
#[derive(Debug, Clone)]
pub struct Reflected {
    pub x: Trajectory,
    pub regulator: Regulator,
}

pub fn apply_phi(
    y: &Trajectory,
    routing: &RoutingSpec,
    wn: &WeightedNorm,
    tol: f64,
) -> Result<Reflected> {
    let regulator = fixed_point_psi(y, routing, wn, tol)?;
    let mut x = y.clone();
    let mut push = vec![0.0; y.dim];
    for k in 0..y.len() {
        routing.apply_i_minus_transpose(regulator.w.row(k), &mut push);
        for (xi, p) in x.row_mut(k).iter_mut().zip(&push) {
            *xi += p;
        }
    }
    Ok(Reflected { x, regulator })
}
