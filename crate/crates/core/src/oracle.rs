//! Independent reference integrator.
//!
//! Projected explicit Euler on a fine grid. Outflows on empty links are found
//! by solving the boundary complementarity system directly, without any of the
//! reflection operators used by the solver.

use crate::controllers::Controller;
use crate::error::{FlowError, Result};
use crate::network::RoutingSpec;
use crate::reflection::{TimeGrid, Trajectory};
use crate::solver::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub step: f64,
    /// Links with volume at or below this are treated as empty.
    pub active_tol: f64,
    pub tol: f64,
    pub max_iterations: usize,
}

impl OracleConfig {
    pub fn new(step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(FlowError::Structural(format!("oracle step must be positive, got {step}")));
        }
        Ok(Self {
            step,
            active_tol: 1e-9,
            tol: 1e-14,
            max_iterations: 100_000,
        })
    }

    /// Step `h / refine` for a scenario of step `h`.
    pub fn refining(scenario: &Scenario, refine: usize) -> Result<Self> {
        if refine == 0 {
            return Err(FlowError::Structural("refinement factor must be at least 1".into()));
        }
        Self::new(scenario.step / refine as f64)
    }
}

/// Outflow vector for state `x`: `z_i = zeta_i` on occupied links and, on
/// empty links, the limit of `z <- min(zeta, lambda + R^T z)` iterated from
/// `z = zeta`. Returns the outflow and the number of sweeps used.
pub fn resolve_boundary_outflow(
    x: &[f64],
    zeta: &[f64],
    lambda: &[f64],
    routing: &RoutingSpec,
    cfg: &OracleConfig,
) -> Result<(Vec<f64>, usize)> {
    let active: Vec<usize> = (0..x.len()).filter(|&i| x[i] <= cfg.active_tol).collect();
    let mut z = zeta.to_vec();
    if active.is_empty() {
        return Ok((z, 0));
    }
    let mut next = vec![0.0; active.len()];
    for sweep in 1..=cfg.max_iterations {
        let mut change: f64 = 0.0;
        for (slot, &i) in next.iter_mut().zip(&active) {
            let supply: f64 = lambda[i]
                + routing
                    .predecessors(i)
                    .iter()
                    .map(|&(j, r)| r * z[j])
                    .sum::<f64>();
            *slot = zeta[i].min(supply);
        }
        for (&v, &i) in next.iter().zip(&active) {
            debug_assert!(v <= z[i] + 1e-15, "boundary iteration increased on link {i}");
            change = change.max((z[i] - v).abs());
            z[i] = v;
        }
        if change <= cfg.tol {
            return Ok((z, sweep));
        }
    }
    Err(FlowError::NonConvergence {
        what: "boundary outflow iteration",
        iterations: cfg.max_iterations,
        residual: f64::NAN,
    })
}

/// Oracle trajectories on the fine grid. `w` is the cumulative outflow
/// deficit `integral of (zeta - z)`, comparable with the solver's regulator.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub grid: TimeGrid,
    pub x: Trajectory,
    pub z: Trajectory,
    pub zeta: Trajectory,
    pub w: Trajectory,
    pub max_sweeps: usize,
}

impl OracleSolution {
    /// Restriction of `x` to a coarser grid whose step is a multiple of the oracle step.
    pub fn sample_state(&self, coarse: &TimeGrid) -> Result<Trajectory> {
        let ratio = coarse.step() / self.grid.step();
        let k = ratio.round() as usize;
        if k == 0
            || (ratio - k as f64).abs() > 1e-9 * ratio
            || coarse.steps() * k != self.grid.steps()
            || coarse.t0() != self.grid.t0()
        {
            return Err(FlowError::Structural(
                "oracle grid does not refine the requested grid".into(),
            ));
        }
        let dim = self.x.dim();
        let mut out = Trajectory::zeros(*coarse, dim);
        for j in 0..coarse.len() {
            out.row_mut(j).copy_from_slice(self.x.row(j * k));
        }
        Ok(out)
    }
}

pub fn oracle_solve(scenario: &Scenario, cfg: &OracleConfig) -> Result<OracleSolution> {
    let ratio = scenario.horizon / cfg.step;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
        return Err(FlowError::Structural(format!(
            "oracle step {} does not divide the horizon {}",
            cfg.step, scenario.horizon
        )));
    }
    let grid = TimeGrid::new(0.0, cfg.step, steps as usize)?;
    let n = scenario.num_links();
    let h = cfg.step;
    let mut x = Trajectory::zeros(grid, n);
    let mut z = Trajectory::zeros(grid, n);
    let mut zeta = Trajectory::zeros(grid, n);
    let mut w = Trajectory::zeros(grid, n);
    x.row_mut(0).copy_from_slice(&scenario.x0);
    let mut drain = vec![0.0; n];
    let mut max_sweeps = 0;
    for k in 0..grid.len() {
        let xk = x.row(k).to_vec();
        scenario.control(&xk, zeta.row_mut(k));
        // the last sample only needs an outflow, read with the last step's inflow
        let tk = grid.time(k.min(grid.steps() - 1));
        let lambda = scenario.inflow.over_step(tk, h);
        let (zk, sweeps) =
            resolve_boundary_outflow(&xk, zeta.row(k), &lambda, &scenario.routing, cfg)?;
        max_sweeps = max_sweeps.max(sweeps);
        z.row_mut(k).copy_from_slice(&zk);
        if k == grid.steps() {
            break;
        }
        scenario.routing.apply_i_minus_transpose(&zk, &mut drain);
        let deficit: Vec<f64> = zeta.row(k).iter().zip(&zk).map(|(c, v)| c - v).collect();
        let wk = w.row(k).to_vec();
        for i in 0..n {
            x.row_mut(k + 1)[i] = (xk[i] + h * (lambda[i] - drain[i])).max(0.0);
            w.row_mut(k + 1)[i] = wk[i] + h * deficit[i];
        }
    }
    Ok(OracleSolution {
        grid,
        x,
        z,
        zeta,
        w,
        max_sweeps,
    })
}

/// Exact single-link solution with no routing, constant control `zeta_c` and
/// constant inflow `lam`. Returns `(x(t), z(t))`.
pub fn closed_form_single_cell(zeta_c: f64, lam: f64, x0: f64, t: f64) -> (f64, f64) {
    if lam >= zeta_c {
        return (x0 + (lam - zeta_c) * t, zeta_c);
    }
    let x = x0 - (zeta_c - lam) * t;
    if x > 0.0 {
        (x, zeta_c)
    } else {
        (0.0, lam)
    }
}

/// Exact state path of a one-link scenario without routing under a constant
/// control, chaining [`closed_form_single_cell`] across inflow segments.
/// Returns `None` when the scenario is not of that shape.
pub fn closed_form_path(scenario: &Scenario) -> Option<Trajectory> {
    if scenario.num_links() != 1 || scenario.routing.matrix()[(0, 0)] != 0.0 {
        return None;
    }
    let zeta_c = match &scenario.controller {
        Controller::Constant(c) => c.values[0],
        _ => return None,
    };
    let segments: Vec<(f64, f64)> = scenario.inflow.segments().map(|(t, v)| (t, v[0])).collect();
    let grid = scenario.grid();
    Trajectory::from_fn(grid, 1, |t| {
        let mut x = scenario.x0[0];
        let mut clock = 0.0;
        // inflow is zero before the first breakpoint
        let mut lam = 0.0;
        for &(start, value) in &segments {
            if start > t {
                break;
            }
            x = closed_form_single_cell(zeta_c, lam, x, start - clock).0;
            clock = start;
            lam = value;
        }
        vec![closed_form_single_cell(zeta_c, lam, x, t - clock).0]
    })
    .ok()
}

/// Largest entry-wise gap between two paths on the same grid.
pub fn sup_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.grid() != b.grid() || a.dim() != b.dim() {
        return Err(FlowError::Structural("paths to compare live on different grids".into()));
    }
    Ok(a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0, |m, (p, q)| m.max((p - q).abs())))
}
