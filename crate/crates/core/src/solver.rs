//! Windowed Picard solver for the point-queue network dynamics
//!
//! ```text
//! x' = lambda - (I - R^T) z,   x >= 0,   0 <= z <= zeta(x),   x^T (zeta(x) - z) = 0.
//! ```
//!
//! On each window the solution is the fixed point of `x = Phi(Gamma(x))`, where
//! `Gamma` integrates the unconstrained dynamics with outflow `zeta(x)` and
//! `Phi` reflects the result back into the non-negative orthant. Windows are
//! short enough for the composition to contract, and are chained by taking the
//! terminal state of one window as the initial state of the next.

use serde::Serialize;

use crate::controllers::Controller;
use crate::error::{FlowError, Result};
use crate::network::{build_weighted_norm, validate_routing, RoutingSpec, WeightedNorm};
use crate::reflection::{
    apply_phi, iteration_cap, traj_distance, TimeGrid, Trajectory, DEFAULT_PSI_TOL,
};

/// Piecewise-constant exogenous inflow. Segment `k` starts at `starts[k]` and
/// holds `values[k]` until the next start; before the first start the inflow is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowSignal {
    starts: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl InflowSignal {
    pub fn constant(lambda: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0], vec![lambda])
    }

    pub fn new(starts: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let mut problems = Vec::new();
        if starts.is_empty() || starts.len() != values.len() {
            return Err(FlowError::Structural(format!(
                "inflow has {} breakpoints and {} value vectors",
                starts.len(),
                values.len()
            )));
        }
        let dim = values[0].len();
        if starts.windows(2).any(|w| !(w[0] < w[1])) {
            problems.push("inflow breakpoints must be strictly increasing".to_string());
        }
        if starts.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            problems.push("inflow breakpoints must be finite and non-negative".to_string());
        }
        for v in &values {
            if v.len() != dim {
                return Err(FlowError::Structural("inflow vectors differ in length".into()));
            }
            if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                problems.push(format!("inflow value {bad} is negative or non-finite"));
            }
        }
        if !problems.is_empty() {
            return Err(FlowError::Validation(problems));
        }
        Ok(Self { starts, values })
    }

    /// Merges per-link schedules `(link, breakpoints, values)` into one signal over `dim` links.
    pub fn from_links(dim: usize, schedules: &[(usize, Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let mut problems = Vec::new();
        let mut starts = vec![0.0];
        for (link, bps, vals) in schedules {
            if *link >= dim {
                return Err(FlowError::Structural(format!("inflow on unknown link {link}")));
            }
            if bps.len() != vals.len() || bps.is_empty() {
                problems.push(format!(
                    "inflow on link {link} has {} breakpoints and {} values",
                    bps.len(),
                    vals.len()
                ));
                continue;
            }
            if bps.windows(2).any(|w| !(w[0] < w[1])) {
                problems.push(format!("inflow breakpoints on link {link} are not increasing"));
            }
            starts.extend(bps.iter().copied());
        }
        if !problems.is_empty() {
            return Err(FlowError::Validation(problems));
        }
        starts.sort_by(|a, b| a.total_cmp(b));
        starts.dedup();
        let values = starts
            .iter()
            .map(|&t| {
                let mut v = vec![0.0; dim];
                for (link, bps, vals) in schedules {
                    if let Some(k) = bps.iter().rposition(|&b| b <= t) {
                        v[*link] += vals[k];
                    }
                }
                v
            })
            .collect();
        Self::new(starts, values)
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.starts
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.starts.iter().copied().zip(self.values.iter().map(Vec::as_slice))
    }

    /// Inflow in force at time `t`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        match self.starts.iter().rposition(|&s| s <= t) {
            Some(k) => self.values[k].clone(),
            None => vec![0.0; self.dim()],
        }
    }

    /// Inflow over the step `[t, t + h)`, read at the step midpoint so that
    /// breakpoints lying on the grid are never straddled by rounding.
    pub fn over_step(&self, t: f64, h: f64) -> Vec<f64> {
        self.at(t + 0.5 * h)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(*v))
    }
}

/// Everything needed to integrate one network: routing, control law,
/// inflow, initial state and the sampling grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub routing: RoutingSpec,
    pub controller: Controller,
    pub inflow: InflowSignal,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
}

fn is_grid_multiple(t: f64, h: f64) -> bool {
    let r = t / h;
    (r - r.round()).abs() <= 1e-9 * r.abs().max(1.0)
}

impl Scenario {
    /// Validates the whole scenario and reports every problem at once.
    pub fn new(
        routing: RoutingSpec,
        controller: Controller,
        inflow: InflowSignal,
        x0: Vec<f64>,
        horizon: f64,
        step: f64,
    ) -> Result<Self> {
        let n = routing.num_links();
        let mut problems = validate_routing(&routing).messages();
        if x0.len() != n || inflow.dim() != n {
            return Err(FlowError::Structural(format!(
                "network has {n} links but initial state has {} and inflow has {} entries",
                x0.len(),
                inflow.dim()
            )));
        }
        let mut owned = controller.links();
        owned.sort_unstable();
        if owned != (0..n).collect::<Vec<_>>() {
            problems.push("controller must own every link exactly once".into());
        }
        for (i, v) in x0.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                problems.push(format!(
                    "initial volume on '{}' is {v}",
                    routing.graph().link_id(i)
                ));
            }
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            problems.push(format!("horizon must be positive, got {horizon}"));
        }
        if !(step > 0.0 && step.is_finite()) {
            problems.push(format!("step must be positive, got {step}"));
        } else {
            if horizon > 0.0 && !is_grid_multiple(horizon, step) {
                problems.push(format!("horizon {horizon} is not a multiple of step {step}"));
            }
            for &b in inflow.breakpoints() {
                if !is_grid_multiple(b, step) {
                    problems.push(format!("inflow breakpoint {b} is not on the grid of step {step}"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(FlowError::Validation(problems));
        }
        Ok(Self {
            routing,
            controller,
            inflow,
            x0,
            horizon,
            step,
        })
    }

    pub fn num_links(&self) -> usize {
        self.routing.num_links()
    }

    pub fn grid(&self) -> TimeGrid {
        let n = (self.horizon / self.step).round() as usize;
        TimeGrid::new(0.0, self.step, n.max(1)).expect("validated grid")
    }

    /// Same scenario sampled with a different step.
    pub fn with_step(&self, step: f64) -> Result<Self> {
        Self::new(
            self.routing.clone(),
            self.controller.clone(),
            self.inflow.clone(),
            self.x0.clone(),
            self.horizon,
            step,
        )
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(
            self.routing.clone(),
            self.controller.clone(),
            self.inflow.clone(),
            self.x0.clone(),
            horizon,
            self.step,
        )
    }

    /// `zeta([x]_+)`; the projection keeps the control law on its domain when
    /// iterates carry round-off below zero.
    pub fn control(&self, x: &[f64], out: &mut [f64]) {
        let clipped: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        self.controller.evaluate_into(&clipped, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol_picard: f64,
    pub tol_psi: f64,
    /// Target contraction constant of `Phi o Gamma` on one window.
    pub safety: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_picard: 1e-8,
            tol_psi: DEFAULT_PSI_TOL,
            safety: 0.5,
        }
    }
}

/// `y(t0) = x(t0)`, `y(t_{k+1}) = y(t_k) + h (lambda_k - (I - R^T) zeta(x(t_k)))`.
///
/// Left-endpoint rule, exact for inflows that are constant between grid points.
pub fn apply_gamma(x: &Trajectory, scenario: &Scenario) -> Result<Trajectory> {
    let n = scenario.num_links();
    if x.dim() != n {
        return Err(FlowError::Structural(format!(
            "state path has dimension {} for {n} links",
            x.dim()
        )));
    }
    let grid = *x.grid();
    let h = grid.step();
    let mut y = Trajectory::zeros(grid, n);
    y.row_mut(0).copy_from_slice(x.row(0));
    let mut zeta = vec![0.0; n];
    let mut drain = vec![0.0; n];
    for k in 0..grid.steps() {
        scenario.control(x.row(k), &mut zeta);
        scenario.routing.apply_i_minus_transpose(&zeta, &mut drain);
        let lambda = scenario.inflow.over_step(grid.time(k), h);
        let prev = y.row(k).to_vec();
        for (i, yi) in y.row_mut(k + 1).iter_mut().enumerate() {
            *yi = prev[i] + h * (lambda[i] - drain[i]);
        }
    }
    Ok(y)
}

/// Constants that size the contraction windows.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WindowSizing {
    /// Lipschitz constant of `zeta` in the weighted norm.
    pub lipschitz_zeta: f64,
    /// Per-unit-time Lipschitz constant of `Gamma`.
    pub varpi: f64,
    /// Lipschitz constant of `Phi`.
    pub phi: f64,
    pub safety: f64,
    /// Window length `safety / (varpi phi)`, or the horizon when `varpi = 0`.
    pub length: f64,
}

pub fn window_length(scenario: &Scenario, wn: &WeightedNorm, safety: f64) -> Result<WindowSizing> {
    let lz = scenario.controller.lipschitz(wn);
    if !lz.is_finite() {
        return Err(FlowError::Structural(format!(
            "controller Lipschitz constant is {lz}"
        )));
    }
    if !(safety > 0.0 && safety < 1.0) {
        return Err(FlowError::Structural(format!(
            "window safety factor must lie in (0, 1), got {safety}"
        )));
    }
    let rho = wn.contraction();
    let a = wn.i_minus_transpose_norm();
    let varpi = a * lz;
    let phi = 1.0 + a / (1.0 - rho);
    let length = if varpi == 0.0 {
        scenario.horizon
    } else {
        safety / (varpi * phi)
    };
    Ok(WindowSizing {
        lipschitz_zeta: lz,
        varpi,
        phi,
        safety,
        length,
    })
}

impl WindowSizing {
    /// Steps per window on a grid of step `h`.
    ///
    /// Paths on a window all start from the same state, so the discrete
    /// `Gamma` only sees `steps - 1` free samples and contracts with constant
    /// `varpi phi (steps - 1) h`. Choosing `steps - 1 <= length / h` keeps
    /// that constant at or below `safety` even when `length < h`.
    pub fn steps(&self, h: f64) -> usize {
        let free = (self.length / h + 1e-9).floor();
        if free >= (usize::MAX / 2) as f64 {
            usize::MAX / 2
        } else {
            free as usize + 1
        }
    }

    /// Contraction constant of `Phi o Gamma` on a window of `steps` steps.
    pub fn contraction(&self, steps: usize, h: f64) -> f64 {
        self.varpi * self.phi * (steps.saturating_sub(1)) as f64 * h
    }
}

/// Fixed point of `Phi o Gamma` on one window.
#[derive(Debug, Clone)]
pub struct WindowSolution {
    pub x: Trajectory,
    pub y: Trajectory,
    /// Regulator, zero at the window start.
    pub w: Trajectory,
    pub iterations: usize,
    pub residual: f64,
    pub contraction: f64,
    pub max_psi_iterations: usize,
}

/// Picard iteration `x <- Phi(Gamma(x))` on `steps` steps starting at `start`.
///
/// `guess` replaces the default constant initial iterate; its first sample is
/// overwritten by the window's initial state.
pub fn solve_window(
    scenario: &Scenario,
    wn: &WeightedNorm,
    sizing: &WindowSizing,
    cfg: &SolverConfig,
    start: &TimeGrid,
    x_init: &[f64],
    guess: Option<&Trajectory>,
) -> Result<WindowSolution> {
    let h = start.step();
    let contraction = sizing.contraction(start.steps(), h);
    if !(contraction < 1.0) {
        return Err(FlowError::Structural(format!(
            "window of {} steps is too long: contraction constant {contraction}",
            start.steps()
        )));
    }
    let mut x = match guess {
        Some(g) => {
            if g.grid() != start || g.dim() != x_init.len() {
                return Err(FlowError::Structural("initial guess does not match the window".into()));
            }
            g.clone()
        }
        None => Trajectory::constant(*start, x_init),
    };
    x.row_mut(0).copy_from_slice(x_init);

    let threshold = cfg.tol_picard * (1.0 - contraction) / contraction.max(f64::EPSILON);
    let cap = iteration_cap(cfg.tol_picard, contraction);
    let mut max_psi = 0;
    let mut dist = f64::INFINITY;
    for it in 1..=cap {
        let y = apply_gamma(&x, scenario)?;
        let refl = apply_phi(&y, &scenario.routing, wn, cfg.tol_psi)?;
        max_psi = max_psi.max(refl.regulator.iterations);
        dist = traj_distance(&refl.x, &x, wn);
        x = refl.x;
        if dist <= threshold {
            return Ok(WindowSolution {
                x,
                y,
                w: refl.regulator.w,
                iterations: it,
                residual: contraction * dist,
                contraction,
                max_psi_iterations: max_psi,
            });
        }
    }
    Err(FlowError::NonConvergence {
        what: "Picard iteration on Phi o Gamma",
        iterations: cap,
        residual: contraction * dist,
    })
}

/// Actual outflow `z = zeta(x) - dw/dt`, clipped into `[0, zeta(x)]`.
#[derive(Debug, Clone)]
pub struct Outflow {
    pub z: Trajectory,
    pub zeta: Trajectory,
    /// Largest amount by which the raw difference left `[0, zeta(x)]`.
    pub max_clamp: f64,
}

/// Recovers the outflow from the state and the cumulative regulator using a
/// forward difference for `dw/dt` (the last sample repeats the previous one).
pub fn recover_outflow(x: &Trajectory, w: &Trajectory, scenario: &Scenario) -> Result<Outflow> {
    if x.grid() != w.grid() || x.dim() != w.dim() {
        return Err(FlowError::Structural("state and regulator grids differ".into()));
    }
    let grid = *x.grid();
    let h = grid.step();
    let n = x.dim();
    let mut zeta = Trajectory::zeros(grid, n);
    let mut z = Trajectory::zeros(grid, n);
    let mut max_clamp: f64 = 0.0;
    for k in 0..grid.len() {
        scenario.control(x.row(k), zeta.row_mut(k));
        let kk = if k == grid.steps() { k - 1 } else { k };
        let (w0, w1) = (w.row(kk), w.row(kk + 1));
        let zeta_k = zeta.row(k).to_vec();
        for (i, zi) in z.row_mut(k).iter_mut().enumerate() {
            let raw = zeta_k[i] - (w1[i] - w0[i]) / h;
            let clipped = raw.clamp(0.0, zeta_k[i]);
            max_clamp = max_clamp.max((raw - clipped).abs());
            *zi = clipped;
        }
    }
    Ok(Outflow { z, zeta, max_clamp })
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowStat {
    pub start: f64,
    pub steps: usize,
    pub iterations: usize,
    pub residual: f64,
    pub contraction: f64,
    pub max_psi_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    /// Certified bound on the weighted norm of `R^T`.
    pub rho: f64,
    pub norm_weights: Vec<f64>,
    pub i_minus_rt_norm: f64,
    pub sizing: WindowSizing,
    pub window_steps: usize,
    pub tol_picard: f64,
    pub tol_psi: f64,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
    pub max_psi_iterations: usize,
    pub max_clamp: f64,
    pub windows: Vec<WindowStat>,
}

/// Full solution on the scenario grid. `w` is cumulative over windows and
/// `y = x - (I - R^T) w` is the unreflected path.
#[derive(Debug, Clone)]
pub struct Solution {
    pub grid: TimeGrid,
    pub x: Trajectory,
    pub y: Trajectory,
    pub w: Trajectory,
    pub z: Trajectory,
    pub zeta: Trajectory,
    pub report: SolveReport,
}

pub fn solve(scenario: &Scenario, cfg: &SolverConfig) -> Result<Solution> {
    solve_from_guess(scenario, cfg, None)
}

/// Like [`solve`], but seeds every window's Picard iteration with the
/// matching slice of `guess` (a path on the scenario grid).
pub fn solve_from_guess(
    scenario: &Scenario,
    cfg: &SolverConfig,
    guess: Option<&Trajectory>,
) -> Result<Solution> {
    let wn = build_weighted_norm(&scenario.routing)?;
    let sizing = window_length(scenario, &wn, cfg.safety)?;
    let grid = scenario.grid();
    let n = scenario.num_links();
    if let Some(g) = guess {
        if g.grid() != &grid || g.dim() != n {
            return Err(FlowError::Structural("initial guess is not on the scenario grid".into()));
        }
    }
    let h = grid.step();
    let window_steps = sizing.steps(h);

    let mut x = Trajectory::zeros(grid, n);
    let mut w = Trajectory::zeros(grid, n);
    x.row_mut(0).copy_from_slice(&scenario.x0);
    let mut windows = Vec::new();
    let mut k0 = 0;
    while k0 < grid.steps() {
        let m = window_steps.min(grid.steps() - k0);
        let local = grid.slice(k0, m)?;
        let g = guess.map(|g| g.window(k0, m)).transpose()?;
        let x_init = x.row(k0).to_vec();
        let sol = solve_window(scenario, &wn, &sizing, cfg, &local, &x_init, g.as_ref())?;
        let offset = w.row(k0).to_vec();
        for j in 1..=m {
            x.row_mut(k0 + j).copy_from_slice(sol.x.row(j));
            for (wi, (o, d)) in w.row_mut(k0 + j).iter_mut().zip(offset.iter().zip(sol.w.row(j))) {
                *wi = o + d;
            }
        }
        log::debug!(
            "window at t={:.4}: {} steps, {} iterations, residual {:e}",
            local.t0(),
            m,
            sol.iterations,
            sol.residual
        );
        windows.push(WindowStat {
            start: local.t0(),
            steps: m,
            iterations: sol.iterations,
            residual: sol.residual,
            contraction: sol.contraction,
            max_psi_iterations: sol.max_psi_iterations,
        });
        k0 += m;
    }

    let mut y = x.clone();
    let mut push = vec![0.0; n];
    for k in 0..grid.len() {
        scenario.routing.apply_i_minus_transpose(w.row(k), &mut push);
        for (yi, p) in y.row_mut(k).iter_mut().zip(&push) {
            *yi -= p;
        }
    }
    let outflow = recover_outflow(&x, &w, scenario)?;
    let report = SolveReport {
        rho: wn.contraction(),
        norm_weights: wn.weights().to_vec(),
        i_minus_rt_norm: wn.i_minus_transpose_norm(),
        sizing,
        window_steps,
        tol_picard: cfg.tol_picard,
        tol_psi: cfg.tol_psi,
        total_iterations: windows.iter().map(|s| s.iterations).sum(),
        max_iterations: windows.iter().map(|s| s.iterations).max().unwrap_or(0),
        max_residual: windows.iter().map(|s| s.residual).fold(0.0, f64::max),
        max_psi_iterations: windows.iter().map(|s| s.max_psi_iterations).max().unwrap_or(0),
        max_clamp: outflow.max_clamp,
        windows,
    };
    Ok(Solution {
        grid,
        x,
        y,
        w,
        z: outflow.z,
        zeta: outflow.zeta,
        report,
    })
}
