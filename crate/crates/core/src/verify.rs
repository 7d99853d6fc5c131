//! Discrete checks of the solution conditions: non-negativity, flow bounds,
//! complementarity, mass balance and regulator behaviour.

use serde::Serialize;

use crate::error::{FlowError, Result};
use crate::reflection::Trajectory;
use crate::solver::{Scenario, Solution};

/// Outcome of one invariant check. `worst` is the largest violation measure
/// found (zero or negative when comfortably satisfied).
#[derive(Debug, Clone, Serialize)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    /// `(sample, link)` where `worst` was attained, if any.
    pub at: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantReport {
    pub epsilon: f64,
    pub checks: Vec<InvariantCheck>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| {
                let at = c
                    .at
                    .map(|(k, i)| format!(" at sample {k}, link {i}"))
                    .unwrap_or_default();
                format!("{}: {:e} exceeds {:e}{at}", c.name, c.worst, c.tolerance)
            })
            .collect()
    }

    pub fn check(&self, name: &str) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Worst {
    value: f64,
    at: Option<(usize, usize)>,
}

impl Worst {
    fn new() -> Self {
        Self { value: f64::NEG_INFINITY, at: None }
    }

    fn see(&mut self, v: f64, k: usize, i: usize) {
        if v > self.value || v.is_nan() {
            self.value = v;
            self.at = Some((k, i));
        }
    }

    fn finish(self, name: &'static str, tolerance: f64) -> InvariantCheck {
        let worst = if self.value == f64::NEG_INFINITY { 0.0 } else { self.value };
        InvariantCheck {
            name,
            passed: worst <= tolerance,
            worst,
            tolerance,
            at: self.at,
        }
    }
}

/// Checks a discrete trajectory `(x, z, zeta, w)` against the solution
/// conditions with slack `eps`. Inflow and routing are taken from
/// `scenario`; the time grid from the trajectories themselves, so paths on a
/// refined grid can be checked too.
pub fn check_invariants(
    scenario: &Scenario,
    x: &Trajectory,
    z: &Trajectory,
    zeta: &Trajectory,
    w: &Trajectory,
    eps: f64,
) -> Result<InvariantReport> {
    let n = scenario.num_links();
    let grid = *x.grid();
    for t in [z, zeta, w] {
        if t.grid() != &grid || t.dim() != n {
            return Err(FlowError::Structural("trajectories to check do not share a grid".into()));
        }
    }
    if x.dim() != n {
        return Err(FlowError::Structural("state dimension differs from link count".into()));
    }
    let h = grid.step();

    let mut nonneg = Worst::new();
    let mut bounds = Worst::new();
    let mut comp = Worst::new();
    let mut mass = Worst::new();
    let mut mono = Worst::new();
    let mut start = Worst::new();
    let mut boundary = Worst::new();

    let mut integral = scenario.x0.clone();
    let mut drain = vec![0.0; n];
    for k in 0..grid.len() {
        let (xk, zk, ck) = (x.row(k), z.row(k), zeta.row(k));
        let scale = 1.0 + xk.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut gap = 0.0;
        for i in 0..n {
            nonneg.see(-xk[i], k, i);
            bounds.see((-zk[i]).max(zk[i] - ck[i]), k, i);
            gap += xk[i] * (ck[i] - zk[i]);
            mass.see((xk[i] - integral[i]).abs(), k, i);
        }
        comp.see(gap / scale, k, 0);
        if k < grid.steps() {
            let lambda = scenario.inflow.over_step(grid.time(k), h);
            scenario.routing.apply_i_minus_transpose(zk, &mut drain);
            for i in 0..n {
                integral[i] += h * (lambda[i] - drain[i]);
                let dw = w.row(k + 1)[i] - w.row(k)[i];
                mono.see(-dw, k, i);
                if dw > 1e-9 {
                    let x_here = xk[i].min(x.row(k + 1)[i]);
                    boundary.see(x_here, k, i);
                }
            }
        }
    }
    for (i, v) in w.row(0).iter().enumerate() {
        start.see(v.abs(), 0, i);
    }

    Ok(InvariantReport {
        epsilon: eps,
        checks: vec![
            nonneg.finish("non_negativity", eps),
            bounds.finish("flow_bounds", eps),
            comp.finish("complementarity", eps),
            mass.finish("mass_balance", eps),
            mono.finish("regulator_monotone", 0.0),
            start.finish("regulator_starts_at_zero", 0.0),
            boundary.finish("regulator_only_on_boundary", eps),
        ],
    })
}

pub fn check_solution(scenario: &Scenario, sol: &Solution, eps: f64) -> Result<InvariantReport> {
    check_invariants(scenario, &sol.x, &sol.z, &sol.zeta, &sol.w, eps)
}
