//! Feedback control laws `zeta: X -> R_+^E` that cap the outflow of each link.
//!
//! A controller reads the whole state vector but only writes the entries of
//! the links it owns. Full-network controllers are built with
//! [`Controller::compose`], which checks that the components own disjoint
//! link sets covering every link.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{FlowError, Result};
use crate::network::WeightedNorm;

/// Outflow demand of a road cell as a function of its own volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Demand {
    /// `d(x) = slope * x`
    Linear { slope: f64 },
    /// `d(x) = capacity * x / (x + kappa)`, a one-link proportional allocation.
    Saturating { capacity: f64, kappa: f64 },
}

impl Demand {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Demand::Linear { slope } => slope * x,
            Demand::Saturating { capacity, kappa } => capacity * x / (x + kappa),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Demand::Linear { slope } => slope,
            Demand::Saturating { capacity, kappa } => capacity / kappa,
        }
    }

    fn check(&self) -> Option<String> {
        match *self {
            Demand::Linear { slope } if !(slope > 0.0 && slope.is_finite()) => {
                Some(format!("linear demand slope must be positive, got {slope}"))
            }
            Demand::Saturating { capacity, kappa }
                if !(capacity > 0.0 && kappa > 0.0 && capacity.is_finite() && kappa.is_finite()) =>
            {
                Some(format!(
                    "saturating demand needs capacity > 0 and kappa > 0, got {capacity}, {kappa}"
                ))
            }
            _ => None,
        }
    }
}

/// Receiving capacity of a road cell as a function of its own volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Supply {
    /// `s(x) = max(capacity - slope * x, 0)`
    Linear { capacity: f64, slope: f64 },
    Constant { value: f64 },
}

impl Supply {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Supply::Linear { capacity, slope } => (capacity - slope * x).max(0.0),
            Supply::Constant { value } => value,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Supply::Linear { slope, .. } => slope,
            Supply::Constant { .. } => 0.0,
        }
    }

    fn check(&self) -> Option<String> {
        let ok = match *self {
            Supply::Linear { capacity, slope } => {
                capacity >= 0.0 && slope >= 0.0 && capacity.is_finite() && slope.is_finite()
            }
            Supply::Constant { value } => value >= 0.0 && value.is_finite(),
        };
        (!ok).then(|| format!("supply parameters must be finite and non-negative: {self:?}"))
    }
}

/// Constant caps, independent of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantControl {
    pub links: Vec<usize>,
    pub values: Vec<f64>,
}

/// One signalized junction under generalized proportional allocation: every
/// link of phase `p` gets the share `sum_{j in p} x_j / (sum_{j in J} x_j + kappa)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpaJunction {
    pub phases: Vec<Vec<usize>>,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmCell {
    pub link: usize,
    pub downstream: usize,
    pub demand: Demand,
}

/// Cell-transmission outflows `zeta_i = min(d_i(x_i), s_j(x_j))` where `j` is
/// the configured downstream link of `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmControl {
    cells: Vec<CtmCell>,
    supplies: BTreeMap<usize, Supply>,
}

impl CtmControl {
    pub fn new(cells: Vec<CtmCell>, supplies: BTreeMap<usize, Supply>) -> Result<Self> {
        let mut problems = Vec::new();
        for c in &cells {
            if !supplies.contains_key(&c.downstream) {
                problems.push(format!(
                    "cell {} routes to downstream link {} which has no supply function",
                    c.link, c.downstream
                ));
            }
            if c.link == c.downstream {
                problems.push(format!("cell {} is its own downstream link", c.link));
            }
            problems.extend(c.demand.check());
        }
        problems.extend(supplies.values().filter_map(Supply::check));
        if !problems.is_empty() {
            return Err(FlowError::Structural(problems.join("; ")));
        }
        Ok(Self { cells, supplies })
    }

    pub fn cells(&self) -> &[CtmCell] {
        &self.cells
    }

    pub fn supplies(&self) -> &BTreeMap<usize, Supply> {
        &self.supplies
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    Constant(ConstantControl),
    Gpa(GpaJunction),
    Ctm(CtmControl),
    Composite(Vec<Controller>),
}

impl Controller {
    pub fn constant(links: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if links.len() != values.len() {
            return Err(FlowError::Structural(format!(
                "constant controller has {} links but {} values",
                links.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(FlowError::Structural(format!(
                "constant control values must be finite and non-negative, got {v}"
            )));
        }
        Ok(Controller::Constant(ConstantControl { links, values }))
    }

    pub fn gpa(phases: Vec<Vec<usize>>, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(FlowError::Structural(format!(
                "GPA overhead constant must be positive, got {kappa}"
            )));
        }
        if phases.is_empty() || phases.iter().any(|p| p.is_empty()) {
            return Err(FlowError::Structural("GPA phases must be non-empty".into()));
        }
        let mut seen: Vec<usize> = phases.iter().flatten().copied().collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(FlowError::Structural(
                "a link appears in more than one GPA phase".into(),
            ));
        }
        Ok(Controller::Gpa(GpaJunction { phases, kappa }))
    }

    pub fn ctm(ctm: CtmControl) -> Self {
        Controller::Ctm(ctm)
    }

    /// Joins controllers over disjoint link sets into one controller over all
    /// `num_links` links.
    pub fn compose(components: Vec<Controller>, num_links: usize) -> Result<Self> {
        let mut owner: Vec<Option<usize>> = vec![None; num_links];
        let mut problems = Vec::new();
        for (c, comp) in components.iter().enumerate() {
            for i in comp.links() {
                match owner.get_mut(i) {
                    None => problems.push(format!("component {c} controls unknown link {i}")),
                    Some(Some(prev)) => problems.push(format!(
                        "link {i} is controlled by components {prev} and {c}"
                    )),
                    Some(slot) => *slot = Some(c),
                }
            }
        }
        let gaps: Vec<String> = owner
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_none())
            .map(|(i, _)| i.to_string())
            .collect();
        if !gaps.is_empty() {
            problems.push(format!("links [{}] have no controller", gaps.join(", ")));
        }
        if !problems.is_empty() {
            return Err(FlowError::Structural(problems.join("; ")));
        }
        Ok(if components.len() == 1 {
            components.into_iter().next().unwrap()
        } else {
            Controller::Composite(components)
        })
    }

    /// Links written by this controller, in evaluation order.
    pub fn links(&self) -> Vec<usize> {
        match self {
            Controller::Constant(c) => c.links.clone(),
            Controller::Gpa(g) => g.phases.iter().flatten().copied().collect(),
            Controller::Ctm(c) => c.cells.iter().map(|cell| cell.link).collect(),
            Controller::Composite(parts) => parts.iter().flat_map(Controller::links).collect(),
        }
    }

    /// Writes `zeta(x)` into the entries of `out` owned by this controller.
    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Controller::Constant(c) => {
                for (&i, &v) in c.links.iter().zip(&c.values) {
                    out[i] = v;
                }
            }
            Controller::Gpa(g) => {
                let total: f64 = g.phases.iter().flatten().map(|&j| x[j]).sum();
                let denom = total + g.kappa;
                for phase in &g.phases {
                    let share = phase.iter().map(|&j| x[j]).sum::<f64>() / denom;
                    for &i in phase {
                        out[i] = share;
                    }
                }
            }
            Controller::Ctm(c) => {
                for cell in &c.cells {
                    let supply = c.supplies[&cell.downstream].value(x[cell.downstream]);
                    out[cell.link] = cell.demand.value(x[cell.link]).min(supply);
                }
            }
            Controller::Composite(parts) => {
                for p in parts {
                    p.evaluate_into(x, out);
                }
            }
        }
    }

    /// Full control vector. Entries not owned by the controller are zero.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.evaluate_into(x, &mut out);
        out
    }

    /// Declared Lipschitz constant of `zeta` in the weighted max-norm:
    /// `|zeta(x) - zeta(x')| <= L |x - x'|` for all `x, x' >= 0`.
    pub fn lipschitz(&self, norm: &WeightedNorm) -> f64 {
        self.lipschitz_with_weights(norm.weights())
    }

    /// Same bound for the plain max-norm.
    pub fn lipschitz_uniform(&self, num_links: usize) -> f64 {
        self.lipschitz_with_weights(&vec![1.0; num_links])
    }

    /// Every law is bounded through per-row sensitivity sums
    /// `sum_j sup|d zeta_i / d x_j| u_j / u_i`.
    pub fn lipschitz_with_weights(&self, u: &[f64]) -> f64 {
        match self {
            Controller::Constant(_) => 0.0,
            Controller::Gpa(g) => {
                // sum_j |d zeta_i/d x_j| = (|p|(Q + k) + |q| P)/(S + k)^2 <= max(|p|, |q|)/k
                let size: usize = g.phases.iter().map(Vec::len).sum();
                let u_max = g.phases.iter().flatten().map(|&j| u[j]).fold(0.0, f64::max);
                g.phases
                    .iter()
                    .flat_map(|p| {
                        let spread = p.len().max(size - p.len()) as f64 / g.kappa;
                        p.iter().map(move |&i| spread * u_max / u[i])
                    })
                    .fold(0.0, f64::max)
            }
            Controller::Ctm(c) => c
                .cells
                .iter()
                .map(|cell| {
                    let s = c.supplies[&cell.downstream].lipschitz();
                    cell.demand
                        .lipschitz()
                        .max(s * u[cell.downstream] / u[cell.link])
                })
                .fold(0.0, f64::max),
            Controller::Composite(parts) => parts
                .iter()
                .map(|p| p.lipschitz_with_weights(u))
                .fold(0.0, f64::max),
        }
    }
}

/// Empirical Lipschitz ratio of `ctrl` over `samples` random states drawn
/// uniformly from the box `[lo, hi]^E`.
///
/// Each sample is compared with the previous sample and with a close
/// perturbation of itself, so both global and local slopes are probed. Meant
/// as a sanity check on [`Controller::lipschitz`], never as a replacement.
pub fn estimate_lipschitz(
    ctrl: &Controller,
    norm: &WeightedNorm,
    lo: f64,
    hi: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let n = norm.dim();
    let mut rng = StdRng::seed_from_u64(seed);
    let width = hi - lo;
    let draw = |rng: &mut StdRng| -> Vec<f64> { (0..n).map(|_| lo + width * rng.gen::<f64>()).collect() };
    let ratio = |a: &[f64], b: &[f64]| -> f64 {
        let dx: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        let den = norm.norm(&dx);
        if den == 0.0 {
            return 0.0;
        }
        let za = ctrl.evaluate(a);
        let zb = ctrl.evaluate(b);
        let dz: Vec<f64> = za.iter().zip(&zb).map(|(p, q)| p - q).collect();
        norm.norm(&dz) / den
    };
    let mut best: f64 = 0.0;
    let mut prev: Option<Vec<f64>> = None;
    for _ in 0..samples {
        let x = draw(&mut rng);
        let near: Vec<f64> = x
            .iter()
            .map(|v| (v + 1e-4 * width * (rng.gen::<f64>() - 0.5)).max(lo))
            .collect();
        best = best.max(ratio(&x, &near));
        if let Some(p) = &prev {
            best = best.max(ratio(&x, p));
        }
        prev = Some(x);
    }
    best
}
