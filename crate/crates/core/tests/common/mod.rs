#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use flownet::controllers::{Controller, CtmCell, CtmControl, Demand, Supply};
use flownet::network::{check_out_connected, stranded_links, Multigraph, RoutingSpec};
use flownet::reflection::{TimeGrid, Trajectory};
use flownet::solver::{InflowSignal, Scenario};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn bundled(name: &str) -> PathBuf {
    scenario_dir().join(format!("{name}.scenario"))
}

pub const BUNDLED: [&str; 4] = [
    "single_cell_drain",
    "two_cell_chain",
    "signalized_pair",
    "signalized_pair_ctm",
];

/// Random multigraph with `links` links; every link gets distinct endpoints.
pub fn random_graph(rng: &mut StdRng, links: usize) -> Multigraph {
    let nodes = rng.gen_range(2..=4.min(links + 1).max(2));
    let names: Vec<String> = (0..nodes).map(|v| format!("n{v}")).collect();
    let mut triples = Vec::new();
    for i in 0..links {
        let tail = rng.gen_range(0..nodes);
        let mut head = rng.gen_range(0..nodes - 1);
        if head >= tail {
            head += 1;
        }
        triples.push((format!("l{i}"), names[tail].clone(), names[head].clone()));
    }
    Multigraph::new(&names, &triples).unwrap()
}

/// Random sub-stochastic routing consistent with the topology. Entries are at
/// least 0.1 and rows either sum to one or leave at least 0.05 to exit, so
/// leakage through powers of `R` stays far above round-off.
pub fn random_routing_matrix(rng: &mut StdRng, g: &Multigraph) -> DMatrix<f64> {
    let n = g.num_links();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let succ: Vec<usize> = (0..n).filter(|&j| g.adjacent(i, j)).collect();
        if succ.is_empty() || rng.gen_bool(0.15) {
            continue;
        }
        let k = rng.gen_range(1..=succ.len().min(3));
        let chosen: Vec<usize> = succ.choose_multiple(rng, k).copied().collect();
        let total = if rng.gen_bool(0.4) { 1.0 } else { rng.gen_range(0.2..0.95) };
        let raw: Vec<f64> = chosen.iter().map(|_| rng.gen_range(1.0..3.0)).collect();
        let s: f64 = raw.iter().sum();
        let mut acc = 0.0;
        for (idx, (&j, r)) in chosen.iter().zip(&raw).enumerate() {
            let v = if idx + 1 == chosen.len() { total - acc } else { total * r / s };
            m[(i, j)] = v;
            acc += v;
        }
        if m.row(i).iter().any(|&v| v > 0.0 && v < 0.1) {
            m.row_mut(i).fill(0.0);
            m[(i, chosen[0])] = total.max(0.1);
        }
    }
    m
}

/// Random routing that is out-connected.
pub fn random_routing(rng: &mut StdRng, links: usize) -> RoutingSpec {
    let g = random_graph(rng, links);
    let mut m = random_routing_matrix(rng, &g);
    let spec = RoutingSpec::new(g.clone(), m.clone(), 1e-12).unwrap();
    for i in stranded_links(&spec) {
        let s: f64 = m.row(i).sum();
        if s > 0.0 {
            m.row_mut(i).scale_mut(0.8 / s);
        }
    }
    let spec = RoutingSpec::new(g, m, 1e-12).unwrap();
    assert!(check_out_connected(&spec));
    spec
}

fn random_demand(rng: &mut StdRng) -> Demand {
    if rng.gen_bool(0.6) {
        Demand::Linear { slope: rng.gen_range(0.3..2.0) }
    } else {
        Demand::Saturating { capacity: rng.gen_range(0.3..1.5), kappa: rng.gen_range(0.1..1.0) }
    }
}

fn random_supply(rng: &mut StdRng) -> Supply {
    if rng.gen_bool(0.7) {
        Supply::Linear { capacity: rng.gen_range(0.5..2.0), slope: rng.gen_range(0.2..1.5) }
    } else {
        Supply::Constant { value: rng.gen_range(0.2..1.5) }
    }
}

/// Random mix of proportional-allocation junctions, road cells and constant caps owning every link.
pub fn random_controller(rng: &mut StdRng, routing: &RoutingSpec) -> Controller {
    let g = routing.graph();
    let n = g.num_links();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut owned = vec![false; n];
    let mut parts = Vec::new();
    let mut constants = (Vec::new(), Vec::new());
    for &i in &order {
        if owned[i] {
            continue;
        }
        let roll: f64 = rng.gen();
        let same_head: Vec<usize> = (0..n)
            .filter(|&j| !owned[j] && g.links()[j].head == g.links()[i].head)
            .collect();
        let succ: Vec<usize> = (0..n).filter(|&j| g.adjacent(i, j)).collect();
        if roll < 0.35 && same_head.len() >= 2 {
            let mut others: Vec<usize> = same_head.into_iter().filter(|&j| j != i).collect();
            others.shuffle(rng);
            let mut members = vec![i];
            members.extend(others.into_iter().take(3));
            members.shuffle(rng);
            let cut = rng.gen_range(1..=members.len());
            let mut phases = vec![members[..cut].to_vec()];
            if cut < members.len() {
                phases.push(members[cut..].to_vec());
            }
            for &j in &members {
                owned[j] = true;
            }
            parts.push(Controller::gpa(phases, rng.gen_range(0.1..0.6)).unwrap());
        } else if roll < 0.7 && !succ.is_empty() {
            let downstream = *succ.choose(rng).unwrap();
            let mut supplies = BTreeMap::new();
            supplies.insert(downstream, random_supply(rng));
            let cell = CtmCell { link: i, downstream, demand: random_demand(rng) };
            owned[i] = true;
            parts.push(Controller::ctm(CtmControl::new(vec![cell], supplies).unwrap()));
        } else {
            owned[i] = true;
            constants.0.push(i);
            constants.1.push(rng.gen_range(0.0..1.5));
        }
    }
    if !constants.0.is_empty() {
        parts.push(Controller::constant(constants.0, constants.1).unwrap());
    }
    Controller::compose(parts, n).unwrap()
}

/// Random inflow with one or two segments; the second starts on a whole time unit.
pub fn random_inflow(rng: &mut StdRng, n: usize, horizon: f64) -> InflowSignal {
    let draw = |rng: &mut StdRng| -> Vec<f64> {
        (0..n)
            .map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..0.5) } else { 0.0 })
            .collect()
    };
    let first = draw(rng);
    if rng.gen_bool(0.5) && horizon >= 2.0 {
        let at = rng.gen_range(1..horizon as usize) as f64;
        let second = draw(rng);
        InflowSignal::new(vec![0.0, at], vec![first, second]).unwrap()
    } else {
        InflowSignal::constant(first).unwrap()
    }
}

pub fn random_scenario(rng: &mut StdRng, horizon: f64, step: f64) -> Scenario {
    let links = rng.gen_range(1..=8);
    let routing = random_routing(rng, links);
    let controller = random_controller(rng, &routing);
    let inflow = random_inflow(rng, links, horizon);
    let x0 = (0..links)
        .map(|_| if rng.gen_bool(0.7) { rng.gen_range(0.0..1.0) } else { 0.0 })
        .collect();
    Scenario::new(routing, controller, inflow, x0, horizon, step).unwrap()
}

/// Random path with entries in `[lo, hi]`, mixing smooth and jagged samples.
pub fn random_path(rng: &mut StdRng, grid: TimeGrid, dim: usize, lo: f64, hi: f64) -> Trajectory {
    let freq: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..6.0)).collect();
    let phase: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..6.3)).collect();
    let jag = rng.gen_range(0.0..0.5);
    let mut data = Vec::with_capacity(grid.len() * dim);
    for k in 0..grid.len() {
        let t = grid.time(k);
        for i in 0..dim {
            let s = 0.5 + 0.5 * (freq[i] * t + phase[i]).sin();
            let noise: f64 = rng.gen_range(-jag..=jag);
            data.push((lo + (hi - lo) * (s + noise)).clamp(lo, hi));
        }
    }
    Trajectory::from_data(grid, dim, data).unwrap()
}
