//! Network topology, routing matrices and the weighted norm that makes the
//! transposed routing matrix a strict contraction.
//!
//! Links are the state carriers: link `i` holds volume `x_i`, and a fraction
//! `R[i][j]` of its outflow is handed to link `j`. The remainder of each row
//! leaves the network.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{FlowError, Result};

/// Default slack on row sums, so decimal turn fractions summing to one are accepted.
pub const DEFAULT_ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub tail: usize,
    pub head: usize,
}

/// A directed multigraph with named nodes and links. Parallel links are allowed,
/// self-loops are not.
#[derive(Debug, Clone, PartialEq)]
pub struct Multigraph {
    nodes: Vec<String>,
    links: Vec<Link>,
    link_index: HashMap<String, usize>,
}

impl Multigraph {
    /// Builds the graph from node ids and `(link id, tail node, head node)` triples.
    pub fn new<S: AsRef<str>>(nodes: &[S], links: &[(S, S, S)]) -> Result<Self> {
        let mut problems = Vec::new();
        let mut node_index = HashMap::new();
        for (k, n) in nodes.iter().enumerate() {
            if node_index.insert(n.as_ref().to_string(), k).is_some() {
                problems.push(format!("duplicate node id '{}'", n.as_ref()));
            }
        }
        let mut built = Vec::with_capacity(links.len());
        let mut link_index = HashMap::new();
        for (id, tail, head) in links {
            let (id, tail, head) = (id.as_ref(), tail.as_ref(), head.as_ref());
            if link_index.insert(id.to_string(), built.len()).is_some() {
                problems.push(format!("duplicate link id '{id}'"));
            }
            let t = node_index.get(tail).copied();
            let h = node_index.get(head).copied();
            if t.is_none() {
                problems.push(format!("link '{id}' has unknown tail node '{tail}'"));
            }
            if h.is_none() {
                problems.push(format!("link '{id}' has unknown head node '{head}'"));
            }
            if tail == head {
                problems.push(format!("link '{id}' is a self-loop at node '{tail}'"));
            }
            built.push(Link {
                id: id.to_string(),
                tail: t.unwrap_or(usize::MAX),
                head: h.unwrap_or(usize::MAX),
            });
        }
        if !problems.is_empty() {
            return Err(FlowError::Validation(problems));
        }
        Ok(Self {
            nodes: nodes.iter().map(|n| n.as_ref().to_string()).collect(),
            links: built,
            link_index,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn link_id(&self, i: usize) -> &str {
        &self.links[i].id
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    /// True when the head of link `i` is the tail of link `j`.
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.links[i].head == self.links[j].tail
    }
}

/// A topology together with its routing matrix.
///
/// Construction only checks shapes. The standing assumptions (non-negativity,
/// sub-stochastic rows, topology consistency, out-connectedness) are reported
/// by [`validate_routing`].
#[derive(Debug, Clone)]
pub struct RoutingSpec {
    graph: Multigraph,
    matrix: DMatrix<f64>,
    row_sum_tolerance: f64,
    // predecessors[i] = [(j, R_ji)] with R_ji != 0, used for R^T v.
    predecessors: Vec<Vec<(usize, f64)>>,
}

impl RoutingSpec {
    pub fn new(graph: Multigraph, matrix: DMatrix<f64>, row_sum_tolerance: f64) -> Result<Self> {
        let n = graph.num_links();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(FlowError::Structural(format!(
                "routing matrix is {}x{} but the graph has {n} links",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !(row_sum_tolerance >= 0.0 && row_sum_tolerance.is_finite()) {
            return Err(FlowError::Structural(format!(
                "row sum tolerance must be finite and non-negative, got {row_sum_tolerance}"
            )));
        }
        let mut predecessors = vec![Vec::new(); n];
        for j in 0..n {
            for (i, preds) in predecessors.iter_mut().enumerate() {
                let r = matrix[(j, i)];
                if r != 0.0 {
                    preds.push((j, r));
                }
            }
        }
        Ok(Self {
            graph,
            matrix,
            row_sum_tolerance,
            predecessors,
        })
    }

    /// Builds `R` from `(from link, to link, fraction)` triples. Repeated pairs accumulate.
    pub fn from_fractions<S: AsRef<str>>(
        graph: Multigraph,
        fractions: &[(S, S, f64)],
        row_sum_tolerance: f64,
    ) -> Result<Self> {
        let n = graph.num_links();
        let mut m = DMatrix::zeros(n, n);
        let mut unknown = Vec::new();
        for (from, to, f) in fractions {
            match (graph.link_index(from.as_ref()), graph.link_index(to.as_ref())) {
                (Some(i), Some(j)) => m[(i, j)] += *f,
                (a, b) => {
                    if a.is_none() {
                        unknown.push(format!("routing references unknown link '{}'", from.as_ref()));
                    }
                    if b.is_none() {
                        unknown.push(format!("routing references unknown link '{}'", to.as_ref()));
                    }
                }
            }
        }
        if !unknown.is_empty() {
            return Err(FlowError::Validation(unknown));
        }
        Self::new(graph, m, row_sum_tolerance)
    }

    pub fn graph(&self) -> &Multigraph {
        &self.graph
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn num_links(&self) -> usize {
        self.graph.num_links()
    }

    pub fn row_sum_tolerance(&self) -> f64 {
        self.row_sum_tolerance
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.matrix.row(i).sum()
    }

    /// `out = R^T v`.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        for (o, preds) in out.iter_mut().zip(&self.predecessors) {
            *o = preds.iter().map(|&(j, r)| r * v[j]).sum();
        }
    }

    /// `out = (I - R^T) v`.
    pub fn apply_i_minus_transpose(&self, v: &[f64], out: &mut [f64]) {
        for (i, (o, preds)) in out.iter_mut().zip(&self.predecessors).enumerate() {
            *o = v[i] - preds.iter().map(|&(j, r)| r * v[j]).sum::<f64>();
        }
    }

    /// Non-zero entries of column `i` of `R`, i.e. the links feeding link `i`.
    pub fn predecessors(&self, i: usize) -> &[(usize, f64)] {
        &self.predecessors[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeEntry { from: String, to: String, value: f64 },
    RowSumExceeded { link: String, sum: f64 },
    TopologyMismatch { from: String, to: String, value: f64 },
    NotOutConnected { links: Vec<String> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeEntry { from, to, value } => {
                write!(f, "negative routing fraction {value} from '{from}' to '{to}'")
            }
            Violation::RowSumExceeded { link, sum } => {
                write!(f, "routing fractions out of '{link}' sum to {sum} > 1")
            }
            Violation::TopologyMismatch { from, to, value } => write!(
                f,
                "routing fraction {value} from '{from}' to '{to}', but the head of '{from}' is not the tail of '{to}'"
            ),
            Violation::NotOutConnected { links } => write!(
                f,
                "links [{}] cannot reach any link whose outflow partly leaves the network",
                links.join(", ")
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(FlowError::Validation(self.messages()))
        }
    }
}

/// Checks every standing assumption on the routing matrix.
pub fn validate_routing(spec: &RoutingSpec) -> ValidityReport {
    let g = spec.graph();
    let m = spec.matrix();
    let n = spec.num_links();
    let mut violations = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let r = m[(i, j)];
            if r < 0.0 || r.is_nan() {
                violations.push(Violation::NegativeEntry {
                    from: g.link_id(i).into(),
                    to: g.link_id(j).into(),
                    value: r,
                });
            }
            if r != 0.0 && !g.adjacent(i, j) {
                violations.push(Violation::TopologyMismatch {
                    from: g.link_id(i).into(),
                    to: g.link_id(j).into(),
                    value: r,
                });
            }
        }
        let sum = spec.row_sum(i);
        if !(sum <= 1.0 + spec.row_sum_tolerance()) {
            violations.push(Violation::RowSumExceeded {
                link: g.link_id(i).into(),
                sum,
            });
        }
    }
    let stranded = stranded_links(spec);
    if !stranded.is_empty() {
        violations.push(Violation::NotOutConnected {
            links: stranded.iter().map(|&i| g.link_id(i).to_string()).collect(),
        });
    }
    ValidityReport { violations }
}

/// Links that cannot reach a deficient row through positive routing entries.
///
/// Reverse breadth-first search from the deficient rows on the support graph of `R`.
pub fn stranded_links(spec: &RoutingSpec) -> Vec<usize> {
    let n = spec.num_links();
    let tol = spec.row_sum_tolerance();
    let mut reached = vec![false; n];
    let mut queue = VecDeque::new();
    for (i, r) in reached.iter_mut().enumerate() {
        if spec.row_sum(i) < 1.0 - tol {
            *r = true;
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        for &(i, r) in spec.predecessors(j) {
            if r > 0.0 && !reached[i] {
                reached[i] = true;
                queue.push_back(i);
            }
        }
    }
    (0..n).filter(|&i| !reached[i]).collect()
}

pub fn check_out_connected(spec: &RoutingSpec) -> bool {
    stranded_links(spec).is_empty()
}

/// A weighted max-norm `|v| = max_i |v_i| / u_i` under which `R^T` contracts.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNorm {
    weights: Vec<f64>,
    contraction: f64,
    i_minus_rt: f64,
}

impl WeightedNorm {
    /// Wraps arbitrary positive weights and computes the induced norms of `R^T`
    /// and `I - R^T` for them. No certificate is implied by this constructor.
    pub fn from_weights(spec: &RoutingSpec, weights: Vec<f64>) -> Result<Self> {
        let n = spec.num_links();
        if weights.len() != n {
            return Err(FlowError::Structural(format!(
                "{} weights for {n} links",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(FlowError::Structural(format!(
                "norm weights must be positive and finite, found {w}"
            )));
        }
        let mut contraction: f64 = 0.0;
        let mut i_minus_rt: f64 = 0.0;
        for i in 0..n {
            let mut rt_row = 0.0;
            let mut diag = 1.0;
            for &(j, r) in spec.predecessors(i) {
                rt_row += r.abs() * weights[j];
                if j == i {
                    diag -= r;
                }
            }
            let self_r = (1.0 - diag).abs() * weights[i];
            contraction = contraction.max(rt_row / weights[i]);
            i_minus_rt = i_minus_rt.max(diag.abs() + (rt_row - self_r) / weights[i]);
        }
        // a few ulps of headroom so the row inequalities hold after rounding
        let pad = 1.0 + 8.0 * f64::EPSILON;
        Ok(Self {
            weights,
            contraction: contraction * pad,
            i_minus_rt: i_minus_rt * pad,
        })
    }

    /// Uniform weights (plain max-norm).
    pub fn uniform(spec: &RoutingSpec) -> Result<Self> {
        Self::from_weights(spec, vec![1.0; spec.num_links()])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Certified upper bound on the induced norm of `R^T`.
    pub fn contraction(&self) -> f64 {
        self.contraction
    }

    /// Upper bound on the induced norm of `I - R^T`.
    pub fn i_minus_transpose_norm(&self) -> f64 {
        self.i_minus_rt
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.weights)
            .fold(0.0, |acc, (x, u)| acc.max(x.abs() / u))
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

/// Builds the certified norm from `u = (I - R^T)^{-1} 1`.
///
/// Then `R^T u = u - 1 <= (1 - 1/max u) u` row by row, so the weighted
/// max-norm with weights `u` gives `|R^T| <= 1 - 1 / max u < 1`.
pub fn build_weighted_norm(spec: &RoutingSpec) -> Result<WeightedNorm> {
    let n = spec.num_links();
    if n == 0 {
        return Err(FlowError::Structural("network has no links".into()));
    }
    let a = DMatrix::identity(n, n) - spec.matrix().transpose();
    let ones = DVector::from_element(n, 1.0);
    let u = a.lu().solve(&ones).ok_or(FlowError::NotCertified {
        bound: f64::INFINITY,
    })?;
    if u.iter().any(|x| !x.is_finite() || *x < 1.0 - 1e-9) {
        let worst = u.iter().cloned().fold(f64::NAN, f64::min);
        return Err(FlowError::NotCertified { bound: worst });
    }
    let norm = WeightedNorm::from_weights(spec, u.iter().map(|x| x.max(1.0)).collect())?;
    if !(norm.contraction() < 1.0) {
        return Err(FlowError::NotCertified {
            bound: norm.contraction(),
        });
    }
    Ok(norm)
}

/// Equilibrium outflows `a` solving `(I - R^T) a = lambda`.
pub fn equilibrium_outflow(spec: &RoutingSpec, lambda: &[f64]) -> Result<Vec<f64>> {
    let n = spec.num_links();
    if lambda.len() != n {
        return Err(FlowError::Structural(format!(
            "inflow vector has {} entries for {n} links",
            lambda.len()
        )));
    }
    let a = DMatrix::identity(n, n) - spec.matrix().transpose();
    let rhs = DVector::from_column_slice(lambda);
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| FlowError::Singular("I - R^T is not invertible".into()))?;
    let scale = lambda.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut out = Vec::with_capacity(n);
    for x in sol.iter() {
        if !x.is_finite() || *x < -1e-12 * scale {
            return Err(FlowError::Singular(format!(
                "equilibrium has entry {x}; routing is not out-connected"
            )));
        }
        out.push(x.max(0.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_link_chain() -> Multigraph {
        Multigraph::new(&["a", "b", "c"], &[("e1", "a", "b"), ("e2", "b", "c")]).unwrap()
    }

    fn two_link_cycle() -> Multigraph {
        Multigraph::new(&["a", "b"], &[("e1", "a", "b"), ("e2", "b", "a")]).unwrap()
    }

    fn spec(g: Multigraph, rows: &[&[f64]]) -> RoutingSpec {
        let n = rows.len();
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        RoutingSpec::new(g, m, DEFAULT_ROW_SUM_TOLERANCE).unwrap()
    }

    #[test]
    fn graph_rejects_self_loops_and_unknown_nodes() {
        let err = Multigraph::new(&["a", "b"], &[("e1", "a", "a"), ("e2", "a", "z")]).unwrap_err();
        match err {
            FlowError::Validation(v) => {
                assert_eq!(v.len(), 2);
                assert!(v[0].contains("self-loop"));
                assert!(v[1].contains("'z'"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_routing_is_valid() {
        let s = spec(two_link_chain(), &[&[0.0, 0.0], &[0.0, 0.0]]);
        assert!(validate_routing(&s).is_valid());
        assert!(check_out_connected(&s));
    }

    #[test]
    fn full_cycle_is_not_out_connected() {
        let s = spec(two_link_cycle(), &[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(!check_out_connected(&s));
        let report = validate_routing(&s);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            &report.violations[0],
            Violation::NotOutConnected { links } if links.len() == 2
        ));
    }

    #[test]
    fn half_chain_is_valid() {
        let s = spec(two_link_chain(), &[&[0.0, 0.5], &[0.0, 0.0]]);
        assert!(validate_routing(&s).is_valid());
    }

    #[test]
    fn reports_each_kind_of_violation() {
        // e2 -> e1 is inconsistent: head(e2)=c, tail(e1)=a
        let s = spec(two_link_chain(), &[&[0.0, 1.5], &[-0.1, 0.0]]);
        let v = validate_routing(&s).violations;
        assert!(v.iter().any(|x| matches!(x, Violation::NegativeEntry { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::RowSumExceeded { link, .. } if link == "e1")));
        assert!(v.iter().any(|x| matches!(x, Violation::TopologyMismatch { from, .. } if from == "e2")));
    }

    #[test]
    fn row_sum_tolerance_absorbs_decimal_noise() {
        let g = Multigraph::new(
            &["a", "b", "c", "d", "e"],
            &[("in", "a", "b"), ("l", "b", "c"), ("s", "b", "d"), ("r", "b", "e")],
        )
        .unwrap();
        let s = RoutingSpec::from_fractions(
            g,
            &[("in", "l", 0.1), ("in", "s", 0.7), ("in", "r", 0.2)],
            DEFAULT_ROW_SUM_TOLERANCE,
        )
        .unwrap();
        assert!(validate_routing(&s).is_valid());
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let err = RoutingSpec::new(two_link_chain(), DMatrix::zeros(3, 3), 1e-12).unwrap_err();
        assert!(matches!(err, FlowError::Structural(_)));
    }

    #[test]
    fn weighted_norm_for_zero_routing() {
        let s = spec(two_link_chain(), &[&[0.0, 0.0], &[0.0, 0.0]]);
        let wn = build_weighted_norm(&s).unwrap();
        assert_eq!(wn.contraction(), 0.0);
        assert_eq!(wn.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn weighted_norm_for_half_chain() {
        let s = spec(two_link_chain(), &[&[0.0, 0.5], &[0.0, 0.0]]);
        let wn = build_weighted_norm(&s).unwrap();
        // (I - R^T) u = 1 solved by hand: u1 = 1, u2 = 1 + 0.5 u1
        assert_abs_diff_eq!(wn.weights()[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(wn.weights()[1], 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(wn.contraction(), 1.0 / 3.0, epsilon = 1e-12);
        assert!(wn.contraction() <= 1.0 - 1.0 / 1.5 + 1e-12);
        // row-wise certificate
        let mut rtu = [0.0; 2];
        s.apply_transpose(wn.weights(), &mut rtu);
        for i in 0..2 {
            assert!(rtu[i] <= wn.contraction() * wn.weights()[i]);
        }
    }

    #[test]
    fn weighted_norm_rejects_closed_cycle() {
        let s = spec(two_link_cycle(), &[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(matches!(
            build_weighted_norm(&s),
            Err(FlowError::NotCertified { .. })
        ));
    }

    #[test]
    fn equilibrium_identity_and_chain() {
        let s = spec(two_link_chain(), &[&[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(equilibrium_outflow(&s, &[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
        let s = spec(two_link_chain(), &[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(equilibrium_outflow(&s, &[1.0, 0.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn equilibrium_wrong_length_is_structural() {
        let s = spec(two_link_chain(), &[&[0.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(
            equilibrium_outflow(&s, &[1.0]),
            Err(FlowError::Structural(_))
        ));
    }

    #[test]
    fn norm_is_weighted_max() {
        let s = spec(two_link_chain(), &[&[0.0, 0.5], &[0.0, 0.0]]);
        let wn = WeightedNorm::from_weights(&s, vec![1.0, 2.0]).unwrap();
        assert_eq!(wn.norm(&[-0.5, 3.0]), 1.5);
        assert!(WeightedNorm::from_weights(&s, vec![1.0, 0.0]).is_err());
    }
}
