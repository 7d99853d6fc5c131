//! JSON scenario documents.
//!
//! A document names nodes and links and refers to links by id everywhere
//! else. Routing is given as turn fractions, inflows as per-link piecewise
//! constant schedules, and controllers as a list of components that together
//! must own every link once. See `scenarios/SCHEMA.md` for the field reference.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::{Controller, CtmCell, CtmControl, Demand, Supply};
use crate::error::{FlowError, Result};
use crate::network::{Multigraph, RoutingSpec, DEFAULT_ROW_SUM_TOLERANCE};
use crate::solver::{InflowSignal, Scenario, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub tail: String,
    pub head: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnSpec {
    pub from: String,
    pub to: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflowSpec {
    pub link: String,
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSpec {
    Linear { slope: f64 },
    Saturating { capacity: f64, kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SupplySpec {
    Linear { capacity: f64, slope: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub link: String,
    pub downstream: String,
    pub demand: DemandSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    Gpa {
        kappa: f64,
        phases: Vec<Vec<String>>,
    },
    Ctm {
        cells: Vec<CellSpec>,
        supplies: BTreeMap<String, SupplySpec>,
    },
    Constant {
        values: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_sum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub nodes: Vec<String>,
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub routing: Vec<TurnSpec>,
    #[serde(default)]
    pub inflows: Vec<InflowSpec>,
    pub controllers: Vec<ControllerSpec>,
    /// Initial volumes; links not listed start empty.
    #[serde(default)]
    pub initial: BTreeMap<String, f64>,
    pub horizon: f64,
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceSpec>,
}

impl ScenarioFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            FlowError::Parse {
                path: origin.to_string(),
                message: if path == "." {
                    inner.to_string()
                } else {
                    format!("field '{path}': {inner}")
                },
            }
        })
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(t) = self.tolerances {
            cfg.tol_picard = t.picard.unwrap_or(cfg.tol_picard);
            cfg.tol_psi = t.psi.unwrap_or(cfg.tol_psi);
        }
        cfg
    }

    fn row_sum_tolerance(&self) -> f64 {
        self.tolerances
            .and_then(|t| t.row_sum)
            .unwrap_or(DEFAULT_ROW_SUM_TOLERANCE)
    }

    /// Resolves ids and builds a validated [`Scenario`], reporting every
    /// problem found rather than stopping at the first.
    pub fn build(&self) -> Result<Scenario> {
        let mut problems = Vec::new();
        let links: Vec<(&str, &str, &str)> = self
            .links
            .iter()
            .map(|l| (l.id.as_str(), l.tail.as_str(), l.head.as_str()))
            .collect();
        let nodes: Vec<&str> = self.nodes.iter().map(String::as_str).collect();
        let graph = match Multigraph::new(&nodes, &links) {
            Ok(g) => g,
            Err(FlowError::Validation(v)) => return Err(FlowError::Validation(v)),
            Err(e) => return Err(e),
        };
        let n = graph.num_links();
        let index = |id: &str, what: &str, problems: &mut Vec<String>| {
            let found = graph.link_index(id);
            if found.is_none() {
                problems.push(format!("{what} references unknown link '{id}'"));
            }
            found
        };

        let mut fractions = Vec::new();
        for t in &self.routing {
            let a = index(&t.from, "routing", &mut problems);
            let b = index(&t.to, "routing", &mut problems);
            if !t.fraction.is_finite() {
                problems.push(format!("routing fraction {} -> {} is not finite", t.from, t.to));
            }
            if a.is_some() && b.is_some() {
                fractions.push((t.from.as_str(), t.to.as_str(), t.fraction));
            }
        }

        let mut schedules = Vec::new();
        for f in &self.inflows {
            if let Some(i) = index(&f.link, "inflow", &mut problems) {
                schedules.push((i, f.breakpoints.clone(), f.values.clone()));
            }
        }

        let mut x0 = vec![0.0; n];
        for (id, v) in &self.initial {
            if let Some(i) = index(id, "initial state", &mut problems) {
                x0[i] = *v;
            }
        }

        let mut components = Vec::new();
        for (c, spec) in self.controllers.iter().enumerate() {
            match build_controller(spec, &graph, &mut problems) {
                Some(Ok(ctrl)) => components.push(ctrl),
                Some(Err(e)) => problems.push(format!("controller {c}: {e}")),
                None => {}
            }
        }

        let routing = match RoutingSpec::from_fractions(graph, &fractions, self.row_sum_tolerance()) {
            Ok(r) => Some(r),
            Err(FlowError::Validation(v)) => {
                problems.extend(v);
                None
            }
            Err(e) => {
                problems.push(e.to_string());
                None
            }
        };
        let inflow = if schedules.is_empty() {
            InflowSignal::constant(vec![0.0; n])
        } else {
            InflowSignal::from_links(n, &schedules)
        };
        let inflow = match inflow {
            Ok(s) => Some(s),
            Err(FlowError::Validation(v)) => {
                problems.extend(v);
                None
            }
            Err(e) => {
                problems.push(e.to_string());
                None
            }
        };
        let controller = match Controller::compose(components, n) {
            Ok(c) => Some(c),
            Err(e) => {
                problems.push(match e {
                    FlowError::Validation(v) => v.join("; "),
                    other => other.to_string(),
                });
                None
            }
        };

        match (routing, inflow, controller) {
            (Some(r), Some(f), Some(c)) if problems.is_empty() => {
                Scenario::new(r, c, f, x0, self.horizon, self.step)
            }
            (Some(r), Some(f), Some(c)) => {
                // still surface the scenario-level checks alongside the earlier ones
                if let Err(FlowError::Validation(v)) =
                    Scenario::new(r, c, f, x0, self.horizon, self.step)
                {
                    problems.extend(v);
                }
                Err(FlowError::Validation(problems))
            }
            _ => Err(FlowError::Validation(problems)),
        }
    }

    /// Document describing `scenario`. Inflows are written per link with the
    /// merged breakpoints, initial volumes for every link.
    pub fn from_scenario(scenario: &Scenario, name: Option<String>) -> Self {
        let graph = scenario.routing.graph();
        let id = |i: usize| graph.link_id(i).to_string();
        let n = graph.num_links();
        let m = scenario.routing.matrix();
        let mut routing = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] != 0.0 {
                    routing.push(TurnSpec { from: id(i), to: id(j), fraction: m[(i, j)] });
                }
            }
        }
        let segments: Vec<(f64, Vec<f64>)> =
            scenario.inflow.segments().map(|(t, v)| (t, v.to_vec())).collect();
        let inflows = (0..n)
            .filter(|&i| segments.iter().any(|(_, v)| v[i] != 0.0))
            .map(|i| InflowSpec {
                link: id(i),
                breakpoints: segments.iter().map(|(t, _)| *t).collect(),
                values: segments.iter().map(|(_, v)| v[i]).collect(),
            })
            .collect();
        let components = match &scenario.controller {
            Controller::Composite(parts) => parts.clone(),
            other => vec![other.clone()],
        };
        let tolerance = scenario.routing.row_sum_tolerance();
        Self {
            name,
            description: None,
            nodes: graph.nodes().to_vec(),
            links: graph
                .links()
                .iter()
                .map(|l| LinkSpec {
                    id: l.id.clone(),
                    tail: graph.nodes()[l.tail].clone(),
                    head: graph.nodes()[l.head].clone(),
                })
                .collect(),
            routing,
            inflows,
            controllers: components.iter().map(|c| controller_spec(c, &id)).collect(),
            initial: (0..n).map(|i| (id(i), scenario.x0[i])).collect(),
            horizon: scenario.horizon,
            step: scenario.step,
            tolerances: (tolerance != DEFAULT_ROW_SUM_TOLERANCE).then_some(ToleranceSpec {
                row_sum: Some(tolerance),
                ..Default::default()
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario documents always serialize")
    }
}

fn build_controller(
    spec: &ControllerSpec,
    graph: &Multigraph,
    problems: &mut Vec<String>,
) -> Option<Result<Controller>> {
    let before = problems.len();
    let mut lookup = |id: &str| {
        let found = graph.link_index(id);
        if found.is_none() {
            problems.push(format!("controller references unknown link '{id}'"));
        }
        found.unwrap_or(usize::MAX)
    };
    let built = match spec {
        ControllerSpec::Gpa { kappa, phases } => {
            let phases: Vec<Vec<usize>> = phases
                .iter()
                .map(|p| p.iter().map(|id| lookup(id)).collect())
                .collect();
            if problems.len() > before {
                return None;
            }
            Controller::gpa(phases, *kappa)
        }
        ControllerSpec::Constant { values } => {
            let links: Vec<usize> = values.keys().map(|id| lookup(id)).collect();
            if problems.len() > before {
                return None;
            }
            Controller::constant(links, values.values().copied().collect())
        }
        ControllerSpec::Ctm { cells, supplies } => {
            let cells: Vec<CtmCell> = cells
                .iter()
                .map(|c| CtmCell {
                    link: lookup(&c.link),
                    downstream: lookup(&c.downstream),
                    demand: match c.demand {
                        DemandSpec::Linear { slope } => Demand::Linear { slope },
                        DemandSpec::Saturating { capacity, kappa } => {
                            Demand::Saturating { capacity, kappa }
                        }
                    },
                })
                .collect();
            let supplies: BTreeMap<usize, Supply> = supplies
                .iter()
                .map(|(id, s)| {
                    let s = match *s {
                        SupplySpec::Linear { capacity, slope } => Supply::Linear { capacity, slope },
                        SupplySpec::Constant { value } => Supply::Constant { value },
                    };
                    (lookup(id), s)
                })
                .collect();
            if problems.len() > before {
                return None;
            }
            CtmControl::new(cells, supplies).map(Controller::ctm)
        }
    };
    Some(built)
}

fn controller_spec(ctrl: &Controller, id: &dyn Fn(usize) -> String) -> ControllerSpec {
    match ctrl {
        Controller::Constant(c) => ControllerSpec::Constant {
            values: c.links.iter().map(|&i| id(i)).zip(c.values.iter().copied()).collect(),
        },
        Controller::Gpa(g) => ControllerSpec::Gpa {
            kappa: g.kappa,
            phases: g.phases.iter().map(|p| p.iter().map(|&i| id(i)).collect()).collect(),
        },
        Controller::Ctm(c) => ControllerSpec::Ctm {
            cells: c
                .cells()
                .iter()
                .map(|cell| CellSpec {
                    link: id(cell.link),
                    downstream: id(cell.downstream),
                    demand: match cell.demand {
                        Demand::Linear { slope } => DemandSpec::Linear { slope },
                        Demand::Saturating { capacity, kappa } => {
                            DemandSpec::Saturating { capacity, kappa }
                        }
                    },
                })
                .collect(),
            supplies: c
                .supplies()
                .iter()
                .map(|(&i, s)| {
                    let s = match *s {
                        Supply::Linear { capacity, slope } => SupplySpec::Linear { capacity, slope },
                        Supply::Constant { value } => SupplySpec::Constant { value },
                    };
                    (id(i), s)
                })
                .collect(),
        },
        Controller::Composite(_) => unreachable!("composites are flattened by the caller"),
    }
}

pub fn read_scenario_file(path: &Path) -> Result<ScenarioFile> {
    let text = fs::read_to_string(path)?;
    ScenarioFile::parse(&text, &path.display().to_string())
}

/// Reads, parses and validates a scenario document.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    read_scenario_file(path)?.build()
}

pub fn write_scenario(file: &ScenarioFile, path: &Path) -> Result<()> {
    crate::output::write_atomic(path, file.to_json().as_bytes())
}
