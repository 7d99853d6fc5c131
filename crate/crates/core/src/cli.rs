//! Command line front end.
//!
//! Every command prints one JSON document on stdout. Exit codes: 0 success,
//! 1 invalid input, 2 numerical failure, 3 a check did not pass.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::{FlowError, Result};
use crate::network::equilibrium_outflow;
use crate::oracle::{closed_form_path, oracle_solve, sup_distance, OracleConfig};
use crate::output::{write_json, write_plot_data, write_trajectory_csv};
use crate::scenario::read_scenario_file;
use crate::solver::{solve, Scenario, Solution, SolverConfig};
use crate::verify::{check_solution, InvariantReport};

/// Invariant slack used by `simulate` and `verify`, in multiples of the step.
pub const DEFAULT_EPSILON_STEPS: f64 = 50.0;

/// Solver and oracle may differ by this many multiples of `h + h_oracle`.
pub const ORACLE_AGREEMENT_FACTOR: f64 = 5.0;

#[derive(Debug, Parser)]
#[command(name = "flownet", version, about = "Simulate and check controlled point-queue flow networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a scenario and write the trajectory CSV and a report.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the grid step.
        #[arg(long)]
        step: Option<f64>,
        /// Override the Picard tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Print the equilibrium outflow (I - R^T)^{-1} lambda for each link.
    Equilibrium {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Solve a scenario and run every invariant check.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        step: Option<f64>,
        /// Invariant slack; defaults to 50 steps.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Compare the solver with the reference integrator.
    CompareOracle {
        #[arg(long)]
        scenario: PathBuf,
        /// Oracle steps per solver step.
        #[arg(long, default_value_t = 10)]
        refine: usize,
    },
    /// Write volume and control tables for plotting.
    PlotData {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        step: Option<f64>,
    },
}

/// Runs the command line with `argv` (including the program name), writing
/// the result document to stdout.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    run_cli_to(argv, &mut stdout.lock())
}

pub fn run_cli_to<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            emit(
                out,
                &json!({
                    "status": "error",
                    "exit_code": 1,
                    "kind": "usage",
                    "message": e.kind().to_string(),
                    "details": [],
                }),
            );
            return 1;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            let details = match &e {
                FlowError::Validation(v) => v.clone(),
                _ => Vec::new(),
            };
            emit(
                out,
                &json!({
                    "status": "error",
                    "exit_code": e.exit_code(),
                    "kind": e.kind(),
                    "message": e.to_string(),
                    "details": details,
                }),
            );
            e.exit_code()
        }
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) {
    let text = serde_json::to_string_pretty(value).expect("reports always serialize");
    let _ = writeln!(out, "{text}");
}

struct Loaded {
    name: String,
    scenario: Scenario,
    config: SolverConfig,
}

fn load(path: &Path, step: Option<f64>) -> Result<Loaded> {
    let file = read_scenario_file(path)?;
    let mut scenario = file.build()?;
    if let Some(h) = step {
        scenario = scenario.with_step(h)?;
    }
    let name = file.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    Ok(Loaded {
        name,
        scenario,
        config: file.solver_config(),
    })
}

fn link_ids(scenario: &Scenario) -> Vec<String> {
    let g = scenario.routing.graph();
    (0..g.num_links()).map(|i| g.link_id(i).to_string()).collect()
}

fn solve_and_check(loaded: &Loaded, epsilon: Option<f64>) -> Result<(Solution, InvariantReport, f64)> {
    let started = Instant::now();
    let sol = solve(&loaded.scenario, &loaded.config)?;
    let seconds = started.elapsed().as_secs_f64();
    let eps = epsilon.unwrap_or(DEFAULT_EPSILON_STEPS * loaded.scenario.step);
    let report = check_solution(&loaded.scenario, &sol, eps)?;
    log::info!(
        "{}: {} windows, {} Picard iterations in {:.3}s",
        loaded.name,
        sol.report.windows.len(),
        sol.report.total_iterations,
        seconds
    );
    Ok((sol, report, seconds))
}

fn status_code(passed: bool) -> (&'static str, i32) {
    if passed {
        ("ok", 0)
    } else {
        ("violation", 3)
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Simulate { scenario, out: dir, step, tol } => {
            let mut loaded = load(&scenario, step)?;
            if let Some(t) = tol {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(FlowError::Validation(vec![format!("tolerance must be positive, got {t}")]));
                }
                loaded.config.tol_picard = t;
            }
            let (sol, invariants, seconds) = solve_and_check(&loaded, None)?;
            let csv_path = dir.join("trajectory.csv");
            let report_path = dir.join("report.json");
            write_trajectory_csv(&csv_path, &loaded.scenario, &sol)?;
            let (status, code) = status_code(invariants.passed());
            write_json(
                &report_path,
                &json!({
                    "status": status,
                    "scenario": loaded.name,
                    "links": link_ids(&loaded.scenario),
                    "horizon": loaded.scenario.horizon,
                    "step": loaded.scenario.step,
                    "runtime_seconds": seconds,
                    "solver": sol.report,
                    "invariants": invariants,
                }),
            )?;
            emit(
                out,
                &json!({
                    "status": status,
                    "trajectory": csv_path,
                    "report": report_path,
                    "windows": sol.report.windows.len(),
                    "max_residual": sol.report.max_residual,
                    "max_clamp": sol.report.max_clamp,
                    "violations": invariants.violations(),
                }),
            );
            Ok(code)
        }
        Command::Equilibrium { scenario } => {
            let loaded = load(&scenario, None)?;
            let sc = &loaded.scenario;
            let ids = link_ids(sc);
            let segments: Vec<(f64, Vec<f64>)> = sc
                .inflow
                .segments()
                .map(|(t, lam)| Ok((t, equilibrium_outflow(&sc.routing, lam)?)))
                .collect::<Result<_>>()?;
            if segments.len() > 1 {
                log::warn!(
                    "inflow has {} segments; 'outflow' uses the first, the others are listed per segment",
                    segments.len()
                );
            }
            let first = &segments[0].1;
            let links: Vec<_> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| json!({ "link": id, "outflow": first[i] }))
                .collect();
            let per_segment: Vec<_> = segments
                .iter()
                .map(|(t, a)| json!({ "start": t, "outflow": a }))
                .collect();
            emit(
                out,
                &json!({
                    "status": "ok",
                    "links": links,
                    "multiple_segments": segments.len() > 1,
                    "segments": per_segment,
                }),
            );
            Ok(0)
        }
        Command::Verify { scenario, step, epsilon } => {
            let loaded = load(&scenario, step)?;
            let (sol, invariants, seconds) = solve_and_check(&loaded, epsilon)?;
            let (status, code) = status_code(invariants.passed());
            emit(
                out,
                &json!({
                    "status": status,
                    "scenario": loaded.name,
                    "runtime_seconds": seconds,
                    "max_residual": sol.report.max_residual,
                    "max_clamp": sol.report.max_clamp,
                    "invariants": invariants,
                    "violations": invariants.violations(),
                }),
            );
            Ok(code)
        }
        Command::CompareOracle { scenario, refine } => {
            let loaded = load(&scenario, None)?;
            let sc = &loaded.scenario;
            let sol = solve(sc, &loaded.config)?;
            let cfg = OracleConfig::refining(sc, refine)?;
            let oracle = oracle_solve(sc, &cfg)?;
            let sampled = oracle.sample_state(&sol.grid)?;
            let ids = link_ids(sc);
            let per_link: Vec<_> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    let d = sol
                        .x
                        .component(i)
                        .iter()
                        .zip(sampled.component(i))
                        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                    json!({ "link": id, "sup_distance": d })
                })
                .collect();
            let distance = sup_distance(&sol.x, &sampled)?;
            let bound = ORACLE_AGREEMENT_FACTOR * (sc.step + cfg.step);
            let mut passed = distance <= bound;
            let closed_form = match closed_form_path(sc) {
                Some(exact) => {
                    let solver = sup_distance(&sol.x, &exact)?;
                    let oracle = sup_distance(&sampled, &exact)?;
                    let cf_bound = ORACLE_AGREEMENT_FACTOR * sc.step;
                    passed &= solver <= cf_bound && oracle <= cf_bound;
                    json!({ "solver": solver, "oracle": oracle, "bound": cf_bound })
                }
                None => serde_json::Value::Null,
            };
            let (status, code) = status_code(passed);
            emit(
                out,
                &json!({
                    "status": status,
                    "step": sc.step,
                    "oracle_step": cfg.step,
                    "sup_distance": distance,
                    "bound": bound,
                    "links": per_link,
                    "closed_form": closed_form,
                }),
            );
            Ok(code)
        }
        Command::PlotData { scenario, out: dir, step } => {
            let loaded = load(&scenario, step)?;
            let sol = solve(&loaded.scenario, &loaded.config)?;
            write_plot_data(&dir, &loaded.scenario, &sol)?;
            emit(
                out,
                &json!({
                    "status": "ok",
                    "volumes": dir.join("volumes.csv"),
                    "controls": dir.join("controls.csv"),
                }),
            );
            Ok(0)
        }
    }
}
