//! Result files: trajectory CSV, JSON reports and plot tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{FlowError, Result};
use crate::network::equilibrium_outflow;
use crate::reflection::Trajectory;
use crate::solver::{Scenario, Solution};

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| FlowError::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| FlowError::Structural(format!("report serialization failed: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// 17 significant digits, enough to reproduce every `f64` exactly.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt))?;
    }
    w.into_inner()
        .map_err(|e| FlowError::Io(std::io::Error::other(e.to_string())))
}

pub fn trajectory_header(ids: &[&str]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["x", "z", "zeta", "w"] {
        h.extend(ids.iter().map(|id| format!("{prefix}_{id}")));
    }
    h
}

/// One row per grid point: `t`, then `x`, `z`, `zeta` and `w` for every link.
pub fn write_trajectory_csv(path: &Path, scenario: &Scenario, sol: &Solution) -> Result<()> {
    let graph = scenario.routing.graph();
    let ids: Vec<&str> = (0..graph.num_links()).map(|i| graph.link_id(i)).collect();
    let rows = (0..sol.grid.len()).map(|k| {
        let mut r = vec![sol.grid.time(k)];
        for t in [&sol.x, &sol.z, &sol.zeta, &sol.w] {
            r.extend_from_slice(t.row(k));
        }
        r
    });
    write_atomic(path, &csv_bytes(&trajectory_header(&ids), rows)?)
}

/// Reads a numeric CSV back as its header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|e| FlowError::Parse {
                    path: path.display().to_string(),
                    message: format!("'{s}': {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Plot tables: `volumes.csv` with `x` per link and `controls.csv` with
/// `zeta` and `z` per link plus the equilibrium outflow of the inflow segment
/// in force at each time.
pub fn write_plot_data(dir: &Path, scenario: &Scenario, sol: &Solution) -> Result<()> {
    let graph = scenario.routing.graph();
    let n = graph.num_links();
    let ids: Vec<&str> = (0..n).map(|i| graph.link_id(i)).collect();
    let equilibria: Vec<(f64, Vec<f64>)> = scenario
        .inflow
        .segments()
        .map(|(t, lam)| Ok((t, equilibrium_outflow(&scenario.routing, lam)?)))
        .collect::<Result<_>>()?;

    let mut header = vec!["t".to_string()];
    header.extend(ids.iter().map(|id| format!("x_{id}")));
    let rows = (0..sol.grid.len()).map(|k| {
        let mut r = vec![sol.grid.time(k)];
        r.extend_from_slice(sol.x.row(k));
        r
    });
    write_atomic(&dir.join("volumes.csv"), &csv_bytes(&header, rows)?)?;

    let mut header = vec!["t".to_string()];
    for prefix in ["zeta", "z", "equilibrium"] {
        header.extend(ids.iter().map(|id| format!("{prefix}_{id}")));
    }
    let zero = vec![0.0; n];
    let rows = (0..sol.grid.len()).map(|k| {
        let t = sol.grid.time(k);
        let eq = equilibria
            .iter()
            .rev()
            .find(|(s, _)| *s <= t)
            .map_or(&zero, |(_, a)| a);
        let mut r = vec![t];
        r.extend_from_slice(sol.zeta.row(k));
        r.extend_from_slice(sol.z.row(k));
        r.extend_from_slice(eq);
        r
    });
    write_atomic(&dir.join("controls.csv"), &csv_bytes(&header, rows)?)
}

/// Rebuilds the `x` block of a trajectory CSV.
pub fn state_from_rows(sol_grid: &crate::reflection::TimeGrid, rows: &[Vec<f64>], n: usize) -> Result<Trajectory> {
    let data: Vec<f64> = rows.iter().flat_map(|r| r[1..=n].iter().copied()).collect();
    Trajectory::from_data(*sol_grid, n, data)
}
