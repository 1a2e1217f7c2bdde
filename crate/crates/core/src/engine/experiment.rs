//! Parameter grids: every combination of the listed values, each run the
//! configured number of times, collected into one tidy CSV.

use rayon::prelude::*;

use super::config::{key_values, ScenarioConfig};
use super::metrics::{aggregate, csv_aggregate_row, csv_error_row, csv_header, csv_run_row, RunReport};
use super::sim::Scenario;
use crate::error::{Error, Result};

/// A grid file: `key = value` lines where `value` may list alternatives
/// separated by `|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    /// Keys in file order, each with one or more values.
    pub axes: Vec<(String, Vec<String>)>,
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// `key=value` pairs of the varying keys, `;`-separated; `base` when
    /// nothing varies.
    pub label: String,
    /// Key/value assignments applied on top of the defaults.
    pub assignments: Vec<(String, String)>,
}

impl ExperimentGrid {
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for (line, key, value) in key_values(text)? {
            if axes.iter().any(|(k, _)| *k == key) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            let values: Vec<String> = value.split('|').map(|v| v.trim().to_string()).collect();
            if values.iter().any(String::is_empty) && values.len() > 1 {
                return Err(Error::Parse {
                    line,
                    msg: format!("empty alternative for `{key}`"),
                });
            }
            axes.push((key, values));
        }
        Ok(ExperimentGrid { axes })
    }

    /// Cartesian product, first key outermost.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = vec![Vec::<(String, String)>::new()];
        for (key, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut next = prefix.clone();
                        next.push((key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        cells
            .into_iter()
            .map(|assignments| {
                let varying: Vec<String> = assignments
                    .iter()
                    .filter(|(k, _)| self.axes.iter().any(|(a, vs)| a == k && vs.len() > 1))
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                Cell {
                    label: if varying.is_empty() { "base".into() } else { varying.join(";") },
                    assignments,
                }
            })
            .collect()
    }
}

impl Cell {
    pub fn config(&self) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::default();
        for (k, v) in &self.assignments {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Outcome of one cell: its runs, or why it could not start.
#[derive(Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: std::result::Result<(Scenario, Vec<Result<RunReport>>), Error>,
}

/// Runs every cell. Runs execute in parallel; results come back in grid
/// order regardless of completion order.
pub fn run_grid(grid: &ExperimentGrid) -> Vec<CellResult> {
    let prepared: Vec<(Cell, Result<Scenario>)> = grid
        .cells()
        .into_iter()
        .map(|c| {
            let s = c.config().and_then(Scenario::new);
            (c, s)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = prepared
        .iter()
        .enumerate()
        .filter_map(|(ci, (_, s))| s.as_ref().ok().map(|s| (ci, s.config().runs)))
        .flat_map(|(ci, runs)| (0..runs).map(move |r| (ci, r)))
        .collect();
    let mut results: Vec<(usize, usize, Result<RunReport>)> = jobs
        .par_iter()
        .map(|&(ci, r)| {
            let scenario = prepared[ci].1.as_ref().expect("prepared");
            (ci, r, scenario.run(r))
        })
        .collect();
    results.sort_by_key(|&(ci, r, _)| (ci, r));
    let mut per_cell: Vec<Vec<Result<RunReport>>> = prepared.iter().map(|_| Vec::new()).collect();
    for (ci, _, res) in results {
        per_cell[ci].push(res);
    }
    prepared
        .into_iter()
        .zip(per_cell)
        .map(|((cell, scenario), runs)| CellResult {
            cell,
            outcome: scenario.map(|s| (s, runs)),
        })
        .collect()
}

/// Tidy CSV: a row per (cell, run) and one aggregate row per cell.
pub fn grid_csv(results: &[CellResult]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for res in results {
        let label = &res.cell.label;
        match &res.outcome {
            Err(e) => {
                out.push_str(&csv_error_row(label, None, None, &e.to_string()));
                out.push('\n');
            }
            Ok((scenario, runs)) => {
                let mode = scenario.config().mode;
                let mut done = Vec::new();
                for (r, run) in runs.iter().enumerate() {
                    match run {
                        Ok(report) => {
                            out.push_str(&csv_run_row(label, mode, report));
                            done.push(report.clone());
                        }
                        Err(e) => out.push_str(&csv_error_row(label, Some(mode), Some(r), &e.to_string())),
                    }
                    out.push('\n');
                }
                out.push_str(&csv_aggregate_row(label, mode, &aggregate(&done)));
                out.push('\n');
            }
        }
    }
    out
}
