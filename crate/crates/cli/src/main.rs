use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use evcs::analysis::{bounds_csv, parse_params_file};
use evcs::engine::experiment::{grid_csv, run_grid, ExperimentGrid};
use evcs::engine::metrics::scenario_csv;
use evcs::engine::{Mode, Scenario, ScenarioConfig};
use evcs::roadnet::{grid_graph, GridSpec};

#[derive(Parser)]
#[command(name = "sim", version, about = "EV charging-station selection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario `runs` times and write the per-run and aggregate report.
    Run(RunArgs),
    /// Run every cell of a parameter grid.
    Experiment {
        #[arg(long)]
        grid: PathBuf,
        /// Output directory; receives experiment.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the straight-road access bounds and their Monte Carlo estimates.
    Analyze {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Road-graph utilities.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the dissemination mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Overrides the number of runs.
    #[arg(long)]
    runs: Option<usize>,
    /// CSV report; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines event trace of the first run.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Generate a rectangular grid with seeded station and RSU placement.
    Gen {
        /// Grid size as WIDTHxHEIGHT nodes.
        #[arg(long, value_parser = parse_dims)]
        grid: (usize, usize),
        #[arg(long, default_value_t = 500.0)]
        spacing: f64,
        #[arg(long, default_value_t = 5)]
        cs: usize,
        #[arg(long, default_value_t = 7)]
        rsu: usize,
        #[arg(long, default_value_t = 600.0)]
        rsu_separation: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: evcs::Error| e.to_string())
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension `{v}`"));
    Ok((p(w)?, p(h)?))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ScenarioConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    let scenario = Scenario::new(cfg)?;
    let mut reports = Vec::new();
    for i in 0..scenario.config().runs {
        if i == 0 {
            if let Some(path) = &args.trace {
                let (report, trace) = scenario.run_traced(0)?;
                let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
                let mut w = BufWriter::new(file);
                for rec in &trace {
                    serde_json::to_writer(&mut w, rec)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
                reports.push(report);
                continue;
            }
        }
        reports.push(scenario.run(i)?);
    }
    let csv = scenario_csv("run", scenario.config().mode, &reports);
    match &args.out {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Experiment { grid, out } => {
            let text = fs::read_to_string(&grid).with_context(|| format!("reading {}", grid.display()))?;
            let grid = ExperimentGrid::parse(&text)?;
            let results = run_grid(&grid);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_file(&out.join("experiment.csv"), &grid_csv(&results))?;
            let failed = results.iter().filter(|r| r.outcome.is_err()).count();
            if failed > 0 {
                eprintln!("{failed} cell(s) failed; see the status column");
            }
            Ok(())
        }
        Command::Analyze { params, trials, seed, out } => {
            let text = fs::read_to_string(&params).with_context(|| format!("reading {}", params.display()))?;
            let sets = parse_params_file(&text)?;
            if sets.is_empty() {
                bail!("{} holds no parameter sets", params.display());
            }
            write_file(&out, &bounds_csv(&sets, trials, seed)?)
        }
        Command::Graph {
            command: GraphCommand::Gen { grid: (width, height), spacing, cs, rsu, rsu_separation, seed, out },
        } => {
            let graph = grid_graph(&GridSpec {
                width,
                height,
                spacing,
                cs_count: cs,
                rsu_count: rsu,
                min_rsu_separation: rsu_separation,
                seed,
            })?;
            write_file(&out, &graph.to_text())
        }
    }
}
