use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "# short scenario\nev_count = 20\nduration_s = 3600\nruns = 2\n";

#[test]
fn run_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", SMALL);
    let out = dir.path().join("report.csv");
    let trace = dir.path().join("trace.jsonl");
    ok(&sim(&[
        "run", "--config", &cfg, "--mode", "apull", "--seed", "7",
        "--out", out.to_str().unwrap(), "--trace", trace.to_str().unwrap(),
    ]));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("cell,mode,row,run,seed,n,average_waiting_time_s,"));
    assert!(lines[1].starts_with("run,apull,run,0,"));
    assert!(lines[3].starts_with("run,apull,aggregate,,,2,"));
    let first = fs::read_to_string(&trace).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert!(rec["t"].is_number() && rec["event"].is_string());

    // same seed, same bytes
    let again = dir.path().join("again.csv");
    ok(&sim(&["run", "--config", &cfg, "--mode", "apull", "--seed", "7", "--out", again.to_str().unwrap()]));
    assert_eq!(csv, fs::read_to_string(&again).unwrap());
}

#[test]
fn run_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "ev_count = 3\nwarp_factor = 9\n");
    let out = sim(&["run", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warp_factor"));
}

#[test]
fn experiment_writes_one_csv() {
    let dir = tempfile::tempdir().unwrap();
    let grid = write(
        dir.path(),
        "g.grid",
        "ev_count = 10\nduration_s = 1800\nruns = 1\nmode = ideal | push\n",
    );
    let out_dir = dir.path().join("out");
    ok(&sim(&["experiment", "--grid", &grid, "--out", out_dir.to_str().unwrap()]));
    let csv = fs::read_to_string(out_dir.join("experiment.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("mode=ideal,ideal,run,0,"));
    assert!(rows[3].starts_with("mode=push,push,aggregate,"));
}

#[test]
fn analyze_writes_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.txt", "R=150 L=150 T=100 V=20 S=600 F=300 N=3\n");
    let out = dir.path().join("bounds.csv");
    ok(&sim(&["analyze", "--params", &params, "--trials", "5000", "--out", out.to_str().unwrap()]));
    let csv = fs::read_to_string(out).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let push: f64 = row[8].parse().unwrap();
    let pull: f64 = row[9].parse().unwrap();
    assert!((push - 0.3369).abs() < 1e-4 && (pull - 0.9356).abs() < 1e-4);
}

#[test]
fn graph_gen_feeds_run() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.txt");
    ok(&sim(&["graph", "gen", "--grid", "4x3", "--spacing", "400", "--cs", "2", "--rsu", "2", "--out", graph.to_str().unwrap()]));
    let text = fs::read_to_string(&graph).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("node ")).count(), 12);
    assert_eq!(text.lines().filter(|l| l.starts_with("edge ")).count(), 17);
    assert_eq!(text.lines().filter(|l| l.starts_with("poi CS ")).count(), 2);
    let cfg = write(dir.path(), "m.cfg", "graph_file = g.txt\nev_count = 5\nduration_s = 1200\nruns = 1\n");
    ok(&sim(&["run", "--config", &cfg, "--mode", "pull"]));
    assert!(!sim(&["graph", "gen", "--grid", "4by3", "--out", "x"]).status.success());
}
