//! Per-run reports, multi-run aggregates and the CSV layout they share.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::Mode;

/// Outcome of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub run_index: usize,
    pub seed: u64,
    /// Mean of (charge finish - arrival at station) over completed charges.
    pub average_waiting_time: Option<f64>,
    /// Mean of (charge start - arrival at station) over started charges.
    pub average_queue_wait: Option<f64>,
    pub obtain_info_count: u64,
    /// Mean |true queuing time - recorded queuing time| over every station
    /// considered at every decision.
    pub average_freshness: Option<f64>,
    pub cs_utilization_kwh: Vec<f64>,
    pub charged_ev_count: u64,
    pub stranded_count: u64,
    pub decisions: u64,
    pub nearest_fallbacks: u64,
    pub unreachable_decisions: u64,
    pub reservations_made: u64,
    pub reservations_forwarded: u64,
    pub rejections: u64,
    pub budget_exhaustions: u64,
    pub publication_rounds: u64,
    pub events_processed: u64,
    /// Energy put into vehicle batteries, summed on the vehicle side.
    pub ev_received_kwh: f64,
}

impl RunReport {
    pub fn total_utilization_kwh(&self) -> f64 {
        self.cs_utilization_kwh.iter().sum()
    }

    /// Scalar metrics in CSV column order; `None` for undefined values.
    pub fn scalars(&self) -> Vec<Option<f64>> {
        vec![
            self.average_waiting_time,
            self.average_queue_wait,
            Some(self.obtain_info_count as f64),
            self.average_freshness,
            Some(self.charged_ev_count as f64),
            Some(self.stranded_count as f64),
            Some(self.decisions as f64),
            Some(self.nearest_fallbacks as f64),
            Some(self.unreachable_decisions as f64),
            Some(self.reservations_made as f64),
            Some(self.reservations_forwarded as f64),
            Some(self.rejections as f64),
            Some(self.budget_exhaustions as f64),
            Some(self.publication_rounds as f64),
            Some(self.events_processed as f64),
            Some(self.total_utilization_kwh()),
            Some(self.ev_received_kwh),
        ]
    }
}

/// Scalar metric column names, matching [`RunReport::scalars`].
pub const METRICS: &[&str] = &[
    "average_waiting_time_s",
    "average_queue_wait_s",
    "obtain_info_count",
    "average_freshness_s",
    "charged_ev_count",
    "stranded_count",
    "decisions",
    "nearest_fallbacks",
    "unreachable_decisions",
    "reservations_made",
    "reservations_forwarded",
    "rejections",
    "budget_exhaustions",
    "publication_rounds",
    "events_processed",
    "total_utilization_kwh",
    "ev_received_kwh",
];

/// Mean and 95% confidence half-width of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// `None` with fewer than two samples.
    pub ci95: Option<f64>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Two-sided Student-t quantile at `1 - (1 - level) / 2`.
pub fn t_quantile(level: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

pub fn summarize(xs: &[f64]) -> Option<Summary> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len();
    let ci95 = (n >= 2).then(|| t_quantile(0.95, (n - 1) as f64) * (variance(xs) / n as f64).sqrt());
    Some(Summary { n, mean: mean(xs), ci95 })
}

/// One-sided Welch test of `mean(a) > mean(b)`; returns the p-value.
pub fn welch_greater_p(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a) / a.len() as f64, variance(b) / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        return if ma > mb { 0.0 } else { 1.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = if a.len() < 2 || b.len() < 2 {
        1.0
    } else {
        se2.powi(2)
            / (va.powi(2) / (a.len() - 1) as f64 + vb.powi(2) / (b.len() - 1) as f64)
    };
    let dist = StudentsT::new(0.0, 1.0, df.max(1.0)).expect("valid df");
    1.0 - dist.cdf(t)
}

/// Multi-run aggregate of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub scalars: Vec<Option<Summary>>,
    pub cs_utilization_kwh: Vec<f64>,
}

pub fn aggregate(reports: &[RunReport]) -> AggregateReport {
    let columns = METRICS.len();
    let scalars = (0..columns)
        .map(|c| {
            let xs: Vec<f64> = reports.iter().filter_map(|r| r.scalars()[c]).collect();
            summarize(&xs)
        })
        .collect();
    let width = reports.iter().map(|r| r.cs_utilization_kwh.len()).max().unwrap_or(0);
    let cs_utilization_kwh = (0..width)
        .map(|i| {
            let xs: Vec<f64> = reports.iter().filter_map(|r| r.cs_utilization_kwh.get(i).copied()).collect();
            if xs.is_empty() { 0.0 } else { mean(&xs) }
        })
        .collect();
    AggregateReport {
        runs: reports.len(),
        scalars,
        cs_utilization_kwh,
    }
}

pub fn csv_header() -> String {
    let mut cols = vec!["cell", "mode", "row", "run", "seed", "n"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for m in METRICS {
        cols.push((*m).to_string());
        cols.push(format!("{m}_ci95"));
    }
    cols.push("cs_utilization_kwh".into());
    cols.push("status".into());
    cols.join(",")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// Cell labels may contain anything; quote when needed.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_run_row(cell: &str, mode: Mode, r: &RunReport) -> String {
    let mut cols = vec![
        field(cell),
        mode.to_string(),
        "run".into(),
        r.run_index.to_string(),
        r.seed.to_string(),
        "1".into(),
    ];
    for v in r.scalars() {
        cols.push(opt(v));
        cols.push(String::new());
    }
    cols.push(list(&r.cs_utilization_kwh));
    cols.push("ok".into());
    cols.join(",")
}

pub fn csv_aggregate_row(cell: &str, mode: Mode, a: &AggregateReport) -> String {
    let mut cols = vec![
        field(cell),
        mode.to_string(),
        "aggregate".into(),
        String::new(),
        String::new(),
        a.runs.to_string(),
    ];
    for s in &a.scalars {
        cols.push(opt(s.map(|s| s.mean)));
        cols.push(opt(s.and_then(|s| s.ci95)));
    }
    cols.push(list(&a.cs_utilization_kwh));
    cols.push(if a.runs > 0 { "ok" } else { "no completed runs" }.into());
    cols.join(",")
}

/// Row for a cell or run that failed before producing a report.
pub fn csv_error_row(cell: &str, mode: Option<Mode>, run: Option<usize>, message: &str) -> String {
    let mut cols = vec![
        field(cell),
        mode.map(|m| m.to_string()).unwrap_or_default(),
        if run.is_some() { "run" } else { "aggregate" }.into(),
        run.map(|r| r.to_string()).unwrap_or_default(),
        String::new(),
        "0".into(),
    ];
    cols.extend(std::iter::repeat_n(String::new(), 2 * METRICS.len() + 1));
    cols.push(field(&format!("error: {message}")));
    cols.join(",")
}

/// Full report of one scenario: a row per run plus the aggregate row.
pub fn scenario_csv(cell: &str, mode: Mode, reports: &[RunReport]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in reports {
        out.push_str(&csv_run_row(cell, mode, r));
        out.push('\n');
    }
    out.push_str(&csv_aggregate_row(cell, mode, &aggregate(reports)));
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn blank(run_index: usize) -> RunReport {
        RunReport {
            run_index,
            seed: 0,
            average_waiting_time: None,
            average_queue_wait: None,
            obtain_info_count: 0,
            average_freshness: None,
            cs_utilization_kwh: vec![0.0; 2],
            charged_ev_count: 0,
            stranded_count: 0,
            decisions: 0,
            nearest_fallbacks: 0,
            unreachable_decisions: 0,
            reservations_made: 0,
            reservations_forwarded: 0,
            rejections: 0,
            budget_exhaustions: 0,
            publication_rounds: 0,
            events_processed: 0,
            ev_received_kwh: 0.0,
        }
    }

    #[test]
    fn ci_uses_student_t() {
        // n = 10: t(0.975, 9) = 2.262157
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let s = summarize(&xs).unwrap();
        assert_eq!(s.mean, 5.5);
        let sd = variance(&xs).sqrt();
        assert_abs_diff_eq!(s.ci95.unwrap(), 2.262157 * sd / 10f64.sqrt(), epsilon = 1e-5);
        assert_eq!(summarize(&[4.0]).unwrap().ci95, None);
        assert_eq!(summarize(&[]), None);
    }

    #[test]
    fn welch_detects_clear_differences() {
        let a = [10.0, 11.0, 12.0, 10.5, 11.5];
        let b = [1.0, 2.0, 1.5, 2.5, 1.2];
        assert!(welch_greater_p(&a, &b) < 1e-4);
        assert!(welch_greater_p(&b, &a) > 0.999);
        assert!((welch_greater_p(&a, &a) - 0.5).abs() < 1e-12);
        assert_eq!(welch_greater_p(&[2.0, 2.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn one_run_gives_two_rows() {
        let mut r = blank(0);
        r.average_waiting_time = Some(600.0);
        r.cs_utilization_kwh = vec![10.0, 0.0];
        let csv = scenario_csv("base", Mode::Pull, &[r]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        let width = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        assert!(lines[1].contains(",600,"));
        assert!(lines[2].starts_with("base,pull,aggregate,,,1,600,,"));
        assert!(lines[2].ends_with(",10;0,ok"));
    }

    #[test]
    fn undefined_metrics_are_blank_not_zero() {
        let a = aggregate(&[blank(0), blank(1)]);
        assert_eq!(a.scalars[0], None);
        assert_eq!(a.scalars[2].unwrap().mean, 0.0);
        let mut one = blank(0);
        one.average_freshness = Some(3.0);
        let a = aggregate(&[one, blank(1)]);
        assert_eq!(a.scalars[3].unwrap().n, 1);
    }

    #[test]
    fn error_rows_keep_column_count() {
        let width = csv_header().split(',').count();
        assert_eq!(csv_error_row("x", None, None, "bad").split(',').count(), width);
    }
}
