//! Scenario configuration and its `key = value` file format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::comms::{PublicationSchedule, RadioParams};
use crate::decision::DecisionPolicy;
use crate::domain::{units, Joules};
use crate::error::{Error, Result};
use crate::roadnet::{grid_graph, GridSpec, NodeId, RoadGraph};
use crate::station::EnergyBudget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Push,
    Pull,
    AdvancedPull,
    Ideal,
}

impl Mode {
    pub fn policy(self) -> DecisionPolicy {
        match self {
            Mode::AdvancedPull => DecisionPolicy::MinExpectedWait,
            _ => DecisionPolicy::MinQueuingTime,
        }
    }

    pub fn uses_contacts(self) -> bool {
        matches!(self, Mode::Pull | Mode::AdvancedPull)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Push => "push",
            Mode::Pull => "pull",
            Mode::AdvancedPull => "apull",
            Mode::Ideal => "ideal",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "push" => Ok(Mode::Push),
            "pull" => Ok(Mode::Pull),
            "apull" | "advanced_pull" | "advancedpull" => Ok(Mode::AdvancedPull),
            "ideal" => Ok(Mode::Ideal),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (push, pull, apull, ideal)"
            ))),
        }
    }
}

/// Experiment input. Units at this boundary are the human ones (kWh, kW,
/// km/h, km); accessors convert to SI.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub graph_file: Option<PathBuf>,
    pub grid_width: usize,
    pub grid_height: usize,
    pub grid_spacing_m: f64,
    pub cs_nodes: Option<Vec<u32>>,
    pub rsu_nodes: Option<Vec<u32>>,
    pub rsu_min_separation_m: f64,
    pub ev_count: usize,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
    pub battery_kwh: f64,
    pub max_range_km: f64,
    pub soc_threshold: f64,
    pub initial_soc_min: f64,
    pub initial_soc_max: f64,
    pub cs_count: usize,
    /// `None` means unlimited.
    pub cs_energy_budget_kwh: Option<f64>,
    pub slots: usize,
    pub power_kw: f64,
    pub rsu_count: usize,
    pub rsu_radius_m: f64,
    pub ev_range_m: f64,
    pub publication_interval_s: f64,
    pub publication_phase_s: f64,
    pub reservation_grace_s: f64,
    pub duration_s: f64,
    pub runs: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: Mode::Pull,
            graph_file: None,
            grid_width: 9,
            grid_height: 7,
            grid_spacing_m: 500.0,
            cs_nodes: None,
            rsu_nodes: None,
            rsu_min_separation_m: 600.0,
            ev_count: 100,
            speed_min_kmh: 30.0,
            speed_max_kmh: 50.0,
            battery_kwh: 30.0,
            max_range_km: 161.0,
            soc_threshold: 0.40,
            initial_soc_min: 0.40,
            initial_soc_max: 1.0,
            cs_count: 5,
            cs_energy_budget_kwh: Some(3000.0),
            slots: 3,
            power_kw: 62.0,
            rsu_count: 7,
            rsu_radius_m: 300.0,
            ev_range_m: 300.0,
            publication_interval_s: 100.0,
            publication_phase_s: 0.0,
            reservation_grace_s: 600.0,
            duration_s: 43_200.0,
            runs: 10,
            seed: 1,
        }
    }
}

/// Every recognised key, in the order [`ScenarioConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "mode",
    "graph_file",
    "grid_width",
    "grid_height",
    "grid_spacing_m",
    "cs_nodes",
    "rsu_nodes",
    "rsu_min_separation_m",
    "ev_count",
    "speed_min_kmh",
    "speed_max_kmh",
    "battery_kwh",
    "max_range_km",
    "soc_threshold",
    "initial_soc_min",
    "initial_soc_max",
    "cs_count",
    "cs_energy_budget_kwh",
    "slots",
    "power_kw",
    "rsu_count",
    "rsu_radius_m",
    "ev_range_m",
    "publication_interval_s",
    "publication_phase_s",
    "reservation_grace_s",
    "duration_s",
    "runs",
    "seed",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Option<Vec<u32>>> {
    if v.is_empty() || v.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    v.split(',')
        .map(|s| parse_num(key, s.trim()))
        .collect::<Result<Vec<u32>>>()
        .map(Some)
}

fn show_list(l: &Option<Vec<u32>>) -> String {
    match l {
        None => "auto".into(),
        Some(v) => v.iter().map(u32::to_string).collect::<Vec<_>>().join(","),
    }
}

impl ScenarioConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "mode" => self.mode = v.parse()?,
            "graph_file" => {
                self.graph_file = (!v.is_empty() && v != "none").then(|| PathBuf::from(v));
            }
            "grid_width" => self.grid_width = parse_num(key, v)?,
            "grid_height" => self.grid_height = parse_num(key, v)?,
            "grid_spacing_m" => self.grid_spacing_m = parse_num(key, v)?,
            "cs_nodes" => self.cs_nodes = parse_list(key, v)?,
            "rsu_nodes" => self.rsu_nodes = parse_list(key, v)?,
            "rsu_min_separation_m" => self.rsu_min_separation_m = parse_num(key, v)?,
            "ev_count" => self.ev_count = parse_num(key, v)?,
            "speed_min_kmh" => self.speed_min_kmh = parse_num(key, v)?,
            "speed_max_kmh" => self.speed_max_kmh = parse_num(key, v)?,
            "battery_kwh" => self.battery_kwh = parse_num(key, v)?,
            "max_range_km" => self.max_range_km = parse_num(key, v)?,
            "soc_threshold" => self.soc_threshold = parse_num(key, v)?,
            "initial_soc_min" => self.initial_soc_min = parse_num(key, v)?,
            "initial_soc_max" => self.initial_soc_max = parse_num(key, v)?,
            "cs_count" => self.cs_count = parse_num(key, v)?,
            "cs_energy_budget_kwh" => {
                self.cs_energy_budget_kwh = if v.eq_ignore_ascii_case("unlimited") {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "slots" => self.slots = parse_num(key, v)?,
            "power_kw" => self.power_kw = parse_num(key, v)?,
            "rsu_count" => self.rsu_count = parse_num(key, v)?,
            "rsu_radius_m" => self.rsu_radius_m = parse_num(key, v)?,
            "ev_range_m" => self.ev_range_m = parse_num(key, v)?,
            "publication_interval_s" => self.publication_interval_s = parse_num(key, v)?,
            "publication_phase_s" => self.publication_phase_s = parse_num(key, v)?,
            "reservation_grace_s" => self.reservation_grace_s = parse_num(key, v)?,
            "duration_s" => self.duration_s = parse_num(key, v)?,
            "runs" => self.runs = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "mode" => self.mode.to_string(),
            "graph_file" => self
                .graph_file
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
            "grid_width" => self.grid_width.to_string(),
            "grid_height" => self.grid_height.to_string(),
            "grid_spacing_m" => self.grid_spacing_m.to_string(),
            "cs_nodes" => show_list(&self.cs_nodes),
            "rsu_nodes" => show_list(&self.rsu_nodes),
            "rsu_min_separation_m" => self.rsu_min_separation_m.to_string(),
            "ev_count" => self.ev_count.to_string(),
            "speed_min_kmh" => self.speed_min_kmh.to_string(),
            "speed_max_kmh" => self.speed_max_kmh.to_string(),
            "battery_kwh" => self.battery_kwh.to_string(),
            "max_range_km" => self.max_range_km.to_string(),
            "soc_threshold" => self.soc_threshold.to_string(),
            "initial_soc_min" => self.initial_soc_min.to_string(),
            "initial_soc_max" => self.initial_soc_max.to_string(),
            "cs_count" => self.cs_count.to_string(),
            "cs_energy_budget_kwh" => self
                .cs_energy_budget_kwh
                .map_or("unlimited".into(), |b| b.to_string()),
            "slots" => self.slots.to_string(),
            "power_kw" => self.power_kw.to_string(),
            "rsu_count" => self.rsu_count.to_string(),
            "rsu_radius_m" => self.rsu_radius_m.to_string(),
            "ev_range_m" => self.ev_range_m.to_string(),
            "publication_interval_s" => self.publication_interval_s.to_string(),
            "publication_phase_s" => self.publication_phase_s.to_string(),
            "reservation_grace_s" => self.reservation_grace_s.to_string(),
            "duration_s" => self.duration_s.to_string(),
            "runs" => self.runs.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Parses a config file on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        for (line_no, key, value) in key_values(text)? {
            cfg.set(&key, &value).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative map paths resolve against the config file's directory
        if let (Some(g), Some(dir)) = (cfg.graph_file.as_mut(), path.parent()) {
            if g.is_relative() {
                *g = dir.join(&*g);
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let positive = [
            ("grid_spacing_m", self.grid_spacing_m),
            ("speed_min_kmh", self.speed_min_kmh),
            ("speed_max_kmh", self.speed_max_kmh),
            ("battery_kwh", self.battery_kwh),
            ("max_range_km", self.max_range_km),
            ("power_kw", self.power_kw),
            ("rsu_radius_m", self.rsu_radius_m),
            ("ev_range_m", self.ev_range_m),
            ("publication_interval_s", self.publication_interval_s),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("rsu_min_separation_m", self.rsu_min_separation_m),
            ("reservation_grace_s", self.reservation_grace_s),
            ("duration_s", self.duration_s),
        ];
        for (k, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{k} must be non-negative, got {v}"));
            }
        }
        if self.speed_min_kmh > self.speed_max_kmh {
            return bad("speed_min_kmh exceeds speed_max_kmh".into());
        }
        for (k, v) in [
            ("soc_threshold", self.soc_threshold),
            ("initial_soc_min", self.initial_soc_min),
            ("initial_soc_max", self.initial_soc_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{k} must lie in [0, 1], got {v}"));
            }
        }
        if self.initial_soc_min > self.initial_soc_max {
            return bad("initial_soc_min exceeds initial_soc_max".into());
        }
        if let Some(b) = self.cs_energy_budget_kwh {
            if !(b >= 0.0) {
                return bad(format!("cs_energy_budget_kwh must be non-negative, got {b}"));
            }
        }
        if self.slots == 0 {
            return bad("slots must be at least 1".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.graph_file.is_none() && self.cs_nodes.is_none() && self.cs_count == 0 {
            return bad("at least one charging station is required".into());
        }
        PublicationSchedule::new(self.publication_interval_s, self.publication_phase_s)?;
        RadioParams::new(self.rsu_radius_m, self.ev_range_m)?;
        Ok(())
    }

    pub fn schedule(&self) -> PublicationSchedule {
        PublicationSchedule::new(self.publication_interval_s, self.publication_phase_s)
            .expect("validated")
    }

    pub fn radio(&self) -> RadioParams {
        RadioParams::new(self.rsu_radius_m, self.ev_range_m).expect("validated")
    }

    pub fn battery_max(&self) -> Joules {
        units::kwh(self.battery_kwh)
    }

    /// Joules per meter.
    pub fn consumption_rate(&self) -> f64 {
        units::kwh(self.battery_kwh) / units::km(self.max_range_km)
    }

    pub fn power(&self) -> f64 {
        units::kw(self.power_kw)
    }

    pub fn energy_budget(&self) -> EnergyBudget {
        match self.cs_energy_budget_kwh {
            Some(b) => EnergyBudget::Capped(units::kwh(b)),
            None => EnergyBudget::Unlimited,
        }
    }

    /// Road graph with CS and RSU placements applied. Synthetic grids place
    /// stations and RSUs from the master seed, so every run of a scenario
    /// shares one layout.
    pub fn build_graph(&self) -> Result<RoadGraph> {
        let graph = match &self.graph_file {
            Some(path) => RoadGraph::load(path)?,
            None => grid_graph(&GridSpec {
                width: self.grid_width,
                height: self.grid_height,
                spacing: self.grid_spacing_m,
                cs_count: if self.cs_nodes.is_some() { 0 } else { self.cs_count },
                rsu_count: if self.rsu_nodes.is_some() { 0 } else { self.rsu_count },
                min_rsu_separation: self.rsu_min_separation_m,
                seed: self.seed,
            })?,
        };
        let resolve = |labels: &[u32]| -> Result<Vec<NodeId>> {
            labels
                .iter()
                .map(|&l| {
                    graph
                        .node_by_label(l)
                        .ok_or_else(|| Error::Config(format!("placement node {l} not in graph")))
                })
                .collect()
        };
        let cs = match &self.cs_nodes {
            Some(l) => resolve(l)?,
            None => graph.cs_nodes().to_vec(),
        };
        let rsu = match &self.rsu_nodes {
            Some(l) => resolve(l)?,
            None => graph.rsu_nodes().to_vec(),
        };
        if cs.is_empty() {
            return Err(Error::Config("scenario has no charging station".into()));
        }
        Ok(graph.with_placements(cs, rsu))
    }
}

/// `(line number, key, value)` triples of a `key = value` file.
pub fn key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_scenario() {
        let c = ScenarioConfig::default();
        assert_eq!(c.ev_count, 100);
        assert_eq!((c.speed_min_kmh, c.speed_max_kmh), (30.0, 50.0));
        assert_eq!((c.battery_kwh, c.max_range_km), (30.0, 161.0));
        assert_eq!(c.soc_threshold, 0.40);
        assert_eq!((c.cs_count, c.slots, c.power_kw), (5, 3, 62.0));
        assert_eq!(c.cs_energy_budget_kwh, Some(3000.0));
        assert_eq!((c.rsu_count, c.rsu_radius_m, c.ev_range_m), (7, 300.0, 300.0));
        assert_eq!((c.publication_interval_s, c.duration_s, c.runs), (100.0, 43_200.0, 10));
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = ScenarioConfig {
            mode: Mode::AdvancedPull,
            cs_nodes: Some(vec![1, 5, 9]),
            cs_energy_budget_kwh: None,
            ..ScenarioConfig::default()
        };
        let back = ScenarioConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(matches!(ScenarioConfig::parse("colour = red"), Err(Error::Parse { line: 1, .. })));
        assert!(ScenarioConfig::parse("# c\nev_count = many").is_err());
        assert!(ScenarioConfig::parse("power_kw = 0").is_err());
        assert!(ScenarioConfig::parse("speed_min_kmh = 60").is_err());
        assert!(ScenarioConfig::parse("publication_phase_s = 100").is_err());
        assert!(ScenarioConfig::parse("just words").is_err());
    }

    #[test]
    fn modes_parse() {
        for m in [Mode::Push, Mode::Pull, Mode::AdvancedPull, Mode::Ideal] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("broadcast".parse::<Mode>().is_err());
        assert_eq!(Mode::AdvancedPull.policy(), DecisionPolicy::MinExpectedWait);
        assert_eq!(Mode::Ideal.policy(), DecisionPolicy::MinQueuingTime);
    }

    #[test]
    fn explicit_placements_override_grid() {
        let mut c = ScenarioConfig {
            cs_nodes: Some(vec![0, 62]),
            rsu_nodes: Some(vec![31]),
            ..ScenarioConfig::default()
        };
        let g = c.build_graph().unwrap();
        assert_eq!(g.cs_nodes(), &[NodeId(0), NodeId(62)]);
        assert_eq!(g.rsu_nodes(), &[NodeId(31)]);
        c.cs_nodes = Some(vec![999]);
        assert!(c.build_graph().is_err());
    }
}
