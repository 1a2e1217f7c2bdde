//! Information-access probability on a straight road lined with RSUs:
//! closed-form bound expressions for both modes and a Monte Carlo model of the
//! same geometry. The Monte Carlo model shares one publication phase across
//! all RSUs, so it does not reproduce the product-form expressions term by
//! term; it is meant for comparing modes and trends.
//!
//! The road starts at x = 0 where the vehicle sits at t = 0 and drives at a
//! constant speed. RSU `i` (1-based) stands at `F + (i - 1) S`. Stations
//! publish synchronously every `T` seconds from a phase drawn uniformly
//! from `[0, T)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StraightRoadParams {
    /// RSU radius R (m).
    pub rsu_radius: f64,
    /// Vehicle range L (m).
    pub ev_range: f64,
    /// Publication interval T (s).
    pub interval: f64,
    /// Vehicle speed V (m/s).
    pub speed: f64,
    /// Inter-RSU spacing S (m).
    pub spacing: f64,
    /// Start to first RSU F (m).
    pub first_offset: f64,
    /// Number of RSUs N.
    pub rsu_count: u32,
}

impl StraightRoadParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("R", self.rsu_radius),
            ("L", self.ev_range),
            ("T", self.interval),
            ("V", self.speed),
            ("S", self.spacing),
            ("F", self.first_offset),
        ];
        for (name, v) in named {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.rsu_count == 0 {
            return Err(Error::Domain("N must be at least 1".into()));
        }
        Ok(())
    }

    fn vt(&self) -> f64 {
        self.speed * self.interval
    }

    /// Parses `R=150 L=150 T=100 V=20 S=600 F=300 N=3` (any order).
    pub fn parse(line: &str) -> Result<Self> {
        let mut vals: [Option<f64>; 7] = [None; 7];
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Domain(format!("expected key=value, got `{tok}`")))?;
            let idx = match k {
                "R" => 0,
                "L" => 1,
                "T" => 2,
                "V" => 3,
                "S" => 4,
                "F" => 5,
                "N" => 6,
                _ => return Err(Error::Domain(format!("unknown parameter `{k}`"))),
            };
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Domain(format!("`{v}` is not a number")))?;
            vals[idx] = Some(x);
        }
        let get = |i: usize, n: &str| vals[i].ok_or_else(|| Error::Domain(format!("missing {n}")));
        let n = get(6, "N")?;
        if n < 1.0 || n.fract() != 0.0 {
            return Err(Error::Domain(format!("N must be a positive integer, got {n}")));
        }
        let p = StraightRoadParams {
            rsu_radius: get(0, "R")?,
            ev_range: get(1, "L")?,
            interval: get(2, "T")?,
            speed: get(3, "V")?,
            spacing: get(4, "S")?,
            first_offset: get(5, "F")?,
            rsu_count: n as u32,
        };
        p.validate()?;
        Ok(p)
    }
}

fn probability(name: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{name} = {v} lies outside [0, 1]")))
    }
}

/// Product-form bound on the push-mode access probability.
pub fn p_push_bound(p: &StraightRoadParams) -> Result<f64> {
    p.validate()?;
    let first = probability("(F+R)/(VT)", (p.first_offset + p.rsu_radius) / p.vt())?;
    let later = probability(
        "4R^2/(VTS)",
        4.0 * p.rsu_radius * p.rsu_radius / (p.vt() * p.spacing),
    )?;
    Ok(1.0 - (1.0 - first) * (1.0 - later).powi(p.rsu_count as i32 - 1))
}

/// Product-form bound on the pull-mode access probability.
pub fn p_pull_bound(p: &StraightRoadParams) -> Result<f64> {
    p.validate()?;
    let mut miss = 1.0;
    for i in 1..=p.rsu_count {
        let term = ((i - 1) as f64 * p.spacing + p.first_offset + p.ev_range) / p.vt();
        miss *= 1.0 - probability(&format!("pull term {i}"), term)?;
    }
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPair {
    pub push: f64,
    pub pull: f64,
}

/// Both bounds under equal ranges and non-overlapping coverage; pull is
/// never below push there.
pub fn push_vs_pull_bound_gap(p: &StraightRoadParams) -> Result<BoundPair> {
    if p.rsu_radius != p.ev_range {
        return Err(Error::Domain(format!(
            "comparison needs R = L, got R = {}, L = {}",
            p.rsu_radius, p.ev_range
        )));
    }
    if 2.0 * p.rsu_radius > p.spacing {
        return Err(Error::Domain(format!(
            "coverage overlaps: 2R = {} > S = {}",
            2.0 * p.rsu_radius,
            p.spacing
        )));
    }
    let pair = BoundPair {
        push: p_push_bound(p)?,
        pull: p_pull_bound(p)?,
    };
    assert!(
        pair.pull >= pair.push - 1e-12,
        "pull bound {} below push bound {} for {p:?}",
        pair.pull,
        pair.push
    );
    Ok(pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessMode {
    Push,
    Pull,
}

/// Whether the vehicle obtains information for a given publication phase.
pub fn access_succeeds(p: &StraightRoadParams, mode: AccessMode, phase: f64) -> bool {
    let v = p.speed;
    (0..p.rsu_count).any(|i| {
        let x = p.first_offset + i as f64 * p.spacing;
        match mode {
            AccessMode::Push => {
                // first publication at or after coverage entry, if still inside
                let enter = ((x - p.rsu_radius) / v).max(0.0);
                let exit = (x + p.rsu_radius) / v;
                let k = ((enter - phase) / p.interval).ceil().max(0.0);
                phase + k * p.interval <= exit
            }
            AccessMode::Pull => phase <= (x + p.rsu_radius.min(p.ev_range)) / v,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub probability: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub half_width: f64,
    pub trials: u64,
    pub successes: u64,
}

impl Estimate {
    pub fn lower(&self) -> f64 {
        self.probability - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.probability + self.half_width
    }
}

const CHUNK: u64 = 1 << 14;

fn chunk_seed(seed: u64, chunk: u64) -> u64 {
    let mut z = seed ^ chunk.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Monte Carlo estimate of the access probability. Trials are split into
/// fixed chunks with per-chunk seeds, so the result depends only on
/// `(params, mode, trials, seed)`.
pub fn monte_carlo_access(p: &StraightRoadParams, mode: AccessMode, trials: u64, seed: u64) -> Result<Estimate> {
    p.validate()?;
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    let chunks = trials.div_ceil(CHUNK);
    let successes: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(trials - c * CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed(seed, c));
            (0..n)
                .filter(|_| access_succeeds(p, mode, rng.gen_range(0.0..p.interval)))
                .count() as u64
        })
        .sum();
    let prob = successes as f64 / trials as f64;
    Ok(Estimate {
        probability: prob,
        half_width: 1.96 * (prob * (1.0 - prob) / trials as f64).sqrt(),
        trials,
        successes,
    })
}

/// Parameter sets of a params file: one `R=.. L=.. T=.. V=.. S=.. F=.. N=..`
/// line each, `#` comments and blank lines skipped.
pub fn parse_params_file(text: &str) -> Result<Vec<StraightRoadParams>> {
    text.lines()
        .enumerate()
        .map(|(i, raw)| (i, raw.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            StraightRoadParams::parse(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub const BOUNDS_CSV_HEADER: &str = "set,R,L,T,V,S,F,N,push_bound,pull_bound,push_mc,push_mc_ci95,pull_mc,pull_mc_ci95,status";

/// One CSV row per parameter set with both bounds and both Monte Carlo
/// estimates. A bound outside its domain leaves its cell empty and is noted
/// in `status`.
pub fn bounds_csv(sets: &[StraightRoadParams], trials: u64, seed: u64) -> Result<String> {
    let mut out = String::from(BOUNDS_CSV_HEADER);
    out.push('\n');
    for (i, p) in sets.iter().enumerate() {
        let push = p_push_bound(p);
        let pull = p_pull_bound(p);
        let mc_push = monte_carlo_access(p, AccessMode::Push, trials, seed)?;
        let mc_pull = monte_carlo_access(p, AccessMode::Pull, trials, seed)?;
        let notes: Vec<String> = [("push", &push), ("pull", &pull)]
            .iter()
            .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
            .collect();
        let cell = |r: &Result<f64>| r.as_ref().map(f64::to_string).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            i,
            p.rsu_radius,
            p.ev_range,
            p.interval,
            p.speed,
            p.spacing,
            p.first_offset,
            p.rsu_count,
            cell(&push),
            cell(&pull),
            mc_push.probability,
            mc_push.half_width,
            mc_pull.probability,
            mc_pull.half_width,
            if notes.is_empty() { "ok".to_string() } else { format!("\"{}\"", notes.join("; ").replace('"', "'")) },
        ));
    }
    Ok(out)
}
