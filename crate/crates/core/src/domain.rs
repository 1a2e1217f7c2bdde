//! Entity types shared by every other module, plus the small amount of
//! battery arithmetic they all need.
//!
//! Everything inside the simulator is SI: joules, watts, seconds, meters and
//! meters per second. Conversions happen only at the configuration and report
//! boundary through [`units`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::roadnet::{Location, Route};

pub type Seconds = f64;
pub type Joules = f64;
pub type Watts = f64;
pub type Meters = f64;
pub type MetersPerSecond = f64;

pub mod units {
    use super::{Joules, MetersPerSecond, Watts};

    pub const JOULES_PER_KWH: f64 = 3.6e6;
    pub const WATTS_PER_KW: f64 = 1e3;
    pub const KMH_PER_MPS: f64 = 3.6;

    pub fn kwh(v: f64) -> Joules {
        v * JOULES_PER_KWH
    }

    pub fn to_kwh(j: Joules) -> f64 {
        j / JOULES_PER_KWH
    }

    pub fn kw(v: f64) -> Watts {
        v * WATTS_PER_KW
    }

    pub fn to_kw(w: Watts) -> f64 {
        w / WATTS_PER_KW
    }

    pub fn kmh(v: f64) -> MetersPerSecond {
        v / KMH_PER_MPS
    }

    pub fn to_kmh(v: MetersPerSecond) -> f64 {
        v * KMH_PER_MPS
    }

    pub fn km(v: f64) -> f64 {
        v * 1e3
    }
}

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident, $prefix:literal) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(EvId, "ev");
id_type!(
    /// Index of a charging station in the road graph's CS list.
    CsId,
    "cs"
);
id_type!(
    /// Index of a road-side unit in the road graph's RSU list.
    RsuId,
    "rsu"
);

/// Opaque reservation handle. Carries no vehicle identity; the station keys
/// its reservation book by it so a later update can replace the entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReservationToken(pub u64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReservationEntry {
    pub token: ReservationToken,
    /// Expected absolute arrival time at the station.
    pub arrival_time: Seconds,
    /// Charging time needed on arrival.
    pub charge_duration: Seconds,
}

impl ReservationEntry {
    pub fn anonymized(&self) -> ReservedSlot {
        ReservedSlot {
            arrival_time: self.arrival_time,
            charge_duration: self.charge_duration,
        }
    }
}

/// One published reservation: arrival and charge duration, nothing else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReservedSlot {
    pub arrival_time: Seconds,
    pub charge_duration: Seconds,
}

/// Condition snapshot a station publishes once per interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Publication {
    pub cs: CsId,
    pub issued_at: Seconds,
    /// Relative estimate in seconds (not an absolute time).
    pub queuing_time: Seconds,
    /// Absolute time each slot becomes free, ascending.
    pub slot_available_times: Vec<Seconds>,
    /// Sorted by arrival time.
    pub reservations: Vec<ReservedSlot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoRecord {
    pub publication: Publication,
    pub received_at: Seconds,
}

/// Latest publication per station, as kept by an RSU cache or an EV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InfoMap {
    entries: BTreeMap<CsId, InfoRecord>,
}

impl InfoMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `publication` unless a strictly newer one is already held.
    /// Returns whether the map changed.
    pub fn store(&mut self, publication: Publication, now: Seconds) -> bool {
        match self.entries.get(&publication.cs) {
            Some(held) if held.publication.issued_at > publication.issued_at => false,
            _ => {
                self.entries.insert(
                    publication.cs,
                    InfoRecord {
                        publication,
                        received_at: now,
                    },
                );
                true
            }
        }
    }

    /// Merges every entry of `other`, keeping the newer publication per CS.
    pub fn merge_from(&mut self, other: &InfoMap, now: Seconds) {
        for rec in other.entries.values() {
            self.store(rec.publication.clone(), now);
        }
    }

    pub fn get(&self, cs: CsId) -> Option<&InfoRecord> {
        self.entries.get(&cs)
    }

    pub fn publication(&self, cs: CsId) -> Option<&Publication> {
        self.entries.get(&cs).map(|r| &r.publication)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CsId, &InfoRecord)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EvMode {
    Roaming,
    HeadingToCs(CsId),
    Waiting(CsId),
    Charging(CsId),
    /// Battery ran out on the road; the vehicle no longer moves.
    Stranded,
}

impl EvMode {
    /// Legal transitions of the charging cycle. `Waiting -> HeadingToCs` is
    /// the detour taken when a station turns the vehicle away, and
    /// `Waiting -> Roaming` the case where no station is left to try.
    pub fn can_become(self, next: EvMode) -> bool {
        use EvMode::*;
        matches!(
            (self, next),
            (Roaming, HeadingToCs(_))
                | (HeadingToCs(_), Waiting(_))
                | (Waiting(_), Charging(_))
                | (Waiting(_), HeadingToCs(_))
                | (Waiting(_), Roaming)
                | (Charging(_), Roaming)
                | (Roaming, Stranded)
                | (HeadingToCs(_), Stranded)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingReservation {
    pub cs: CsId,
    pub entry: ReservationEntry,
    pub published: bool,
}

/// The route being driven and how far along it the vehicle is.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub route: Route,
    pub travelled: Meters,
}

impl Trip {
    pub fn new(route: Route) -> Self {
        Trip {
            route,
            travelled: 0.0,
        }
    }

    pub fn remaining(&self) -> Meters {
        (self.route.length - self.travelled).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct EvState {
    pub id: EvId,
    pub location: Location,
    pub speed: MetersPerSecond,
    pub battery_max: Joules,
    pub battery_cur: Joules,
    pub soc_threshold: f64,
    /// Energy drawn per meter driven.
    pub consumption_rate: f64,
    pub mode: EvMode,
    pub info_map: InfoMap,
    pub pending_reservation: Option<PendingReservation>,
    pub trip: Option<Trip>,
    /// Stations that turned this vehicle away for lack of energy.
    pub exhausted_cs: BTreeSet<CsId>,
}

impl EvState {
    pub fn new(
        id: EvId,
        location: Location,
        speed: MetersPerSecond,
        battery_max: Joules,
        battery_cur: Joules,
        consumption_rate: f64,
    ) -> Self {
        EvState {
            id,
            location,
            speed,
            battery_max,
            battery_cur: battery_cur.clamp(0.0, battery_max),
            soc_threshold: 0.40,
            consumption_rate,
            mode: EvMode::Roaming,
            info_map: InfoMap::new(),
            pending_reservation: None,
            trip: None,
            exhausted_cs: BTreeSet::new(),
        }
    }

    pub fn deficit(&self) -> Joules {
        self.battery_max - self.battery_cur
    }

    pub fn needs_charge(&self) -> bool {
        soc(self) <= self.soc_threshold
    }

    /// Moves to `next`, dropping the pending reservation on leaving
    /// `HeadingToCs`. Panics on a transition outside the charging cycle.
    pub fn set_mode(&mut self, next: EvMode) {
        assert!(
            self.mode.can_become(next),
            "{}: illegal mode transition {:?} -> {:?}",
            self.id,
            self.mode,
            next
        );
        if !matches!(next, EvMode::HeadingToCs(_)) {
            self.pending_reservation = None;
        }
        self.mode = next;
    }
}

pub fn soc(ev: &EvState) -> f64 {
    (ev.battery_cur / ev.battery_max).clamp(0.0, 1.0)
}

/// Time to put `deficit` joules into a battery at a constant `power`.
pub fn charge_duration(deficit: Joules, power: Watts) -> Result<Seconds> {
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::Config(format!(
            "charging power must be positive, got {power} W"
        )));
    }
    if deficit < 0.0 || !deficit.is_finite() {
        return Err(Error::Config(format!(
            "energy deficit must be non-negative, got {deficit} J"
        )));
    }
    Ok(deficit / power)
}

/// Joules per meter for a vehicle that uses `mec` over its full range `mtd`.
pub fn consumption_per_meter(mec: Joules, mtd: Meters) -> Result<f64> {
    if !(mtd > 0.0) || !mtd.is_finite() {
        return Err(Error::Config(format!(
            "maximum travelling distance must be positive, got {mtd} m"
        )));
    }
    if mec < 0.0 || !mec.is_finite() {
        return Err(Error::Config(format!(
            "battery capacity must be non-negative, got {mec} J"
        )));
    }
    Ok(mec / mtd)
}
