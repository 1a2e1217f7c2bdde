//! Publish/subscribe dissemination through road-side units.
//!
//! Stations publish to every RSU over lossless links. Vehicles receive from
//! an RSU in one of three ways:
//!
//! * push: whatever the RSU is relaying at a publication instant, if the
//!   vehicle is within the RSU radius at that instant;
//! * pull: the RSU's cached copy, queried once per continuous contact within
//!   `min(R, L)`;
//! * ideal: a fresh snapshot of every station straight from a global
//!   controller, used only as a baseline.
//!
//! In the advanced pull mode a vehicle also hands its reservation to the
//! first RSU it meets, which forwards it to the chosen station.

use std::collections::BTreeSet;

use crate::domain::{EvId, EvMode, EvState, InfoMap, Meters, Publication, RsuId, Seconds};
use crate::error::{Error, Result};
use crate::roadnet::{NodeId, Point, RoadGraph};
use crate::station::StationState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    /// RSU coverage radius R.
    pub rsu_radius: Meters,
    /// Vehicle query/receive range L.
    pub ev_range: Meters,
}

impl RadioParams {
    pub fn new(rsu_radius: Meters, ev_range: Meters) -> Result<Self> {
        if !(rsu_radius > 0.0) || !(ev_range > 0.0) {
            return Err(Error::Config(format!(
                "radio ranges must be positive (R = {rsu_radius}, L = {ev_range})"
            )));
        }
        Ok(RadioParams {
            rsu_radius,
            ev_range,
        })
    }

    /// Like [`new`](Self::new) but insists on `L < R`, the ordering assumed
    /// when comparing the two modes analytically.
    pub fn strict(rsu_radius: Meters, ev_range: Meters) -> Result<Self> {
        let p = Self::new(rsu_radius, ev_range)?;
        if !(ev_range < rsu_radius) {
            return Err(Error::Config(format!(
                "expected L < R, got L = {ev_range}, R = {rsu_radius}"
            )));
        }
        Ok(p)
    }

    pub fn pull_range(&self) -> Meters {
        self.rsu_radius.min(self.ev_range)
    }
}

/// Synchronized publication instants `phase + k * interval`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublicationSchedule {
    pub interval: Seconds,
    pub phase: Seconds,
}

impl PublicationSchedule {
    pub fn new(interval: Seconds, phase: Seconds) -> Result<Self> {
        if !(interval > 0.0) || !interval.is_finite() {
            return Err(Error::Config(format!(
                "publication interval must be positive, got {interval}"
            )));
        }
        if !(0.0..interval).contains(&phase) {
            return Err(Error::Config(format!(
                "publication phase must lie in [0, {interval}), got {phase}"
            )));
        }
        Ok(PublicationSchedule { interval, phase })
    }

    /// The `k`-th publication instant.
    pub fn instant(&self, k: u64) -> Seconds {
        self.phase + k as f64 * self.interval
    }

    pub fn is_instant(&self, t: Seconds) -> bool {
        let k = ((t - self.phase) / self.interval).round();
        k >= 0.0 && (self.instant(k as u64) - t).abs() <= 1e-9 * t.abs().max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct RsuState {
    pub id: RsuId,
    pub node: NodeId,
    pub position: Point,
    pub cache: InfoMap,
    /// Vehicles already served during their current contact.
    encounters: BTreeSet<EvId>,
}

impl RsuState {
    pub fn new(id: RsuId, node: NodeId, position: Point) -> Self {
        RsuState {
            id,
            node,
            position,
            cache: InfoMap::new(),
            encounters: BTreeSet::new(),
        }
    }

    pub fn from_graph(graph: &RoadGraph) -> Vec<RsuState> {
        graph
            .rsu_nodes()
            .iter()
            .enumerate()
            .map(|(i, &n)| RsuState::new(RsuId(i as u32), n, graph.point(n)))
            .collect()
    }

    pub fn in_encounter(&self, ev: EvId) -> bool {
        self.encounters.contains(&ev)
    }

    /// The vehicle left coverage; its next entry is a new encounter.
    pub fn end_encounter(&mut self, ev: EvId) {
        self.encounters.remove(&ev);
    }
}

/// Snapshots every station at `now` and replaces each RSU's cached entry
/// for that station. Stations must already be ticked to `now`.
pub fn publish_round(
    stations: &mut [StationState],
    rsus: &mut [RsuState],
    now: Seconds,
    reservation_grace: Seconds,
) -> Vec<Publication> {
    let round: Vec<Publication> = stations
        .iter_mut()
        .map(|s| s.publish_snapshot(now, reservation_grace))
        .collect();
    for rsu in rsus.iter_mut() {
        for p in &round {
            rsu.cache.store(p.clone(), now);
        }
    }
    round
}

/// Delivers the RSU's aggregated set to every vehicle within `radius` at
/// this instant, skipping stranded ones. Returns the vehicles reached; each
/// counts as one delivery.
pub fn push_deliver(
    rsu: &RsuState,
    evs: &mut [EvState],
    graph: &RoadGraph,
    radius: Meters,
    now: Seconds,
) -> Vec<EvId> {
    if rsu.cache.is_empty() {
        return Vec::new();
    }
    let mut reached = Vec::new();
    for ev in evs.iter_mut().filter(|e| e.mode != EvMode::Stranded) {
        if graph.location_point(&ev.location).distance(rsu.position) <= radius {
            ev.info_map.merge_from(&rsu.cache, now);
            reached.push(ev.id);
        }
    }
    reached
}

/// Answers a vehicle's query with the whole cache, once per encounter.
/// Returns the number of station entries handed over, or `None` when
/// nothing was delivered (already served, or nothing cached yet).
pub fn pull_query(ev: &mut EvState, rsu: &mut RsuState, now: Seconds) -> Option<usize> {
    if rsu.encounters.contains(&ev.id) || rsu.cache.is_empty() {
        return None;
    }
    ev.info_map.merge_from(&rsu.cache, now);
    rsu.encounters.insert(ev.id);
    Some(rsu.cache.len())
}

/// Hands an unpublished pending reservation to its station. Returns whether
/// anything was forwarded.
pub fn forward_reservation(ev: &mut EvState, stations: &mut [StationState]) -> bool {
    match ev.pending_reservation.as_mut() {
        Some(pending) if !pending.published => {
            stations[pending.cs.0 as usize].record_reservation(pending.entry);
            pending.published = true;
            true
        }
        _ => false,
    }
}

/// Real-time view of every station. Stations must be ticked to `now`.
pub fn ideal_query(stations: &[StationState], now: Seconds, reservation_grace: Seconds) -> InfoMap {
    let mut map = InfoMap::new();
    for s in stations {
        map.store(s.snapshot(now, reservation_grace), now);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CsId, EvMode, PendingReservation, ReservationEntry, ReservationToken};
    use crate::roadnet::Location;
    use crate::station::EnergyBudget;

    fn line() -> RoadGraph {
        RoadGraph::new(
            &[(0, 0.0, 0.0), (1, 300.0, 0.0), (2, 301.0, 0.0), (3, 1000.0, 0.0)],
            &[(0, 1, None), (1, 2, None), (2, 3, None)],
            &[3],
            &[0],
        )
        .unwrap()
    }

    fn stations(n: u32) -> Vec<StationState> {
        (0..n)
            .map(|i| StationState::new(CsId(i), NodeId(3), 3, 62_000.0, EnergyBudget::Unlimited).unwrap())
            .collect()
    }

    fn ev_at(id: u32, node: u32) -> EvState {
        EvState::new(EvId(id), Location::Node(NodeId(node)), 10.0, 1e8, 5e7, 670.8)
    }

    fn rsu() -> RsuState {
        RsuState::new(RsuId(0), NodeId(0), Point::new(0.0, 0.0))
    }

    #[test]
    fn publish_fills_caches() {
        let mut css = stations(1);
        let mut rsus = vec![rsu()];
        publish_round(&mut css, &mut rsus, 0.0, 600.0);
        assert_eq!(rsus[0].cache.len(), 1);

        let mut css = stations(5);
        let mut rsus = vec![rsu(), rsu()];
        publish_round(&mut css, &mut rsus, 0.0, 600.0);
        assert!(rsus.iter().all(|r| r.cache.len() == 5));
        for s in &mut css {
            s.tick(100.0);
        }
        publish_round(&mut css, &mut rsus, 100.0, 600.0);
        assert!(rsus[0].cache.iter().all(|(_, r)| r.publication.issued_at == 100.0));
        assert_eq!(rsus[0].cache.len(), 5);
    }

    #[test]
    fn push_uses_closed_disk() {
        let g = line();
        let mut css = stations(1);
        let mut rsus = vec![rsu()];
        publish_round(&mut css, &mut rsus, 0.0, 600.0);
        let mut evs = vec![ev_at(0, 1), ev_at(1, 2)];
        let reached = push_deliver(&rsus[0], &mut evs, &g, 300.0, 0.0);
        assert_eq!(reached, vec![EvId(0)]);
        assert_eq!(evs[0].info_map.len(), 1);
        assert!(evs[1].info_map.is_empty());
    }

    #[test]
    fn push_from_two_rsus_counts_twice() {
        let g = line();
        let mut css = stations(1);
        let mut rsus = vec![rsu(), RsuState::new(RsuId(1), NodeId(1), Point::new(300.0, 0.0))];
        publish_round(&mut css, &mut rsus, 0.0, 600.0);
        let mut evs = vec![ev_at(0, 1)];
        let total: usize = rsus.iter().map(|r| push_deliver(r, &mut evs, &g, 300.0, 0.0).len()).sum();
        assert_eq!(total, 2);
        assert_eq!(evs[0].info_map.len(), 1);
    }

    #[test]
    fn pull_once_per_encounter() {
        let mut r = rsu();
        let mut ev = ev_at(0, 0);
        assert_eq!(pull_query(&mut ev, &mut r, 0.0), None, "cold cache");
        let mut css = stations(2);
        publish_round(&mut css, std::slice::from_mut(&mut r), 0.0, 600.0);
        assert_eq!(pull_query(&mut ev, &mut r, 1.0), Some(2));
        assert_eq!(pull_query(&mut ev, &mut r, 2.0), None);
        r.end_encounter(ev.id);
        assert_eq!(pull_query(&mut ev, &mut r, 3.0), Some(2));
    }

    #[test]
    fn reservation_forwarding() {
        let mut css = stations(2);
        let mut ev = ev_at(0, 0);
        assert!(!forward_reservation(&mut ev, &mut css));
        ev.set_mode(EvMode::HeadingToCs(CsId(1)));
        let entry = ReservationEntry {
            token: ReservationToken(5),
            arrival_time: 100.0,
            charge_duration: 50.0,
        };
        ev.pending_reservation = Some(PendingReservation { cs: CsId(1), entry, published: false });
        assert!(forward_reservation(&mut ev, &mut css));
        assert_eq!(css[1].reservations().count(), 1);
        assert!(!forward_reservation(&mut ev, &mut css));
        // an updated reservation under the same token replaces the entry
        ev.pending_reservation = Some(PendingReservation {
            cs: CsId(1),
            entry: ReservationEntry { arrival_time: 160.0, ..entry },
            published: false,
        });
        assert!(forward_reservation(&mut ev, &mut css));
        assert_eq!(css[1].reservations().count(), 1);
        assert_eq!(css[1].reservations().next().unwrap().arrival_time, 160.0);
        assert_eq!(css[0].reservations().count(), 0);
    }

    #[test]
    fn ideal_equals_snapshot() {
        let mut css = stations(2);
        css[0].arrive(EvId(1), 62_000.0 * 500.0, None);
        for s in &mut css {
            s.tick(100.0);
        }
        let map = ideal_query(&css, 100.0, 600.0);
        assert_eq!(map.len(), 2);
        let fresh = css[0].snapshot(100.0, 600.0);
        assert_eq!(map.publication(CsId(0)).unwrap(), &fresh);
        assert_eq!(fresh.queuing_time, 0.0);
    }

    #[test]
    fn schedule_and_radio_validation() {
        assert!(PublicationSchedule::new(0.0, 0.0).is_err());
        assert!(PublicationSchedule::new(100.0, 100.0).is_err());
        let s = PublicationSchedule::new(100.0, 20.0).unwrap();
        assert_eq!(s.instant(3), 320.0);
        assert!(s.is_instant(420.0) && !s.is_instant(400.0));
        assert!(RadioParams::new(300.0, 0.0).is_err());
        assert!(RadioParams::strict(300.0, 300.0).is_err());
        assert_eq!(RadioParams::strict(300.0, 200.0).unwrap().pull_range(), 200.0);
    }
}
