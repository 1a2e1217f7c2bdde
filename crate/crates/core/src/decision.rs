//! Vehicle-side station choice: minimum queuing time with a nearest-station
//! fallback, reservation creation, and reservation-aware expected waiting
//! time.
//!
//! Every function here sees only the deciding vehicle's own state and the
//! publications it holds. Other vehicles appear solely as anonymous
//! `(arrival, duration)` pairs inside a [`Publication`].

use std::cmp::Ordering;

use crate::domain::{
    CsId, EvState, InfoMap, Joules, Meters, Publication, ReservationEntry, ReservationToken,
    Seconds, Watts,
};
use crate::error::{Error, Result};
use crate::roadnet::{travel_time, RoadGraph, Route};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionPolicy {
    MinQueuingTime,
    MinExpectedWait,
    NearestOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionBasis {
    QueuingTime,
    ExpectedWait,
    /// No usable publication; nearest station by road.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub cs: CsId,
    pub basis: SelectionBasis,
    /// False when no station was reachable on the remaining battery and the
    /// vehicle heads to the nearest one anyway.
    pub reachable: bool,
}

/// Road-distance tables towards every station, computed once per graph.
#[derive(Debug, Clone)]
pub struct StationRoutes {
    tables: Vec<Vec<Meters>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub cs: CsId,
    pub distance: Meters,
    pub travel_time: Seconds,
    pub energy_needed: Joules,
}

impl Candidate {
    fn reachable(&self, battery: Joules) -> bool {
        self.energy_needed <= battery
    }
}

impl StationRoutes {
    pub fn new(graph: &RoadGraph) -> Self {
        StationRoutes {
            tables: graph.cs_nodes().iter().map(|&n| graph.distances_to(n)).collect(),
        }
    }

    pub fn route(&self, graph: &RoadGraph, ev: &EvState, cs: CsId) -> Result<Route> {
        let node = graph.cs_nodes()[cs.0 as usize];
        graph.route_with(&self.tables[cs.0 as usize], &ev.location, node)
    }

    /// Every station the vehicle has not been turned away from, with road
    /// distance, travel time at its current speed, and energy to get there.
    pub fn candidates(&self, graph: &RoadGraph, ev: &EvState) -> Vec<Candidate> {
        self.tables
            .iter()
            .enumerate()
            .map(|(i, table)| {
                let distance = graph.path_length(table, &ev.location);
                Candidate {
                    cs: CsId(i as u32),
                    distance,
                    travel_time: distance / ev.speed,
                    energy_needed: distance * ev.consumption_rate,
                }
            })
            .filter(|c| !ev.exhausted_cs.contains(&c.cs) && c.distance.is_finite())
            .collect()
    }
}

fn by_travel(a: &Candidate, b: &Candidate) -> Ordering {
    a.travel_time
        .total_cmp(&b.travel_time)
        .then(a.cs.cmp(&b.cs))
}

/// Splits candidates into the reachable set, or all of them flagged
/// unreachable when none can be reached.
fn feasible(all: Vec<Candidate>, battery: Joules) -> Result<(Vec<Candidate>, bool)> {
    if all.is_empty() {
        return Err(Error::Config("no charging station available".into()));
    }
    let reachable: Vec<Candidate> = all.iter().copied().filter(|c| c.reachable(battery)).collect();
    if reachable.is_empty() {
        Ok((all, false))
    } else {
        Ok((reachable, true))
    }
}

fn nearest(cands: &[Candidate], reachable: bool) -> Selection {
    let best = cands.iter().min_by(|a, b| by_travel(a, b)).expect("non-empty");
    Selection {
        cs: best.cs,
        basis: SelectionBasis::Nearest,
        reachable,
    }
}

pub fn select_nearest(ev: &EvState, graph: &RoadGraph, routes: &StationRoutes) -> Result<Selection> {
    let (cands, reachable) = feasible(routes.candidates(graph, ev), ev.battery_cur)?;
    Ok(nearest(&cands, reachable))
}

/// Station with the smallest recorded queuing time among those reachable on
/// the current battery; nearest station when nothing has been received or
/// nothing is reachable.
pub fn select_cs_min_queue(
    info: &InfoMap,
    ev: &EvState,
    graph: &RoadGraph,
    routes: &StationRoutes,
) -> Result<Selection> {
    let (cands, reachable) = feasible(routes.candidates(graph, ev), ev.battery_cur)?;
    if !reachable {
        return Ok(nearest(&cands, false));
    }
    Ok(min_queue_among(info, &cands, reachable))
}

fn min_queue_among(info: &InfoMap, cands: &[Candidate], reachable: bool) -> Selection {
    let best = cands
        .iter()
        .filter_map(|c| info.publication(c.cs).map(|p| (p.queuing_time, c)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| by_travel(a.1, b.1)));
    match best {
        Some((_, c)) => Selection {
            cs: c.cs,
            basis: SelectionBasis::QueuingTime,
            reachable,
        },
        None => nearest(cands, reachable),
    }
}

/// Expected arrival time and charge duration on arrival for a vehicle about
/// to drive `route` to a station charging at `power`.
pub fn make_reservation(
    ev: &EvState,
    route: &Route,
    power: Watts,
    now: Seconds,
    token: ReservationToken,
) -> Result<ReservationEntry> {
    let t_travel = travel_time(route, ev.speed)?;
    let en_route = ev.speed * t_travel * ev.consumption_rate;
    let energy = ev.battery_max - ev.battery_cur + en_route;
    if !(power > 0.0) {
        return Err(Error::Config(format!("charging power must be positive, got {power} W")));
    }
    let charge_duration = energy / power;
    if !(charge_duration > 0.0) {
        return Err(Error::NothingToReserve);
    }
    Ok(ReservationEntry {
        token,
        arrival_time: now + t_travel,
        charge_duration,
    })
}

/// Wait a vehicle arriving at `arrival` should expect, after every
/// reservation arriving strictly earlier has claimed the earliest-free slot
/// in FCFS order.
pub fn expected_waiting_time(publication: &Publication, arrival: Seconds) -> Seconds {
    let mut reservations = publication.reservations.clone();
    reservations.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time));
    let mut slots = publication.slot_available_times.clone();
    if slots.is_empty() {
        return 0.0;
    }
    slots.sort_by(f64::total_cmp);
    for r in reservations.iter().filter(|r| r.arrival_time < arrival) {
        let head = slots[0];
        let finish = if head > r.arrival_time {
            head + r.charge_duration
        } else {
            r.arrival_time + r.charge_duration
        };
        slots[0] = finish;
        slots.sort_by(f64::total_cmp);
    }
    (slots[0] - arrival).max(0.0)
}

/// Reachable station minimising [`expected_waiting_time`] at the vehicle's
/// arrival. With no reservation in any held publication the plain queuing
/// time decides; with no publication at all, the nearest station.
pub fn select_cs_min_expected_wait(
    info: &InfoMap,
    ev: &EvState,
    graph: &RoadGraph,
    routes: &StationRoutes,
    now: Seconds,
) -> Result<Selection> {
    let (cands, reachable) = feasible(routes.candidates(graph, ev), ev.battery_cur)?;
    if !reachable {
        return Ok(nearest(&cands, false));
    }
    let known: Vec<(&Candidate, &Publication)> = cands
        .iter()
        .filter_map(|c| info.publication(c.cs).map(|p| (c, p)))
        .collect();
    if known.is_empty() {
        return Ok(nearest(&cands, reachable));
    }
    if known.iter().all(|(_, p)| p.reservations.is_empty()) {
        return Ok(min_queue_among(info, &cands, reachable));
    }
    let (_, best) = known
        .iter()
        .map(|(c, p)| (expected_waiting_time(p, now + c.travel_time), *c))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| by_travel(a.1, b.1)))
        .expect("non-empty");
    Ok(Selection {
        cs: best.cs,
        basis: SelectionBasis::ExpectedWait,
        reachable,
    })
}

pub fn select(
    policy: DecisionPolicy,
    info: &InfoMap,
    ev: &EvState,
    graph: &RoadGraph,
    routes: &StationRoutes,
    now: Seconds,
) -> Result<Selection> {
    match policy {
        DecisionPolicy::MinQueuingTime => select_cs_min_queue(info, ev, graph, routes),
        DecisionPolicy::MinExpectedWait => select_cs_min_expected_wait(info, ev, graph, routes, now),
        DecisionPolicy::NearestOnly => select_nearest(ev, graph, routes),
    }
}
