//! The event loop of a single run.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Mode, ScenarioConfig};
use super::events::{EventKind, EventQueue};
use super::metrics::RunReport;
use crate::comms::{self, RsuState};
use crate::decision::{self, SelectionBasis, StationRoutes};
use crate::domain::{
    units, CsId, EvId, EvMode, EvState, PendingReservation, ReservationToken, RsuId, Seconds,
    Trip,
};
use crate::error::Result;
use crate::roadnet::{advance, Advance, Location, NodeId, RoadGraph, Route, ARRIVAL_TOLERANCE};
use crate::station::{StationEvent, StationState};

/// Seed of run `run_index` under `master`; each run can be re-executed on
/// its own from this value.
pub fn run_seed(master: u64, run_index: usize) -> u64 {
    let mut z = master ^ (run_index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One line of the optional event trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub event: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ev: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rsu: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// A validated configuration with its road graph and routing tables, ready
/// to run any number of times.
#[derive(Debug, Clone)]
pub struct Scenario {
    config: ScenarioConfig,
    graph: RoadGraph,
    routes: StationRoutes,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let graph = config.build_graph()?;
        let routes = StationRoutes::new(&graph);
        Ok(Scenario {
            config,
            graph,
            routes,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn graph(&self) -> &RoadGraph {
        &self.graph
    }

    pub fn run(&self, run_index: usize) -> Result<RunReport> {
        Sim::new(self, run_index, false)?.execute()
    }

    pub fn run_traced(&self, run_index: usize) -> Result<(RunReport, Vec<TraceRecord>)> {
        let mut sim = Sim::new(self, run_index, true)?;
        let report = sim.run_loop()?;
        Ok((report, sim.trace.unwrap_or_default()))
    }

    /// Every configured run, in index order.
    pub fn run_all(&self) -> Result<Vec<RunReport>> {
        (0..self.config.runs).map(|i| self.run(i)).collect()
    }
}

/// Single-run convenience wrapper.
pub fn run(config: &ScenarioConfig, run_index: usize) -> Result<RunReport> {
    Scenario::new(config.clone())?.run(run_index)
}

#[derive(Debug, Clone, Default)]
struct EvAux {
    epoch: u64,
    last_sync: Seconds,
    contacts: BTreeSet<RsuId>,
    /// A station was chosen (or none was left) in the current episode.
    decided: bool,
    token: Option<ReservationToken>,
    arrived_at: Seconds,
}

#[derive(Debug, Default)]
struct Tally {
    waiting_sum: f64,
    waiting_n: u64,
    queue_sum: f64,
    queue_n: u64,
    obtain: u64,
    fresh_sum: f64,
    fresh_n: u64,
    charged: u64,
    stranded: u64,
    decisions: u64,
    nearest: u64,
    unreachable: u64,
    reservations: u64,
    forwarded: u64,
    rejections: u64,
    exhaustions: u64,
    rounds: u64,
    events: u64,
    received: f64,
}

struct Sim<'a> {
    sc: &'a Scenario,
    run_index: usize,
    seed: u64,
    now: Seconds,
    rng: ChaCha8Rng,
    queue: EventQueue,
    evs: Vec<EvState>,
    aux: Vec<EvAux>,
    stations: Vec<StationState>,
    station_epoch: Vec<u64>,
    rsus: Vec<RsuState>,
    tally: Tally,
    trace: Option<Vec<TraceRecord>>,
    next_token: u64,
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, run_index: usize, traced: bool) -> Result<Self> {
        let cfg = &sc.config;
        let seed = run_seed(cfg.seed, run_index);
        let stations = sc
            .graph
            .cs_nodes()
            .iter()
            .enumerate()
            .map(|(i, &n)| StationState::new(CsId(i as u32), n, cfg.slots, cfg.power(), cfg.energy_budget()))
            .collect::<Result<Vec<_>>>()?;
        let n_cs = stations.len();
        Ok(Sim {
            sc,
            run_index,
            seed,
            now: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: EventQueue::new(),
            evs: Vec::with_capacity(cfg.ev_count),
            aux: vec![EvAux::default(); cfg.ev_count],
            stations,
            station_epoch: vec![0; n_cs],
            rsus: RsuState::from_graph(&sc.graph),
            tally: Tally::default(),
            trace: traced.then(Vec::new),
            next_token: 0,
        })
    }

    fn cfg(&self) -> &'a ScenarioConfig {
        &self.sc.config
    }

    fn graph(&self) -> &'a RoadGraph {
        &self.sc.graph
    }

    fn execute(mut self) -> Result<RunReport> {
        self.run_loop()
    }

    fn record(&mut self, event: &'static str, ev: Option<EvId>, cs: Option<CsId>, rsu: Option<RsuId>, value: Option<f64>) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                t: self.now,
                event,
                ev: ev.map(|e| e.0),
                cs: cs.map(|c| c.0),
                rsu: rsu.map(|r| r.0),
                value,
            });
        }
    }

    fn run_loop(&mut self) -> Result<RunReport> {
        let cfg = self.cfg();
        let duration = cfg.duration_s;
        if duration > 0.0 {
            self.init_evs()?;
            let schedule = cfg.schedule();
            if cfg.mode != Mode::Ideal && schedule.instant(0) < duration {
                self.queue.push(schedule.instant(0), EventKind::Publication { round: 0 });
            }
        }
        while let Some(event) = self.queue.pop() {
            if event.time >= duration {
                break;
            }
            debug_assert!(event.time >= self.now, "time went backwards");
            self.now = event.time;
            if self.dispatch(event.kind)? {
                self.tally.events += 1;
            }
        }
        Ok(self.report())
    }

    fn init_evs(&mut self) -> Result<()> {
        let cfg = self.cfg();
        let n = self.graph().node_count();
        let battery_max = cfg.battery_max();
        let alpha = cfg.consumption_rate();
        for i in 0..cfg.ev_count {
            let node = NodeId(self.rng.gen_range(0..n) as u32);
            let soc = self.rng.gen_range(cfg.initial_soc_min..=cfg.initial_soc_max);
            let mut ev = EvState::new(
                EvId(i as u32),
                Location::Node(node),
                units::kmh(cfg.speed_min_kmh),
                battery_max,
                soc * battery_max,
                alpha,
            );
            ev.soc_threshold = cfg.soc_threshold;
            self.evs.push(ev);
        }
        for i in 0..cfg.ev_count {
            self.start_roaming_trip(i)?;
        }
        Ok(())
    }

    /// Returns whether the event was live (not stale).
    fn dispatch(&mut self, kind: EventKind) -> Result<bool> {
        match kind {
            EventKind::ChargeDue { cs, epoch } => {
                if self.station_epoch[cs.0 as usize] != epoch {
                    return Ok(false);
                }
                self.sync_station(cs.0 as usize)?;
            }
            EventKind::TripEnd { ev, epoch } => {
                if !self.live(ev, epoch) {
                    return Ok(false);
                }
                self.on_trip_end(ev.0 as usize)?;
            }
            EventKind::Strand { ev, epoch } => {
                if !self.live(ev, epoch) {
                    return Ok(false);
                }
                self.on_strand(ev.0 as usize);
            }
            EventKind::ContactExit { ev, rsu, epoch } => {
                if !self.live(ev, epoch) {
                    return Ok(false);
                }
                self.on_contact_exit(ev.0 as usize, rsu);
            }
            EventKind::ContactEnter { ev, rsu, epoch } => {
                if !self.live(ev, epoch) {
                    return Ok(false);
                }
                self.on_contact_enter(ev.0 as usize, rsu);
            }
            EventKind::Publication { round } => self.on_publication(round)?,
            EventKind::SocThreshold { ev, epoch } => {
                if !self.live(ev, epoch) {
                    return Ok(false);
                }
                let i = ev.0 as usize;
                self.sync_ev(i);
                if self.evs[i].mode == EvMode::Roaming && !self.aux[i].decided {
                    self.decide(i)?;
                }
            }
        }
        Ok(true)
    }

    fn live(&self, ev: EvId, epoch: u64) -> bool {
        let i = ev.0 as usize;
        self.aux[i].epoch == epoch && self.evs[i].mode != EvMode::Stranded
    }

    /// Moves a driving vehicle up to the current time.
    fn sync_ev(&mut self, i: usize) {
        let dt = self.now - self.aux[i].last_sync;
        self.aux[i].last_sync = self.now;
        if dt <= 0.0 {
            return;
        }
        let graph = self.graph();
        if let Advance::Stranded { .. } = advance(&mut self.evs[i], graph, dt) {
            self.mark_stranded(i);
        }
    }

    fn mark_stranded(&mut self, i: usize) {
        self.aux[i].epoch += 1;
        self.tally.stranded += 1;
        let id = self.evs[i].id;
        self.record("strand", Some(id), None, None, None);
    }

    fn on_strand(&mut self, i: usize) {
        self.sync_ev(i);
        let ev = &mut self.evs[i];
        if ev.mode != EvMode::Stranded {
            // float residue: the battery is empty to within rounding
            ev.battery_cur = 0.0;
            ev.set_mode(EvMode::Stranded);
            self.mark_stranded(i);
        }
    }

    fn on_trip_end(&mut self, i: usize) -> Result<()> {
        self.sync_ev(i);
        let ev = &mut self.evs[i];
        if ev.mode == EvMode::Stranded {
            return Ok(());
        }
        if let Some(trip) = ev.trip.take() {
            // arrival residue below the integration tolerance
            let rest = trip.remaining() * ev.consumption_rate;
            ev.battery_cur = (ev.battery_cur - rest).max(0.0);
            ev.location = Location::Node(trip.route.target);
            if let EvMode::HeadingToCs(cs) = ev.mode {
                ev.set_mode(EvMode::Waiting(cs));
            }
        }
        match self.evs[i].mode {
            EvMode::Waiting(cs) => self.arrive_at_station(i, cs),
            EvMode::Roaming => self.start_roaming_trip(i),
            _ => Ok(()),
        }
    }

    fn on_contact_enter(&mut self, i: usize, rsu: RsuId) {
        self.sync_ev(i);
        if self.evs[i].mode == EvMode::Stranded {
            return;
        }
        self.aux[i].contacts.insert(rsu);
        let id = self.evs[i].id;
        self.record("contact_enter", Some(id), None, Some(rsu), None);
        let now = self.now;
        if comms::pull_query(&mut self.evs[i], &mut self.rsus[rsu.0 as usize], now).is_some() {
            self.tally.obtain += 1;
            self.record("obtain", Some(id), None, Some(rsu), None);
        }
        self.try_forward(i);
    }

    fn on_contact_exit(&mut self, i: usize, rsu: RsuId) {
        self.sync_ev(i);
        self.aux[i].contacts.remove(&rsu);
        let id = self.evs[i].id;
        self.rsus[rsu.0 as usize].end_encounter(id);
        self.record("contact_exit", Some(id), None, Some(rsu), None);
    }

    fn try_forward(&mut self, i: usize) {
        if self.cfg().mode != Mode::AdvancedPull || self.aux[i].contacts.is_empty() {
            return;
        }
        let cs = self.evs[i].pending_reservation.as_ref().map(|p| p.cs);
        if comms::forward_reservation(&mut self.evs[i], &mut self.stations) {
            self.tally.forwarded += 1;
            let id = self.evs[i].id;
            self.record("reservation_forwarded", Some(id), cs, None, None);
        }
    }

    fn on_publication(&mut self, round: u64) -> Result<()> {
        for cs in 0..self.stations.len() {
            self.sync_station(cs)?;
        }
        let cfg = self.cfg();
        let now = self.now;
        comms::publish_round(&mut self.stations, &mut self.rsus, now, cfg.reservation_grace_s);
        self.tally.rounds += 1;
        self.record("publication", None, None, None, Some(round as f64));
        if cfg.mode == Mode::Push {
            for i in 0..self.evs.len() {
                self.sync_ev(i);
            }
            let graph = self.graph();
            for r in 0..self.rsus.len() {
                let reached = comms::push_deliver(&self.rsus[r], &mut self.evs, graph, cfg.rsu_radius_m, now);
                self.tally.obtain += reached.len() as u64;
                let rsu = self.rsus[r].id;
                for ev in reached {
                    self.record("obtain", Some(ev), None, Some(rsu), None);
                }
            }
        }
        let next = cfg.schedule().instant(round + 1);
        if next < cfg.duration_s {
            self.queue.push(next, EventKind::Publication { round: round + 1 });
        }
        Ok(())
    }

    /// Brings a station to the current time and reschedules its wake-up.
    fn sync_station(&mut self, cs: usize) -> Result<()> {
        let events = self.stations[cs].advance_to(self.now);
        self.handle_station_events(cs, events)?;
        self.reschedule_station(cs);
        Ok(())
    }

    fn reschedule_station(&mut self, cs: usize) {
        self.station_epoch[cs] += 1;
        if let Some(t) = self.stations[cs].next_completion() {
            let epoch = self.station_epoch[cs];
            self.queue.push(t.max(self.now), EventKind::ChargeDue { cs: CsId(cs as u32), epoch });
        }
    }

    fn handle_station_events(&mut self, cs: usize, events: Vec<StationEvent>) -> Result<()> {
        let cs_id = CsId(cs as u32);
        for e in events {
            match e {
                StationEvent::ChargeStarted { ev, at } => {
                    let i = ev.0 as usize;
                    self.evs[i].set_mode(EvMode::Charging(cs_id));
                    self.tally.queue_sum += at - self.aux[i].arrived_at;
                    self.tally.queue_n += 1;
                    self.record("charge_start", Some(ev), Some(cs_id), None, None);
                }
                StationEvent::ChargeCompleted { ev, at, energy, arrival_time, .. } => {
                    let i = ev.0 as usize;
                    let car = &mut self.evs[i];
                    car.battery_cur = (car.battery_cur + energy).min(car.battery_max);
                    car.set_mode(EvMode::Roaming);
                    self.tally.received += energy;
                    self.tally.waiting_sum += at - arrival_time;
                    self.tally.waiting_n += 1;
                    self.tally.charged += 1;
                    self.aux[i].decided = false;
                    self.aux[i].last_sync = self.now;
                    self.record("charge_complete", Some(ev), Some(cs_id), None, Some(at - arrival_time));
                    self.start_roaming_trip(i)?;
                }
                StationEvent::Rejected { ev, .. } => {
                    let i = ev.0 as usize;
                    self.tally.rejections += 1;
                    self.evs[i].exhausted_cs.insert(cs_id);
                    self.record("rejected", Some(ev), Some(cs_id), None, None);
                    self.decide(i)?;
                }
                StationEvent::BudgetExhausted { .. } => {
                    self.tally.exhaustions += 1;
                    self.record("budget_exhausted", None, Some(cs_id), None, None);
                }
            }
        }
        Ok(())
    }

    fn arrive_at_station(&mut self, i: usize, cs: CsId) -> Result<()> {
        let c = cs.0 as usize;
        let events = self.stations[c].advance_to(self.now);
        self.handle_station_events(c, events)?;
        self.aux[i].arrived_at = self.now;
        let token = self.aux[i].token.take();
        let (id, deficit) = (self.evs[i].id, self.evs[i].deficit());
        self.record("arrive", Some(id), Some(cs), None, None);
        let events = self.stations[c].arrive(id, deficit, token);
        self.handle_station_events(c, events)?;
        self.reschedule_station(c);
        Ok(())
    }

    /// Picks a station for vehicle `i` and sets off towards it.
    fn decide(&mut self, i: usize) -> Result<()> {
        for cs in 0..self.stations.len() {
            self.sync_station(cs)?;
        }
        let cfg = self.cfg();
        let now = self.now;
        let info = if cfg.mode == Mode::Ideal {
            comms::ideal_query(&self.stations, now, cfg.reservation_grace_s)
        } else {
            self.evs[i].info_map.clone()
        };
        self.aux[i].decided = true;
        let chosen = decision::select(cfg.mode.policy(), &info, &self.evs[i], self.graph(), &self.sc.routes, now);
        let Ok(selection) = chosen else {
            // every station has turned this vehicle away
            if matches!(self.evs[i].mode, EvMode::Waiting(_)) {
                self.evs[i].set_mode(EvMode::Roaming);
                self.aux[i].last_sync = now;
                self.start_roaming_trip(i)?;
            }
            return Ok(());
        };
        for (cs, rec) in info.iter() {
            if self.evs[i].exhausted_cs.contains(cs) {
                continue;
            }
            let truth = self.stations[cs.0 as usize].instantaneous_queuing_time();
            self.tally.fresh_sum += (truth - rec.publication.queuing_time).abs();
            self.tally.fresh_n += 1;
        }
        self.tally.decisions += 1;
        if selection.basis == SelectionBasis::Nearest {
            self.tally.nearest += 1;
        }
        if !selection.reachable {
            self.tally.unreachable += 1;
        }
        let ev = &self.evs[i];
        let route = self.sc.routes.route(self.graph(), ev, selection.cs)?;
        let id = ev.id;
        self.record("decision", Some(id), Some(selection.cs), None, None);
        self.evs[i].set_mode(EvMode::HeadingToCs(selection.cs));
        if cfg.mode == Mode::AdvancedPull {
            let token = ReservationToken(self.next_token);
            self.next_token += 1;
            if let Ok(entry) = decision::make_reservation(&self.evs[i], &route, cfg.power(), now, token) {
                self.evs[i].pending_reservation = Some(PendingReservation {
                    cs: selection.cs,
                    entry,
                    published: false,
                });
                self.aux[i].token = Some(token);
                self.tally.reservations += 1;
                self.record("reservation", Some(id), Some(selection.cs), None, Some(entry.arrival_time));
                self.try_forward(i);
            }
        }
        self.plan_trip(i, route);
        Ok(())
    }

    fn start_roaming_trip(&mut self, i: usize) -> Result<()> {
        let graph = self.graph();
        let cfg = self.cfg();
        let n = graph.node_count();
        let here = match self.evs[i].location {
            Location::Node(v) => v,
            Location::OnEdge { edge, .. } => graph.edge(edge).u,
        };
        let mut target = self.rng.gen_range(0..n - 1);
        if target >= here.0 as usize {
            target += 1;
        }
        let speed = units::kmh(self.rng.gen_range(cfg.speed_min_kmh..=cfg.speed_max_kmh));
        self.evs[i].speed = speed;
        let route = graph.shortest_path(&self.evs[i].location, NodeId(target as u32))?;
        self.plan_trip(i, route);
        Ok(())
    }

    /// Installs `route` as the vehicle's trip and schedules everything that
    /// will happen along it: arrival, stranding, threshold crossing and RSU
    /// contacts.
    fn plan_trip(&mut self, i: usize, route: Route) {
        let cfg = self.cfg();
        let now = self.now;
        self.aux[i].epoch += 1;
        self.aux[i].last_sync = now;
        let epoch = self.aux[i].epoch;
        let ev = &self.evs[i];
        let id = ev.id;
        let (speed, len, alpha) = (ev.speed, route.length, ev.consumption_rate);
        self.queue.push(now + len / speed, EventKind::TripEnd { ev: id, epoch });
        let range = ev.battery_cur / alpha;
        if range < len {
            self.queue.push(now + range / speed, EventKind::Strand { ev: id, epoch });
        }
        if ev.mode == EvMode::Roaming && !self.aux[i].decided {
            let threshold = ev.soc_threshold * ev.battery_max;
            let d = ((ev.battery_cur - threshold) / alpha).max(0.0);
            if d < len || ev.battery_cur <= threshold {
                self.queue.push(now + d / speed, EventKind::SocThreshold { ev: id, epoch });
            }
        }
        if cfg.mode.uses_contacts() {
            self.schedule_contacts(i, &route, epoch);
        }
        self.evs[i].trip = Some(Trip::new(route));
    }

    fn schedule_contacts(&mut self, i: usize, route: &Route, epoch: u64) {
        let graph = self.graph();
        let radius = self.cfg().radio().pull_range();
        let now = self.now;
        let ev = &self.evs[i];
        let (id, speed, len) = (ev.id, ev.speed, route.length);
        let here = graph.location_point(&ev.location);
        for rsu in &self.rsus {
            let intervals: Vec<(f64, f64)> = if route.legs.is_empty() {
                if here.distance(rsu.position) <= radius {
                    vec![(0.0, 0.0)]
                } else {
                    Vec::new()
                }
            } else {
                route
                    .disk_intervals(graph, rsu.position, radius)
                    .into_iter()
                    .filter(|(lo, hi)| hi - lo > ARRIVAL_TOLERANCE)
                    .collect()
            };
            let inside = self.aux[i].contacts.contains(&rsu.id);
            let mut continuing = false;
            for (lo, hi) in intervals {
                if inside && lo <= ARRIVAL_TOLERANCE {
                    continuing = true;
                } else {
                    self.queue.push(now + lo / speed, EventKind::ContactEnter { ev: id, rsu: rsu.id, epoch });
                }
                if hi < len - ARRIVAL_TOLERANCE {
                    self.queue.push(now + hi / speed, EventKind::ContactExit { ev: id, rsu: rsu.id, epoch });
                }
            }
            if inside && !continuing {
                self.queue.push(now, EventKind::ContactExit { ev: id, rsu: rsu.id, epoch });
            }
        }
    }

    fn report(&self) -> RunReport {
        let t = &self.tally;
        let avg = |sum: f64, n: u64| (n > 0).then(|| sum / n as f64);
        RunReport {
            run_index: self.run_index,
            seed: self.seed,
            average_waiting_time: avg(t.waiting_sum, t.waiting_n),
            average_queue_wait: avg(t.queue_sum, t.queue_n),
            obtain_info_count: t.obtain,
            average_freshness: avg(t.fresh_sum, t.fresh_n),
            cs_utilization_kwh: self.stations.iter().map(|s| units::to_kwh(s.energy_consumed())).collect(),
            charged_ev_count: t.charged,
            stranded_count: t.stranded,
            decisions: t.decisions,
            nearest_fallbacks: t.nearest,
            unreachable_decisions: t.unreachable,
            reservations_made: t.reservations,
            reservations_forwarded: t.forwarded,
            rejections: t.rejections,
            budget_exhaustions: t.exhaustions,
            publication_rounds: t.rounds,
            events_processed: t.events,
            ev_received_kwh: units::to_kwh(t.received),
        }
    }
}
