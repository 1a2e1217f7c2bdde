//! Charging-station runtime: slot occupancy, FCFS scheduling, energy
//! accounting, the reservation book, and the estimators a station publishes.

use std::collections::BTreeMap;

use crate::domain::{
    CsId, EvId, Joules, Publication, ReservationEntry, ReservationToken, Seconds, Watts,
};
use crate::error::{Error, Result};
use crate::roadnet::NodeId;

/// Remaining charge below this many seconds counts as complete.
const COMPLETION_TOLERANCE: Seconds = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyBudget {
    Unlimited,
    Capped(Joules),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargingEntry {
    pub ev: EvId,
    pub remaining: Joules,
    /// Energy owed at plug-in; delivered in full on completion.
    pub deficit: Joules,
    pub arrival_time: Seconds,
    pub started_at: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaitingEntry {
    pub ev: EvId,
    pub deficit: Joules,
    pub arrival_time: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StationEvent {
    ChargeStarted {
        ev: EvId,
        at: Seconds,
    },
    ChargeCompleted {
        ev: EvId,
        at: Seconds,
        energy: Joules,
        arrival_time: Seconds,
        started_at: Seconds,
    },
    /// Turned away because the station's energy budget is spent.
    Rejected { ev: EvId, at: Seconds },
    BudgetExhausted { at: Seconds },
}

#[derive(Debug, Clone)]
pub struct StationState {
    pub cs: CsId,
    pub node: NodeId,
    pub power: Watts,
    slots: Vec<Option<ChargingEntry>>,
    waiting: Vec<WaitingEntry>,
    reservations: BTreeMap<ReservationToken, ReservationEntry>,
    budget: EnergyBudget,
    energy_consumed: Joules,
    exhausted: bool,
    clock: Seconds,
}

impl StationState {
    pub fn new(cs: CsId, node: NodeId, slots: usize, power: Watts, budget: EnergyBudget) -> Result<Self> {
        if slots == 0 {
            return Err(Error::Config(format!("{cs}: needs at least one charging slot")));
        }
        if !(power > 0.0) || !power.is_finite() {
            return Err(Error::Config(format!("{cs}: charging power must be positive")));
        }
        if let EnergyBudget::Capped(b) = budget {
            if !(b >= 0.0) {
                return Err(Error::Config(format!("{cs}: energy budget must be non-negative")));
            }
        }
        Ok(StationState {
            cs,
            node,
            power,
            slots: vec![None; slots],
            waiting: Vec::new(),
            reservations: BTreeMap::new(),
            budget,
            energy_consumed: 0.0,
            exhausted: false,
            clock: 0.0,
        })
    }

    pub fn clock(&self) -> Seconds {
        self.clock
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn charging(&self) -> impl Iterator<Item = &ChargingEntry> {
        self.slots.iter().flatten()
    }

    pub fn slots(&self) -> &[Option<ChargingEntry>] {
        &self.slots
    }

    pub fn waiting(&self) -> &[WaitingEntry] {
        &self.waiting
    }

    pub fn reservations(&self) -> impl Iterator<Item = &ReservationEntry> {
        self.reservations.values()
    }

    pub fn energy_consumed(&self) -> Joules {
        self.energy_consumed
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn holds(&self, ev: EvId) -> bool {
        self.charging().any(|c| c.ev == ev) || self.waiting.iter().any(|w| w.ev == ev)
    }

    /// Absolute time of the next charge completion, if anything is charging.
    pub fn next_completion(&self) -> Option<Seconds> {
        self.charging()
            .map(|c| self.clock + c.remaining / self.power)
            .min_by(f64::total_cmp)
    }

    /// Parks `ev` at the current clock with `deficit` joules to fill. Its
    /// reservation, if any, leaves the book.
    pub fn arrive(&mut self, ev: EvId, deficit: Joules, token: Option<ReservationToken>) -> Vec<StationEvent> {
        debug_assert!(!self.holds(ev), "{ev} already at {}", self.cs);
        if let Some(t) = token {
            self.reservations.remove(&t);
        }
        if self.exhausted {
            return vec![StationEvent::Rejected { ev, at: self.clock }];
        }
        let entry = WaitingEntry {
            ev,
            deficit: deficit.max(0.0),
            arrival_time: self.clock,
        };
        self.waiting.push(entry);
        let mut events = Vec::new();
        self.backfill(&mut events);
        events
    }

    fn committed(&self) -> Joules {
        self.charging().map(|c| c.deficit).sum()
    }

    fn backfill(&mut self, events: &mut Vec<StationEvent>) {
        while !self.waiting.is_empty() {
            let Some(free) = self.slots.iter().position(Option::is_none) else {
                return;
            };
            let head = self.waiting[0];
            if let EnergyBudget::Capped(cap) = self.budget {
                if self.energy_consumed + self.committed() + head.deficit > cap * (1.0 + 1e-12) {
                    self.exhausted = true;
                    events.push(StationEvent::BudgetExhausted { at: self.clock });
                    for w in self.waiting.drain(..) {
                        events.push(StationEvent::Rejected {
                            ev: w.ev,
                            at: self.clock,
                        });
                    }
                    return;
                }
            }
            self.waiting.remove(0);
            self.slots[free] = Some(ChargingEntry {
                ev: head.ev,
                remaining: head.deficit,
                deficit: head.deficit,
                arrival_time: head.arrival_time,
                started_at: self.clock,
            });
            events.push(StationEvent::ChargeStarted {
                ev: head.ev,
                at: self.clock,
            });
        }
    }

    /// Charges for `dt` seconds at full power per occupied slot, completing
    /// and back-filling at the exact completion instants inside the step.
    pub fn tick(&mut self, dt: Seconds) -> Vec<StationEvent> {
        debug_assert!(dt >= 0.0);
        let mut events = Vec::new();
        let mut left = dt.max(0.0);
        let target = self.clock + left;
        let power = self.power;
        while left > 0.0 {
            let Some(min_time) = self
                .charging()
                .map(|c| c.remaining / power)
                .min_by(f64::total_cmp)
            else {
                self.clock += left;
                break;
            };
            let step = if min_time <= left + COMPLETION_TOLERANCE {
                min_time.min(left)
            } else {
                left
            };
            for c in self.slots.iter_mut().flatten() {
                c.remaining = (c.remaining - power * step).max(0.0);
            }
            self.clock += step;
            left -= step;
            if min_time <= step + COMPLETION_TOLERANCE {
                self.complete_finished(&mut events);
                self.backfill(&mut events);
            }
        }
        self.clock = target;
        events
    }

    /// Ticks forward to absolute time `t` (no-op if already there).
    pub fn advance_to(&mut self, t: Seconds) -> Vec<StationEvent> {
        if t > self.clock {
            self.tick(t - self.clock)
        } else {
            Vec::new()
        }
    }

    fn complete_finished(&mut self, events: &mut Vec<StationEvent>) {
        for slot in &mut self.slots {
            if let Some(c) = *slot {
                if c.remaining <= self.power * COMPLETION_TOLERANCE {
                    self.energy_consumed += c.deficit;
                    events.push(StationEvent::ChargeCompleted {
                        ev: c.ev,
                        at: self.clock,
                        energy: c.deficit,
                        arrival_time: c.arrival_time,
                        started_at: c.started_at,
                    });
                    *slot = None;
                }
            }
        }
    }

    /// Time until the first slot frees: zero with a free slot, otherwise the
    /// shortest remaining charge among occupied slots.
    pub fn min_remaining_charge_time(&self) -> Seconds {
        if self.slots.iter().any(Option::is_none) {
            return 0.0;
        }
        self.charging()
            .map(|c| c.remaining / self.power)
            .min_by(f64::total_cmp)
            .unwrap_or(0.0)
    }

    /// Sum of the waiting vehicles' charge durations plus the time until the
    /// first slot frees.
    pub fn instantaneous_queuing_time(&self) -> Seconds {
        let queued: Seconds = self.waiting.iter().map(|w| w.deficit / self.power).sum();
        queued + self.min_remaining_charge_time()
    }

    /// Absolute time each slot (by index) becomes free once the waiting queue
    /// has drained FCFS onto the earliest-free slot. The station must already
    /// be ticked to `now`.
    pub fn available_charging_times(&self, now: Seconds) -> Vec<Seconds> {
        let mut finish: Vec<Seconds> = self
            .slots
            .iter()
            .map(|s| match s {
                Some(c) => now + c.remaining / self.power,
                None => now,
            })
            .collect();
        for w in &self.waiting {
            let slot = earliest(&finish);
            finish[slot] += w.deficit / self.power;
        }
        finish
    }

    /// Inserts or replaces the entry keyed by its token.
    pub fn record_reservation(&mut self, entry: ReservationEntry) {
        self.reservations.insert(entry.token, entry);
    }

    /// Drops reservations whose arrival time plus `grace` is already past.
    pub fn purge_reservations(&mut self, now: Seconds, grace: Seconds) {
        self.reservations.retain(|_, r| r.arrival_time + grace >= now);
    }

    pub fn publish_snapshot(&mut self, now: Seconds, grace: Seconds) -> Publication {
        self.purge_reservations(now, grace);
        self.snapshot(now, grace)
    }

    /// Same content as [`publish_snapshot`](Self::publish_snapshot) without
    /// purging the book.
    pub fn snapshot(&self, now: Seconds, grace: Seconds) -> Publication {
        let mut slot_available_times = self.available_charging_times(now);
        slot_available_times.sort_by(f64::total_cmp);
        let mut reservations: Vec<_> = self
            .reservations
            .values()
            .filter(|r| r.arrival_time + grace >= now)
            .map(|r| r.anonymized())
            .collect();
        reservations.sort_by(|a, b| {
            a.arrival_time
                .total_cmp(&b.arrival_time)
                .then(a.charge_duration.total_cmp(&b.charge_duration))
        });
        Publication {
            cs: self.cs,
            issued_at: now,
            queuing_time: self.instantaneous_queuing_time(),
            slot_available_times,
            reservations,
        }
    }
}

fn earliest(times: &[Seconds]) -> usize {
    let mut best = 0;
    for (i, t) in times.iter().enumerate().skip(1) {
        if *t < times[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::units;
    use proptest::prelude::*;

    const BETA: Watts = 62_000.0;

    fn station(slots: usize) -> StationState {
        StationState::new(CsId(0), NodeId(0), slots, BETA, EnergyBudget::Unlimited).unwrap()
    }

    /// Station with vehicles occupying slots for `charging` seconds each and
    /// then `waiting` vehicles queued behind them, all at t = 0.
    fn loaded(slots: usize, charging: &[f64], waiting: &[f64]) -> StationState {
        let mut cs = station(slots);
        for (id, &t) in charging.iter().chain(waiting).enumerate() {
            cs.arrive(EvId(id as u32), t * BETA, None);
        }
        cs
    }

    /// Literal replay: tick from completion to completion until the waiting
    /// queue is empty, then read each slot's free time.
    fn replay_free_times(mut cs: StationState) -> Vec<Seconds> {
        while !cs.waiting().is_empty() {
            let next = cs.next_completion().expect("waiting implies charging");
            cs.tick(next - cs.clock());
        }
        let mut times: Vec<Seconds> = cs
            .slots()
            .iter()
            .map(|s| match s {
                Some(c) => cs.clock() + c.remaining / cs.power,
                None => cs.clock(),
            })
            .collect();
        times.sort_by(f64::total_cmp);
        times
    }

    #[test]
    fn min_remaining_examples() {
        assert_eq!(loaded(3, &[100.0, 200.0], &[]).min_remaining_charge_time(), 0.0);
        assert_eq!(loaded(3, &[100.0, 200.0, 300.0], &[]).min_remaining_charge_time(), 100.0);
        assert_eq!(loaded(1, &[500.0], &[]).min_remaining_charge_time(), 500.0);
    }

    #[test]
    fn queuing_time_examples() {
        assert_eq!(station(3).instantaneous_queuing_time(), 0.0);
        assert_eq!(loaded(3, &[100.0, 200.0, 300.0], &[150.0]).instantaneous_queuing_time(), 250.0);
        assert_eq!(loaded(3, &[100.0, 200.0, 300.0], &[]).instantaneous_queuing_time(), 100.0);
    }

    #[test]
    fn available_times_examples() {
        assert_eq!(station(3).available_charging_times(0.0), vec![0.0, 0.0, 0.0]);
        let cs = loaded(3, &[100.0, 200.0, 300.0], &[150.0]);
        let mut t = cs.available_charging_times(0.0);
        t.sort_by(f64::total_cmp);
        assert_eq!(t, vec![200.0, 250.0, 300.0]);
        assert_eq!(replay_free_times(cs), vec![200.0, 250.0, 300.0]);
    }

    /// State matching the published CS snapshot: at t = 240 the slots hold
    /// 1000 s, 3710 s and 3970 s of charging and two vehicles wait with
    /// 1000 s and 1060 s.
    fn published_example() -> StationState {
        let mut cs = loaded(3, &[1240.0, 3950.0, 4210.0], &[]);
        cs.tick(240.0);
        cs.arrive(EvId(10), 1000.0 * BETA, None);
        cs.arrive(EvId(11), 1060.0 * BETA, None);
        cs
    }

    #[test]
    fn published_snapshot_example() {
        let mut cs = published_example();
        cs.record_reservation(ReservationEntry {
            token: ReservationToken(7),
            arrival_time: 4700.0,
            charge_duration: 700.0,
        });
        cs.record_reservation(ReservationEntry {
            token: ReservationToken(3),
            arrival_time: 3500.0,
            charge_duration: 730.0,
        });
        let p = cs.publish_snapshot(240.0, 600.0);
        assert_eq!(p.queuing_time, 3060.0);
        assert_eq!(p.slot_available_times, vec![3300.0, 3950.0, 4210.0]);
        let pairs: Vec<(f64, f64)> = p.reservations.iter().map(|r| (r.arrival_time, r.charge_duration)).collect();
        assert_eq!(pairs, vec![(3500.0, 730.0), (4700.0, 700.0)]);
    }

    #[test]
    fn empty_snapshot() {
        let mut cs = station(3);
        cs.tick(50.0);
        let p = cs.publish_snapshot(50.0, 600.0);
        assert_eq!(p.queuing_time, 0.0);
        assert_eq!(p.slot_available_times, vec![50.0; 3]);
        assert!(p.reservations.is_empty());
    }

    #[test]
    fn tick_zero_is_noop() {
        let mut cs = loaded(2, &[100.0], &[]);
        let before = cs.slots().to_vec();
        assert!(cs.tick(0.0).is_empty());
        assert_eq!(cs.slots(), &before[..]);
    }

    #[test]
    fn tick_completes_ten_kwh() {
        let mut cs = station(3);
        cs.arrive(EvId(1), units::kwh(10.0), None);
        let events = cs.tick(581.0);
        let done: Vec<_> = events
            .iter()
            .filter_map(|e| match e {
                StationEvent::ChargeCompleted { at, energy, .. } => Some((*at, *energy)),
                _ => None,
            })
            .collect();
        assert_eq!(done.len(), 1);
        assert!((done[0].0 - 580.645).abs() < 1e-3);
        assert_eq!(done[0].1, units::kwh(10.0));
        assert_eq!(cs.energy_consumed(), units::kwh(10.0));
        assert!(cs.charging().next().is_none());
        assert_eq!(cs.clock(), 581.0);
    }

    #[test]
    fn fcfs_backfill() {
        // ev5 arrives before ev2, so it goes first despite the larger id
        let mut cs = station(1);
        cs.arrive(EvId(0), 300.0 * BETA, None);
        cs.tick(100.0);
        cs.arrive(EvId(5), 50.0 * BETA, None);
        cs.tick(100.0);
        cs.arrive(EvId(2), 50.0 * BETA, None);
        let events = cs.tick(100.0);
        assert!(events.contains(&StationEvent::ChargeStarted { ev: EvId(5), at: 300.0 }));
        assert_eq!(cs.waiting().len(), 1);
        assert_eq!(cs.waiting()[0].ev, EvId(2));
    }

    #[test]
    fn reservation_replace_by_token() {
        let mut cs = station(3);
        let e = |arr: f64| ReservationEntry {
            token: ReservationToken(1),
            arrival_time: arr,
            charge_duration: 600.0,
        };
        cs.record_reservation(e(1000.0));
        assert_eq!(cs.reservations().count(), 1);
        cs.record_reservation(e(1300.0));
        assert_eq!(cs.reservations().count(), 1);
        assert_eq!(cs.reservations().next().unwrap().arrival_time, 1300.0);
        // arriving with the token removes it from the book
        cs.tick(1300.0);
        cs.arrive(EvId(4), 1.0, Some(ReservationToken(1)));
        assert_eq!(cs.reservations().count(), 0);
    }

    #[test]
    fn stale_reservations_are_purged() {
        let mut cs = station(1);
        cs.record_reservation(ReservationEntry {
            token: ReservationToken(1),
            arrival_time: 100.0,
            charge_duration: 10.0,
        });
        assert_eq!(cs.publish_snapshot(700.0, 600.0).reservations.len(), 1);
        assert_eq!(cs.publish_snapshot(700.5, 600.0).reservations.len(), 0);
    }

    #[test]
    fn budget_stops_admission() {
        let mut cs = StationState::new(CsId(1), NodeId(0), 1, BETA, EnergyBudget::Capped(150.0 * BETA)).unwrap();
        cs.arrive(EvId(0), 100.0 * BETA, None);
        let ev = cs.arrive(EvId(1), 100.0 * BETA, None);
        assert!(ev.is_empty());
        let events = cs.tick(100.0);
        assert!(events.iter().any(|e| matches!(e, StationEvent::BudgetExhausted { .. })));
        assert!(events.contains(&StationEvent::Rejected { ev: EvId(1), at: 100.0 }));
        assert!(cs.is_exhausted());
        assert_eq!(cs.energy_consumed(), 100.0 * BETA);
        assert_eq!(cs.arrive(EvId(2), 1.0, None), vec![StationEvent::Rejected { ev: EvId(2), at: 100.0 }]);
    }

    #[test]
    fn bad_config_rejected() {
        assert!(StationState::new(CsId(0), NodeId(0), 0, BETA, EnergyBudget::Unlimited).is_err());
        assert!(StationState::new(CsId(0), NodeId(0), 1, 0.0, EnergyBudget::Unlimited).is_err());
    }

    fn instance() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
        (1usize..=4).prop_flat_map(|slots| {
            (0..=slots.min(8)).prop_flat_map(move |nc| {
                (
                    Just(slots),
                    proptest::collection::vec((1u32..2000).prop_map(f64::from), nc),
                    proptest::collection::vec((1u32..2000).prop_map(f64::from), if nc == slots { 0..=(8 - nc) } else { 0..=0 }),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn available_times_match_replay((slots, charging, waiting) in instance(), now in 0u32..5000) {
            let mut cs = station(slots);
            cs.tick(f64::from(now));
            for (i, &t) in charging.iter().chain(&waiting).enumerate() {
                cs.arrive(EvId(i as u32), t * BETA, None);
            }
            let mut est = cs.available_charging_times(f64::from(now));
            est.sort_by(f64::total_cmp);
            prop_assert_eq!(est, replay_free_times(cs));
        }

        #[test]
        fn queuing_time_identity((slots, charging, waiting) in instance()) {
            let cs = loaded(slots, &charging, &waiting);
            let sum: f64 = waiting.iter().sum();
            prop_assert_eq!(cs.instantaneous_queuing_time(), sum + cs.min_remaining_charge_time());
        }

        #[test]
        fn adding_a_waiter_never_helps((slots, charging, waiting) in instance(), extra in 1u32..2000) {
            prop_assume!(charging.len() == slots);
            let before = loaded(slots, &charging, &waiting);
            let mut after = loaded(slots, &charging, &waiting);
            after.arrive(EvId(99), f64::from(extra) * BETA, None);
            prop_assert!(after.instantaneous_queuing_time() >= before.instantaneous_queuing_time());
            let mut a = before.available_charging_times(0.0);
            let mut b = after.available_charging_times(0.0);
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(y >= x);
            }
        }

        #[test]
        fn equal_deficits_complete_in_arrival_order(slots in 1usize..=3, n in 1usize..8, gaps in proptest::collection::vec(0u32..50, 8)) {
            let mut cs = station(slots);
            let mut order = Vec::new();
            let mut completed = Vec::new();
            for (i, &gap) in gaps.iter().take(n).enumerate() {
                completed.extend(cs.tick(f64::from(gap)));
                // ids deliberately reversed against arrival order
                let id = EvId((100 - i) as u32);
                order.push(id);
                completed.extend(cs.arrive(id, 120.0 * BETA, None));
            }
            completed.extend(cs.tick(1e6));
            let done: Vec<EvId> = completed.iter().filter_map(|e| match e {
                StationEvent::ChargeCompleted { ev, .. } => Some(*ev),
                _ => None,
            }).collect();
            prop_assert_eq!(done, order);
        }

        #[test]
        fn consumed_equals_delivered(deficits in proptest::collection::vec(1.0f64..1e8, 1..10), step in 1.0f64..3000.0) {
            let mut cs = station(2);
            let mut delivered = 0.0;
            for (i, d) in deficits.iter().enumerate() {
                for e in cs.arrive(EvId(i as u32), *d, None).into_iter().chain(cs.tick(step)) {
                    if let StationEvent::ChargeCompleted { energy, .. } = e { delivered += energy; }
                }
                prop_assert_eq!(delivered, cs.energy_consumed());
            }
        }
    }
}
