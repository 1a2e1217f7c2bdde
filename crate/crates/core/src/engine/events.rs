//! Pending-event calendar.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::domain::{CsId, EvId, RsuId, Seconds};

/// Per-entity events carry the epoch they were scheduled under; an event
/// whose epoch no longer matches its entity is stale and skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    ChargeDue { cs: CsId, epoch: u64 },
    TripEnd { ev: EvId, epoch: u64 },
    Strand { ev: EvId, epoch: u64 },
    ContactExit { ev: EvId, rsu: RsuId, epoch: u64 },
    ContactEnter { ev: EvId, rsu: RsuId, epoch: u64 },
    Publication { round: u64 },
    SocThreshold { ev: EvId, epoch: u64 },
}

impl EventKind {
    /// Processing order among events at the same instant.
    pub fn priority(&self) -> u8 {
        match self {
            EventKind::ChargeDue { .. } => 0,
            EventKind::TripEnd { .. } => 1,
            EventKind::Strand { .. } => 2,
            EventKind::ContactExit { .. } => 3,
            EventKind::ContactEnter { .. } => 4,
            EventKind::Publication { .. } => 5,
            EventKind::SocThreshold { .. } => 6,
        }
    }

    pub fn entity(&self) -> (u64, u64) {
        match *self {
            EventKind::ChargeDue { cs, .. } => (cs.0.into(), 0),
            EventKind::TripEnd { ev, .. }
            | EventKind::Strand { ev, .. }
            | EventKind::SocThreshold { ev, .. } => (ev.0.into(), 0),
            EventKind::ContactExit { ev, rsu, .. } | EventKind::ContactEnter { ev, rsu, .. } => {
                (ev.0.into(), rsu.0.into())
            }
            EventKind::Publication { round } => (round, 0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::ChargeDue { .. } => "charge_due",
            EventKind::TripEnd { .. } => "trip_end",
            EventKind::Strand { .. } => "strand",
            EventKind::ContactExit { .. } => "contact_exit",
            EventKind::ContactEnter { .. } => "contact_enter",
            EventKind::Publication { .. } => "publication",
            EventKind::SocThreshold { .. } => "soc_threshold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: Seconds,
    pub kind: EventKind,
    seq: u64,
}

impl Event {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.priority().cmp(&other.kind.priority()))
            .then(self.kind.entity().cmp(&other.kind.entity()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl Eq for Event {}

impl Ord for Event {
    // reversed so the max-heap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue on (time, priority, entity, insertion order).
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: Seconds, kind: EventKind) {
        debug_assert!(time.is_finite(), "event {kind:?} at {time}");
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, kind, seq });
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<Seconds> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
