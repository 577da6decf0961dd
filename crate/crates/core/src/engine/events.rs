use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::platform::CoreId;

/// Kinds in processing priority order for events at the same instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    DvfsChange,
    ShareFinish,
    SleepEnd,
    Step,
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    /// Core for core events, schedule index for DVFS events.
    pub core: CoreId,
    pub seq: u64,
}

impl Event {
    fn key(&self) -> (f64, EventKind, CoreId, u64) {
        (self.time, self.kind, self.core, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3))
    }
}

/// Min-queue over (time, kind, core, insertion order).
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<std::cmp::Reverse<Event>>,
    seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: f64, kind: EventKind, core: CoreId) {
        self.seq += 1;
        self.heap.push(std::cmp::Reverse(Event { time, kind, core, seq: self.seq }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|r| r.0)
    }
}
