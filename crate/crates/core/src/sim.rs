//! Discrete-event kernel.
//!
//! Events are delivered in `(time, seq)` order where `seq` is assigned at
//! scheduling time, so ties at the same instant are broken by insertion
//! order. Nothing here depends on container iteration order, which keeps
//! runs reproducible across platforms.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};

/// Simulated instant, in microseconds since simulation start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Microseconds elapsed since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, us: u64) -> SimTime {
        SimTime(self.0 + us)
    }
}

impl Sub<u64> for SimTime {
    type Output = SimTime;
    fn sub(self, us: u64) -> SimTime {
        SimTime(self.0 - us)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// A scheduled event. Ordering considers only `(time, seq)`.
#[derive(Clone, Debug)]
pub struct Event<K> {
    pub time: SimTime,
    pub seq: u64,
    pub kind: K,
}

impl<K> PartialEq for Event<K> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<K> Eq for Event<K> {}

impl<K> PartialOrd for Event<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Event<K> {
    // Reversed so the std max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Simulated clock plus pending-event queue.
#[derive(Debug)]
pub struct Kernel<K> {
    queue: BinaryHeap<Event<K>>,
    now: SimTime,
    next_seq: u64,
    processed: u64,
}

impl<K> Default for Kernel<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Kernel<K> {
    pub fn new() -> Self {
        Self {
            queue: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            processed: 0,
        }
    }

    #[inline]
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Enqueue `kind` at `time` and return the assigned sequence number.
    ///
    /// Scheduling into the past is a programming error and aborts the run.
    pub fn schedule(&mut self, time: SimTime, kind: K) -> u64 {
        assert!(
            time >= self.now,
            "event scheduled in the past: {} < clock {}",
            time,
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event { time, seq, kind });
        seq
    }

    pub fn schedule_after(&mut self, delay_us: u64, kind: K) -> u64 {
        self.schedule(self.now + delay_us, kind)
    }

    /// Pop the next event with `time <= until`, advancing the clock to it.
    pub fn pop_until(&mut self, until: SimTime) -> Option<Event<K>> {
        if self.queue.peek()?.time > until {
            return None;
        }
        let ev = self.queue.pop()?;
        debug_assert!(ev.time >= self.now);
        self.now = ev.time;
        self.processed += 1;
        Some(ev)
    }

    /// Move the clock forward to `until` (no-op if already past it).
    pub fn advance_to(&mut self, until: SimTime) {
        if until > self.now {
            self.now = until;
        }
    }

    /// Process every event with `time <= until` in total order, then set
    /// the clock to `until`. Handlers may schedule follow-up events; those
    /// inside the horizon are processed in the same call.
    pub fn run<F>(&mut self, until: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Kernel<K>, Event<K>),
    {
        let mut count = 0;
        while let Some(ev) = self.pop_until(until) {
            handler(self, ev);
            count += 1;
        }
        self.advance_to(until);
        count
    }
}
