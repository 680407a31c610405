// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event kernel: a virtual clock, a cancellable event
//! queue ordered by `(fire_time, sequence)`, named random streams and metric
//! series.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Virtual seconds.
pub type Time = f64;

/// Identifies a scheduled event for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn sequence(self) -> u64 {
        self.0
    }
}

struct Entry<E> {
    fire_time: Time,
    sequence: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.fire_time.total_cmp(&self.fire_time).then_with(|| other.sequence.cmp(&self.sequence))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub events_processed: u64,
    pub now: Time,
}

/// Event queue plus clock. `E` is the payload the owning model dispatches on.
pub struct Kernel<E> {
    now: Time,
    next_sequence: u64,
    queue: BinaryHeap<Entry<E>>,
    cancelled: HashSet<u64>,
    processed: u64,
}

impl<E> Default for Kernel<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Kernel<E> {
    pub fn new() -> Self {
        Self { now: 0.0, next_sequence: 0, queue: BinaryHeap::new(), cancelled: HashSet::new(), processed: 0 }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    /// Number of queued entries, including cancelled ones not yet discarded.
    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, fire_time: Time, payload: E) -> Result<EventHandle> {
        if !(fire_time >= self.now) {
            return Err(Error::SchedulePast { at: fire_time, now: self.now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(Entry { fire_time, sequence, payload });
        Ok(EventHandle(sequence))
    }

    /// Schedules `delay` seconds from now. Negative or NaN delays are errors.
    pub fn schedule_in(&mut self, delay: Time, payload: E) -> Result<EventHandle> {
        self.schedule(self.now + delay, payload)
    }

    /// Marks an event so it is dropped instead of fired. Returns false if the
    /// handle was already cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.cancelled.insert(handle.0)
    }

    /// Pops the next live event with `fire_time <= t_end`, advancing the clock
    /// to its fire time.
    pub fn next_event(&mut self, t_end: Time) -> Option<(Time, E)> {
        loop {
            let head = self.queue.peek()?;
            if head.fire_time > t_end {
                return None;
            }
            let entry = self.queue.pop().expect("peeked");
            if self.cancelled.remove(&entry.sequence) {
                continue;
            }
            self.now = entry.fire_time;
            self.processed += 1;
            return Some((entry.fire_time, entry.payload));
        }
    }

    /// Advances the clock to `t_end` without processing anything.
    pub fn advance_to(&mut self, t_end: Time) {
        if t_end > self.now {
            self.now = t_end;
        }
    }

    /// Processes every event with `fire_time <= t_end` through `handler`, then
    /// sets the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: Time, mut handler: F) -> RunSummary
    where
        F: FnMut(&mut Self, Time, E),
    {
        let start = self.processed;
        while let Some((t, payload)) = self.next_event(t_end) {
            handler(self, t, payload);
        }
        self.advance_to(t_end);
        RunSummary { events_processed: self.processed - start, now: self.now }
    }
}

/// Derives independent random streams from one seed by name. Two streams with
/// different names never share draws, so changing how often one concern draws
/// leaves every other stream untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Exponential inter-arrival delay with mean `1/rate`.
pub fn poisson_interarrival<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<Time> {
    match Exp::new(rate) {
        Ok(exp) if rate > 0.0 && rate.is_finite() => Ok(exp.sample(rng)),
        _ => domain(format!("arrival rate must be > 0, got {rate}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Sum,
    Mean,
    Last,
}

/// Time-stamped samples of one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub aggregation: Aggregation,
    pub samples: Vec<(Time, f64)>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, aggregation: Aggregation) -> Self {
        Self { name: name.into(), aggregation, samples: Vec::new() }
    }

    pub fn record(&mut self, t: Time, value: f64) -> Result<()> {
        if let Some(&(last, _)) = self.samples.last() {
            if t < last {
                return domain(format!("series `{}`: sample at {t} precedes previous sample at {last}", self.name));
            }
        }
        self.samples.push((t, value));
        Ok(())
    }

    /// Aggregates samples with `from < t <= to`. Empty windows give 0.
    pub fn window(&self, from: Time, to: Time) -> f64 {
        let start = self.samples.partition_point(|&(t, _)| t <= from);
        let end = self.samples.partition_point(|&(t, _)| t <= to);
        let slice = &self.samples[start..end];
        if slice.is_empty() {
            return 0.0;
        }
        match self.aggregation {
            Aggregation::Sum => slice.iter().map(|s| s.1).sum(),
            Aggregation::Mean => slice.iter().map(|s| s.1).sum::<f64>() / slice.len() as f64,
            Aggregation::Last => slice[slice.len() - 1].1,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
