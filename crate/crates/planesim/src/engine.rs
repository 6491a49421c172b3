//! Deterministic discrete-event core.
//!
//! The queue orders events by `(time, seq)` where `seq` is a monotone
//! insertion counter, so same-time events dispatch in insertion order.
//! Cancellation is lazy: a cancelled handle leaves a tombstone that is
//! skipped on pop.

use crate::units::SimTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

/// Handle to a scheduled event, usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Scheduled<K> {
    time: SimTime,
    seq: u64,
    kind: K,
}

impl<K> PartialEq for Scheduled<K> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl<K> Eq for Scheduled<K> {}

impl<K> Ord for Scheduled<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for earliest-first.
        match self.time.cmp(&other.time) {
            Ordering::Equal => self.seq.cmp(&other.seq),
            ord => ord,
        }
        .reverse()
    }
}
impl<K> PartialOrd for Scheduled<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time-ordered event queue with a simulation clock.
pub struct EventQueue<K> {
    heap: BinaryHeap<Scheduled<K>>,
    next_seq: u64,
    cancelled: HashSet<u64>,
    clock: SimTime,
}

impl<K> Default for EventQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> EventQueue<K> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            cancelled: HashSet::new(),
            clock: SimTime::ZERO,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedule `kind` at absolute time `time`. Scheduling in the past is a
    /// programming error and aborts the run.
    pub fn schedule(&mut self, time: SimTime, kind: K) -> EventHandle {
        assert!(
            time >= self.clock,
            "scheduled event at {} before current clock {}",
            time,
            self.clock
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled { time, seq, kind });
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, kind: K) -> EventHandle {
        self.schedule(self.clock + delay, kind)
    }

    pub fn cancel(&mut self, handle: EventHandle) {
        self.cancelled.insert(handle.0);
    }

    /// Pop the next live event, advancing the clock to its timestamp.
    pub fn pop(&mut self) -> Option<(SimTime, K)> {
        while let Some(ev) = self.heap.pop() {
            if self.cancelled.remove(&ev.seq) {
                continue;
            }
            debug_assert!(ev.time >= self.clock, "clock went backwards");
            self.clock = ev.time;
            return Some((ev.time, ev.kind));
        }
        None
    }

    /// Peek the timestamp of the next live event without dispatching it.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(ev) = self.heap.peek() {
            if self.cancelled.contains(&ev.seq) {
                let seq = ev.seq;
                self.heap.pop();
                self.cancelled.remove(&seq);
                continue;
            }
            return Some(ev.time);
        }
        None
    }
}

/// Factory for reproducible per-entity RNG streams.
///
/// The same `(seed, stream-id)` pair yields an identical draw sequence on
/// every run and platform.
#[derive(Debug, Clone, Copy)]
pub struct RngFactory {
    seed: u64,
}

impl RngFactory {
    pub fn new(seed: u64) -> Self {
        RngFactory { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(label.as_bytes()))
    }

    pub fn stream_indexed(&self, label: &str, index: u64) -> ChaCha8Rng {
        let mut h = fnv1a(label.as_bytes());
        h = h.wrapping_mul(0x100000001b3).wrapping_add(index);
        ChaCha8Rng::seed_from_u64(self.seed ^ h)
    }
}

// Stable across platforms and Rust versions, unlike std's DefaultHasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn single_element() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(0), "workload-start");
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn ties_break_by_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(100), "A");
        q.schedule(SimTime(100), "B");
        assert_eq!(q.pop().unwrap().1, "A");
        assert_eq!(q.pop().unwrap().1, "B");
    }

    #[test]
    #[should_panic(expected = "before current clock")]
    fn scheduling_in_the_past_panics() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(50), ());
        q.pop();
        q.schedule(SimTime(10), ());
    }

    #[test]
    fn cancellation_skips_event() {
        let mut q = EventQueue::new();
        let h = q.schedule(SimTime(5), "a");
        q.schedule(SimTime(10), "b");
        q.cancel(h);
        assert_eq!(q.pop().unwrap().1, "b");
        assert!(q.pop().is_none());
    }

    #[test]
    fn drain_matches_stable_sort_oracle() {
        // Independent oracle: stable sort by (time, seq) where seq is the
        // insertion index.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let times: Vec<u64> = (0..10_000).map(|_| rng.next_u64() % 1000).collect();

        let mut q = EventQueue::new();
        for (i, &t) in times.iter().enumerate() {
            q.schedule(SimTime(t), i);
        }

        let mut oracle: Vec<(u64, usize)> = times.iter().cloned().zip(0..).collect();
        oracle.sort_by_key(|&(t, i)| (t, i));

        let mut last = SimTime::ZERO;
        for &(t, i) in &oracle {
            let (pt, pi) = q.pop().unwrap();
            assert_eq!((pt.as_ns(), pi), (t, i));
            assert!(pt >= last, "clock monotonicity violated");
            last = pt;
        }
        assert!(q.pop().is_none());
    }

    #[test]
    fn rng_streams_reproducible_and_distinct() {
        let f = RngFactory::new(42);
        let a: Vec<u64> = (0..8).map(|_| f.stream("nic/3").next_u64()).collect();
        let b: Vec<u64> = (0..8).map(|_| f.stream("nic/3").next_u64()).collect();
        assert_eq!(a, b);
        assert_ne!(f.stream("nic/3").next_u64(), f.stream("nic/4").next_u64());
    }
}
