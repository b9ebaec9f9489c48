//! K-slack reordering buffer for intra-stream disorder.
//!
//! A tuple is held until the stream's local time reaches `ts + k`. Emission is
//! checked whenever an arriving tuple moves the local time (that is, whenever
//! the arrival has zero delay), and immediately when `k` shrinks. Released
//! tuples leave in `(ts, seq)` order.

use std::collections::BTreeMap;

use crate::stream::{Millis, StreamClock, Timestamp, Tuple};

#[derive(Debug, Clone)]
pub struct KSlackBuffer {
    k: Millis,
    held: BTreeMap<(Timestamp, u64), Tuple>,
    clock: StreamClock,
}

impl KSlackBuffer {
    pub fn new(k: Millis) -> Self {
        assert!(k >= 0, "buffer size must be non-negative");
        KSlackBuffer {
            k,
            held: BTreeMap::new(),
            clock: StreamClock::new(),
        }
    }

    pub fn k(&self) -> Millis {
        self.k
    }

    pub fn clock(&self) -> &StreamClock {
        &self.clock
    }

    pub fn len(&self) -> usize {
        self.held.len()
    }

    pub fn is_empty(&self) -> bool {
        self.held.is_empty()
    }

    /// Smallest held timestamp, if any.
    pub fn oldest(&self) -> Option<Timestamp> {
        self.held.keys().next().map(|(ts, _)| *ts)
    }

    pub fn push(&mut self, e: Tuple) -> Vec<Tuple> {
        let mut out = Vec::new();
        self.push_into(e, &mut out);
        out
    }

    /// Annotates `e` with its delay, buffers it and appends released tuples
    /// to `out`.
    pub fn push_into(&mut self, mut e: Tuple, out: &mut Vec<Tuple>) {
        let delay = self.clock.observe(&mut e);
        self.held.insert(e.order_key(), e);
        if delay == 0 {
            self.release(out);
        }
    }

    pub fn set_k(&mut self, k: Millis) -> Vec<Tuple> {
        let mut out = Vec::new();
        self.set_k_into(k, &mut out);
        out
    }

    pub fn set_k_into(&mut self, k: Millis, out: &mut Vec<Tuple>) {
        assert!(k >= 0, "buffer size must be non-negative");
        let shrunk = k < self.k;
        self.k = k;
        if shrunk {
            self.release(out);
        }
    }

    /// Drains every held tuple in `(ts, seq)` order.
    pub fn flush(&mut self) -> Vec<Tuple> {
        std::mem::take(&mut self.held).into_values().collect()
    }

    fn release(&mut self, out: &mut Vec<Tuple>) {
        let horizon = self.clock.local_time() - self.k;
        while let Some(entry) = self.held.first_entry() {
            if entry.key().0 > horizon {
                break;
            }
            out.push(entry.remove());
        }
    }
}
