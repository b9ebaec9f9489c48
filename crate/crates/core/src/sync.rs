//! Merges the K-slack outputs of all streams into one stream.
//!
//! Tuples newer than the synchronization time wait until every stream has a
//! pending tuple; then the globally smallest timestamp is released. Tuples at
//! or behind the synchronization time pass straight through. A closed stream
//! never blocks the others.

use std::collections::BTreeMap;

use crate::stream::{Timestamp, Tuple};

#[derive(Debug, Clone)]
pub struct Synchronizer {
    t_sync: Timestamp,
    pending: Vec<BTreeMap<(Timestamp, u64), Tuple>>,
    closed: Vec<bool>,
}

impl Synchronizer {
    pub fn new(streams: usize) -> Self {
        Synchronizer {
            t_sync: Timestamp::ZERO,
            pending: vec![BTreeMap::new(); streams],
            closed: vec![false; streams],
        }
    }

    pub fn t_sync(&self) -> Timestamp {
        self.t_sync
    }

    pub fn pending_len(&self, stream: usize) -> usize {
        self.pending[stream].len()
    }

    pub fn pending_total(&self) -> usize {
        self.pending.iter().map(BTreeMap::len).sum()
    }

    /// Pending timestamps of one stream, oldest first.
    pub fn pending_ts(&self, stream: usize) -> impl Iterator<Item = Timestamp> + '_ {
        self.pending[stream].keys().map(|(ts, _)| *ts)
    }

    pub fn offer(&mut self, e: Tuple) -> Vec<Tuple> {
        let mut out = Vec::new();
        self.offer_into(e, &mut out);
        out
    }

    pub fn offer_into(&mut self, e: Tuple, out: &mut Vec<Tuple>) {
        if e.ts > self.t_sync {
            self.pending[e.stream].insert(e.order_key(), e);
            self.release(out);
        } else {
            out.push(e);
        }
    }

    /// Marks a stream as finished and releases whatever it was blocking.
    pub fn close_stream(&mut self, stream: usize) -> Vec<Tuple> {
        self.closed[stream] = true;
        let mut out = Vec::new();
        self.release(&mut out);
        out
    }

    /// Drains everything pending in `(ts, stream, seq)` order.
    pub fn flush(&mut self) -> Vec<Tuple> {
        let mut all: Vec<Tuple> = self
            .pending
            .iter_mut()
            .flat_map(|p| std::mem::take(p).into_values())
            .collect();
        all.sort_by_key(|t| (t.ts, t.stream, t.seq));
        if let Some(last) = all.last() {
            self.t_sync = self.t_sync.max(last.ts);
        }
        all
    }

    fn ready(&self) -> bool {
        let mut any = false;
        for (p, closed) in self.pending.iter().zip(&self.closed) {
            if p.is_empty() {
                if !closed {
                    return false;
                }
            } else {
                any = true;
            }
        }
        any
    }

    fn release(&mut self, out: &mut Vec<Tuple>) {
        while self.ready() {
            let min = self
                .pending
                .iter()
                .filter_map(|p| p.keys().next().map(|(ts, _)| *ts))
                .min()
                .expect("ready implies a pending tuple");
            self.t_sync = min;
            for p in &mut self.pending {
                while let Some(entry) = p.first_entry() {
                    if entry.key().0 != min {
                        break;
                    }
                    out.push(entry.remove());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(out: &[Tuple]) -> Vec<(usize, i64)> {
        out.iter().map(|t| (t.stream, t.ts.0)).collect()
    }

    #[test]
    fn releases_only_when_every_stream_has_a_tuple() {
        let mut s = Synchronizer::new(2);
        assert!(s.offer(Tuple::bare(0, 1, 1)).is_empty());
        assert!(s.offer(Tuple::bare(0, 2, 2)).is_empty());
        let out = s.offer(Tuple::bare(1, 1, 3));
        assert_eq!(ids(&out), [(0, 1), (0, 2)]);
        assert_eq!(s.t_sync(), Timestamp(2));
        assert_eq!(s.pending_len(1), 1);
    }

    #[test]
    fn late_tuples_pass_through() {
        let mut s = Synchronizer::new(2);
        s.offer(Tuple::bare(0, 1, 5));
        s.offer(Tuple::bare(1, 1, 5));
        assert_eq!(s.t_sync(), Timestamp(5));
        let out = s.offer(Tuple::bare(0, 2, 4));
        assert_eq!(ids(&out), [(0, 4)]);
    }

    #[test]
    fn silent_stream_blocks_until_flush() {
        let mut s = Synchronizer::new(3);
        for i in 1..=5 {
            assert!(s.offer(Tuple::bare(0, i, i as i64)).is_empty());
            assert!(s.offer(Tuple::bare(1, i, i as i64)).is_empty());
        }
        assert_eq!(s.flush().len(), 10);
    }

    #[test]
    fn closing_a_stream_unblocks_the_rest() {
        let mut s = Synchronizer::new(2);
        s.offer(Tuple::bare(0, 1, 3));
        s.offer(Tuple::bare(0, 2, 4));
        let out = s.close_stream(1);
        assert_eq!(ids(&out), [(0, 3), (0, 4)]);
        assert_eq!(ids(&s.offer(Tuple::bare(0, 3, 9))), [(0, 9)]);
    }

    #[test]
    fn equal_timestamps_release_by_stream_index() {
        let mut s = Synchronizer::new(3);
        s.offer(Tuple::bare(2, 1, 7));
        s.offer(Tuple::bare(0, 1, 7));
        let out = s.offer(Tuple::bare(1, 1, 7));
        assert_eq!(ids(&out), [(0, 7), (1, 7), (2, 7)]);
    }

    #[test]
    fn flush_sorts_and_advances() {
        let mut s = Synchronizer::new(2);
        assert!(s.flush().is_empty());
        s.offer(Tuple::bare(0, 1, 9));
        s.offer(Tuple::bare(0, 2, 7));
        assert_eq!(ids(&s.flush()), [(0, 7), (0, 9)]);
        assert_eq!(s.t_sync(), Timestamp(9));
    }
}
