//! Ground truth and recall metrics.
//!
//! The true results of a query are the results the join produces when the
//! whole trace is fed to it sorted by `(ts, stream, seq)`.

use std::collections::{HashMap, HashSet};

use crate::error::Result;
use crate::join::{JoinOperator, ResultTuple};
use crate::predicate::JoinPredicate;
use crate::stream::{Millis, Timestamp, Tuple, WindowSpec};

fn sorted(trace: &[Tuple]) -> Vec<Tuple> {
    let mut all = trace.to_vec();
    all.sort_by_key(|t| (t.ts, t.stream, t.seq));
    all
}

/// Every true result, in output order.
pub fn compute_truth(trace: &[Tuple], spec: &WindowSpec, predicate: &JoinPredicate) -> Result<Vec<ResultTuple>> {
    let mut join = JoinOperator::new(spec.clone(), predicate.clone())?;
    Ok(sorted(trace).into_iter().flat_map(|t| join.process(t).0).collect())
}

/// Number of true results per result timestamp, without materializing them.
pub fn truth_counts(trace: &[Tuple], spec: &WindowSpec, predicate: &JoinPredicate) -> Result<ResultCounts> {
    let mut join = JoinOperator::new(spec.clone(), predicate.clone())?;
    let mut counts = ResultCounts::new();
    for t in sorted(trace) {
        let ts = t.ts;
        counts.add(ts, join.process_count(t).n_join);
    }
    Ok(counts)
}

/// Result counts indexed by timestamp, queryable over half-open ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResultCounts {
    /// (timestamp, cumulative count up to and including it), ascending.
    cumulative: Vec<(Timestamp, u64)>,
}

impl ResultCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a ResultTuple>) -> Self {
        let mut per_ts: Vec<(Timestamp, u64)> = results.into_iter().map(|r| (r.ts, 1)).collect();
        per_ts.sort_by_key(|&(ts, _)| ts);
        let mut counts = Self::new();
        for (ts, n) in per_ts {
            counts.add(ts, n);
        }
        counts
    }

    /// Adds `n` results at `ts`. Timestamps must not decrease.
    pub fn add(&mut self, ts: Timestamp, n: u64) {
        if n == 0 {
            return;
        }
        match self.cumulative.last_mut() {
            Some((last, total)) if *last == ts => *total += n,
            Some((last, total)) => {
                assert!(ts > *last, "result timestamps must not decrease");
                let total = *total + n;
                self.cumulative.push((ts, total));
            }
            None => self.cumulative.push((ts, n)),
        }
    }

    pub fn total(&self) -> u64 {
        self.cumulative.last().map_or(0, |&(_, c)| c)
    }

    fn up_to(&self, ts: Timestamp) -> u64 {
        let idx = self.cumulative.partition_point(|&(t, _)| t <= ts);
        if idx == 0 {
            0
        } else {
            self.cumulative[idx - 1].1
        }
    }

    /// Results with timestamps in `(t - period, t]`.
    pub fn count_in_period(&self, t: Timestamp, period: Millis) -> u64 {
        self.up_to(t) - self.up_to(t - period)
    }

    /// `(timestamp, count at that timestamp)` pairs.
    pub fn per_timestamp(&self) -> impl Iterator<Item = (Timestamp, u64)> + '_ {
        let mut prev = 0;
        self.cumulative.iter().map(move |&(ts, c)| {
            let n = c - prev;
            prev = c;
            (ts, n)
        })
    }
}

/// `produced / truth` over `(t - period, t]`, or 1 when the truth is empty.
pub fn recall_at(truth: &ResultCounts, produced: &ResultCounts, t: Timestamp, period: Millis) -> f64 {
    let want = truth.count_in_period(t, period);
    if want == 0 {
        return 1.0;
    }
    produced.count_in_period(t, period) as f64 / want as f64
}

/// Recall matching produced results to true ones by part identity; the
/// truth's timestamp decides membership in the period.
pub fn recall_by_identity(truth: &[ResultTuple], produced: &[ResultTuple], t: Timestamp, period: Millis) -> f64 {
    let found: HashSet<Vec<(usize, u64)>> = produced.iter().map(ResultTuple::identity).collect();
    let in_period: Vec<&ResultTuple> = truth.iter().filter(|r| r.ts > t - period && r.ts <= t).collect();
    if in_period.is_empty() {
        return 1.0;
    }
    let hits = in_period.iter().filter(|r| found.contains(&r.identity())).count();
    hits as f64 / in_period.len() as f64
}

/// Fraction of samples at or above `gamma`; `None` for an empty series.
pub fn phi(samples: &[f64], gamma: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    Some(samples.iter().filter(|&&s| s >= gamma).count() as f64 / samples.len() as f64)
}

/// Result identity plus timestamp, for multiset comparisons.
pub type ResultKey = (Vec<(usize, u64)>, Timestamp);

pub fn result_multiset<'a>(results: impl IntoIterator<Item = &'a ResultTuple>) -> HashMap<ResultKey, usize> {
    let mut m = HashMap::new();
    for r in results {
        *m.entry((r.identity(), r.ts)).or_insert(0) += 1;
    }
    m
}

/// Direct enumeration of the window semantics: a combination (one tuple per
/// stream) is a result iff it passes the predicate and every part lies
/// within its own window of the latest part, the latest being the maximum
/// by `(ts, stream, seq)`. Runs in `O(n * w^(m-1))`; meant for small traces.
pub fn brute_force(trace: &[Tuple], spec: &WindowSpec, predicate: &JoinPredicate) -> HashMap<ResultKey, usize> {
    let m = spec.streams();
    let mut by_stream: Vec<Vec<&Tuple>> = vec![Vec::new(); m];
    for t in trace {
        by_stream[t.stream].push(t);
    }
    let mut out = HashMap::new();
    let order = |t: &Tuple| (t.ts, t.stream, t.seq);
    for last in trace {
        let pools: Vec<Vec<&Tuple>> = (0..m)
            .map(|j| {
                if j == last.stream {
                    vec![last]
                } else {
                    by_stream[j]
                        .iter()
                        .copied()
                        .filter(|t| order(t) < order(last) && t.ts >= last.ts - spec.size(j))
                        .collect()
                }
            })
            .collect();
        if pools.iter().any(Vec::is_empty) {
            continue;
        }
        let mut idx = vec![0usize; m];
        loop {
            let parts: Vec<&Tuple> = (0..m).map(|j| pools[j][idx[j]]).collect();
            if predicate.eval(&parts) {
                let id = parts.iter().map(|p| (p.stream, p.seq)).collect();
                *out.entry((id, last.ts)).or_insert(0) += 1;
            }
            let mut j = 0;
            while j < m {
                idx[j] += 1;
                if idx[j] < pools[j].len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == m {
                break;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::Value;

    fn letters(items: &[(usize, char, i64)]) -> Vec<Tuple> {
        let mut next = [0u64; 2];
        items
            .iter()
            .map(|&(s, c, ts)| {
                next[s] += 1;
                Tuple::bare(s, next[s], ts).with_attr("v", Value::Int(c as i64))
            })
            .collect()
    }

    #[test]
    fn truth_contains_the_results_disorder_misses() {
        let trace = letters(&[
            (0, 'a', 1),
            (1, 'a', 1),
            (1, 'b', 2),
            (0, 'b', 3),
            (1, 'c', 3),
            (0, 'e', 5),
            (0, 'b', 6),
            (0, 'c', 4),
            (0, 'd', 8),
            (1, 'e', 7),
        ]);
        let spec = WindowSpec::uniform(2, 2).unwrap();
        let pred = JoinPredicate::parse("equi(1.v=2.v)").unwrap();
        let truth = compute_truth(&trace, &spec, &pred).unwrap();
        let pairs: Vec<(i64, i64, i64)> = truth
            .iter()
            .map(|r| (r.parts[0].ts.0, r.parts[1].ts.0, r.ts.0))
            .collect();
        assert!(pairs.contains(&(4, 3, 4)));
        assert!(pairs.contains(&(5, 7, 7)));
        assert_eq!(result_multiset(&truth), brute_force(&trace, &spec, &pred));
    }

    #[test]
    fn empty_trace_has_no_truth() {
        let spec = WindowSpec::uniform(2, 5).unwrap();
        assert!(compute_truth(&[], &spec, &JoinPredicate::Cross).unwrap().is_empty());
        assert_eq!(truth_counts(&[], &spec, &JoinPredicate::Cross).unwrap().total(), 0);
    }

    #[test]
    fn cross_truth_matches_pair_enumeration() {
        let trace: Vec<Tuple> = (0..40)
            .map(|n| Tuple::bare(n % 2, (n / 2 + 1) as u64, ((n * 7) % 23) as i64))
            .collect();
        let spec = WindowSpec::new(vec![4, 6]).unwrap();
        let truth = compute_truth(&trace, &spec, &JoinPredicate::Cross).unwrap();
        // Pairs (a, b) with b.ts in [a.ts - W_2, a.ts + W_1].
        let (s0, s1): (Vec<_>, Vec<_>) = trace.iter().partition(|t| t.stream == 0);
        let expected = s0
            .iter()
            .flat_map(|a| s1.iter().filter(move |b| b.ts.0 >= a.ts.0 - 6 && b.ts.0 <= a.ts.0 + 4))
            .count();
        assert_eq!(truth.len(), expected);
        let counts = truth_counts(&trace, &spec, &JoinPredicate::Cross).unwrap();
        assert_eq!(counts.total(), expected as u64);
    }

    #[test]
    fn recall_counting() {
        let mut truth = ResultCounts::new();
        truth.add(Timestamp(5), 10);
        let mut produced = ResultCounts::new();
        assert_eq!(recall_at(&truth, &produced, Timestamp(5), 10), 0.0);
        produced.add(Timestamp(5), 7);
        assert!((recall_at(&truth, &produced, Timestamp(5), 10) - 0.7).abs() < 1e-12);
        assert_eq!(recall_at(&truth, &truth, Timestamp(9), 10), 1.0);
        assert_eq!(recall_at(&truth, &produced, Timestamp(100), 10), 1.0);
    }

    #[test]
    fn periods_are_half_open() {
        let mut c = ResultCounts::new();
        c.add(Timestamp(10), 1);
        c.add(Timestamp(20), 2);
        c.add(Timestamp(20), 1);
        assert_eq!(c.count_in_period(Timestamp(20), 10), 3);
        assert_eq!(c.count_in_period(Timestamp(19), 10), 1);
        assert_eq!(c.count_in_period(Timestamp(30), 10), 0);
        assert_eq!(
            c.per_timestamp().collect::<Vec<_>>(),
            [(Timestamp(10), 1), (Timestamp(20), 3)]
        );
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(&[0.97, 1.0], 0.95), Some(1.0));
        assert!((phi(&[0.96, 0.94, 0.95], 0.95).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(phi(&[0.0, 0.3], 0.0), Some(1.0));
        assert_eq!(phi(&[], 0.5), None);
    }
}
