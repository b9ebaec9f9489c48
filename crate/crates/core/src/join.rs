//! The m-way sliding-window join.
//!
//! Tuples whose timestamp is at least the join's time (`t_join`, the maximum
//! timestamp processed so far) trigger a probe: the other windows are expired
//! relative to the trigger, every predicate-passing combination with one tuple
//! per other window becomes a result at the trigger's timestamp, and the
//! trigger is inserted into its own window. Older tuples only join the window
//! (if still inside its scope) and derive nothing, so the output is
//! timestamp-ordered by construction.
//!
//! [`JoinOperator::process`] materializes results; [`JoinOperator::process_count`]
//! only counts them, which keeps cross and low-selectivity equi joins over
//! long traces tractable.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use crate::error::Result;
use crate::predicate::{AttrRef, JoinPredicate, PairTerm};
use crate::stream::{Millis, Timestamp, Tuple, ValueKey, WindowSpec};

type Key = (Timestamp, u64);

/// One joined combination. `parts` is indexed by stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTuple {
    pub ts: Timestamp,
    pub parts: Vec<Arc<Tuple>>,
}

impl ResultTuple {
    /// `(stream, seq)` of every part, in stream order.
    pub fn identity(&self) -> Vec<(usize, u64)> {
        self.parts.iter().map(|p| (p.stream, p.seq)).collect()
    }
}

/// What one call to the join observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeRecord {
    pub stream: usize,
    pub ts: Timestamp,
    /// Delay annotated by the K-slack stage.
    pub delay: Millis,
    /// Product of the other windows' sizes after expiry.
    pub n_cross: u64,
    pub n_join: u64,
    pub in_order: bool,
}

/// Running totals for end-of-run reconciliation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinCounters {
    pub received: u64,
    pub in_order: u64,
    pub late_inserted: u64,
    pub late_dropped: u64,
    pub expired: u64,
    pub results: u64,
}

#[derive(Debug, Clone, Default)]
struct Window {
    tuples: BTreeMap<Key, Arc<Tuple>>,
    index: HashMap<Arc<str>, HashMap<ValueKey, BTreeSet<Key>>>,
}

impl Window {
    fn new(indexed: &[Arc<str>]) -> Self {
        Window {
            tuples: BTreeMap::new(),
            index: indexed.iter().map(|a| (a.clone(), HashMap::new())).collect(),
        }
    }

    fn insert(&mut self, t: Arc<Tuple>) {
        let key = t.order_key();
        for (attr, idx) in &mut self.index {
            if let Some(v) = t.attr(attr) {
                idx.entry(v.key()).or_default().insert(key);
            }
        }
        self.tuples.insert(key, t);
    }

    /// Removes tuples with `ts < bound`; returns how many.
    fn expire_before(&mut self, bound: Timestamp) -> u64 {
        let mut n = 0;
        while let Some(entry) = self.tuples.first_entry() {
            if entry.key().0 >= bound {
                break;
            }
            let t = entry.remove();
            n += 1;
            let key = t.order_key();
            for (attr, idx) in &mut self.index {
                if let Some(v) = t.attr(attr) {
                    let k = v.key();
                    if let Some(set) = idx.get_mut(&k) {
                        set.remove(&key);
                        if set.is_empty() {
                            idx.remove(&k);
                        }
                    }
                }
            }
        }
        n
    }

    fn lookup(&self, attr: &str, value: ValueKey) -> Option<&BTreeSet<Key>> {
        self.index.get(attr).and_then(|idx| idx.get(&value))
    }

    fn len(&self) -> usize {
        self.tuples.len()
    }
}

/// Probe strategy for one level of the nested loop.
#[derive(Debug, Clone)]
struct Level {
    stream: usize,
    /// Equality usable for an index lookup: (attr on this stream, bound attr).
    probe: Option<(Arc<str>, AttrRef)>,
    /// Terms that become checkable once this level is bound.
    checks: Vec<PairTerm>,
}

/// Equivalence classes of attributes linked by equalities.
#[derive(Debug, Clone)]
struct EquiClasses {
    /// Per stream: (attribute, class id).
    members: Vec<Vec<(Arc<str>, usize)>>,
    classes: usize,
}

impl EquiClasses {
    fn build(pairs: &[(AttrRef, AttrRef)], streams: usize) -> Self {
        let mut nodes: Vec<AttrRef> = Vec::new();
        let node_of = |r: &AttrRef, nodes: &mut Vec<AttrRef>| {
            nodes.iter().position(|n| n == r).unwrap_or_else(|| {
                nodes.push(r.clone());
                nodes.len() - 1
            })
        };
        let mut edges = Vec::new();
        for (a, b) in pairs {
            let x = node_of(a, &mut nodes);
            let y = node_of(b, &mut nodes);
            edges.push((x, y));
        }
        let mut parent: Vec<usize> = (0..nodes.len()).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let next = p[c];
                p[c] = r;
                c = next;
            }
            r
        }
        for (x, y) in edges {
            let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
            if rx != ry {
                parent[rx.max(ry)] = rx.min(ry);
            }
        }
        let mut ids: HashMap<usize, usize> = HashMap::new();
        let mut members = vec![Vec::new(); streams];
        for (i, node) in nodes.iter().enumerate() {
            let root = find(&mut parent, i);
            let next = ids.len();
            let id = *ids.entry(root).or_insert(next);
            members[node.stream].push((node.attr.clone(), id));
        }
        EquiClasses {
            members,
            classes: ids.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JoinOperator {
    spec: WindowSpec,
    predicate: JoinPredicate,
    t_join: Timestamp,
    windows: Vec<Window>,
    plans: Vec<Vec<Level>>,
    classes: Option<EquiClasses>,
    indexed: bool,
    counters: JoinCounters,
}

impl JoinOperator {
    pub fn new(spec: WindowSpec, predicate: JoinPredicate) -> Result<Self> {
        Self::build(spec, predicate, true)
    }

    /// Same semantics without attribute indexes (plain nested loops).
    pub fn unindexed(spec: WindowSpec, predicate: JoinPredicate) -> Result<Self> {
        Self::build(spec, predicate, false)
    }

    fn build(spec: WindowSpec, predicate: JoinPredicate, indexed: bool) -> Result<Self> {
        let m = spec.streams();
        predicate.validate(m)?;
        let terms = predicate.pair_terms();
        let mut index_attrs: Vec<Vec<Arc<str>>> = vec![Vec::new(); m];
        if indexed {
            for t in &terms {
                if let PairTerm::Equal(a, b) = t {
                    for r in [a, b] {
                        if !index_attrs[r.stream].contains(&r.attr) {
                            index_attrs[r.stream].push(r.attr.clone());
                        }
                    }
                }
            }
        }
        let plans = (0..m).map(|trigger| plan_for(trigger, m, &terms, indexed)).collect();
        let classes = match &predicate {
            JoinPredicate::Equi(pairs) => Some(EquiClasses::build(pairs, m)),
            _ => None,
        };
        Ok(JoinOperator {
            windows: index_attrs.iter().map(|a| Window::new(a)).collect(),
            spec,
            predicate,
            t_join: Timestamp::ZERO,
            plans,
            classes,
            indexed,
            counters: JoinCounters::default(),
        })
    }

    pub fn t_join(&self) -> Timestamp {
        self.t_join
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn predicate(&self) -> &JoinPredicate {
        &self.predicate
    }

    pub fn counters(&self) -> JoinCounters {
        self.counters
    }

    pub fn window_len(&self, stream: usize) -> usize {
        self.windows[stream].len()
    }

    /// Timestamps currently in one window, oldest first.
    pub fn window_ts(&self, stream: usize) -> impl Iterator<Item = Timestamp> + '_ {
        self.windows[stream].tuples.keys().map(|(ts, _)| *ts)
    }

    /// Tuples currently held by all windows.
    pub fn windowed(&self) -> u64 {
        self.windows.iter().map(|w| w.len() as u64).sum()
    }

    pub fn process(&mut self, e: Tuple) -> (Vec<ResultTuple>, ProbeRecord) {
        let mut results = Vec::new();
        let rec = self.step(e, Some(&mut results));
        (results, rec)
    }

    /// Like [`process`](Self::process) but only counts results.
    pub fn process_count(&mut self, e: Tuple) -> ProbeRecord {
        self.step(e, None)
    }

    fn step(&mut self, e: Tuple, sink: Option<&mut Vec<ResultTuple>>) -> ProbeRecord {
        self.counters.received += 1;
        let i = e.stream;
        let mut rec = ProbeRecord {
            stream: i,
            ts: e.ts,
            delay: e.delay,
            n_cross: 0,
            n_join: 0,
            in_order: e.ts >= self.t_join,
        };
        if !rec.in_order {
            if e.ts > self.t_join - self.spec.size(i) {
                self.windows[i].insert(Arc::new(e));
                self.counters.late_inserted += 1;
            } else {
                self.counters.late_dropped += 1;
            }
            return rec;
        }
        self.t_join = e.ts;
        self.counters.in_order += 1;
        for j in (0..self.windows.len()).filter(|&j| j != i) {
            let bound = e.ts - self.spec.size(j);
            self.counters.expired += self.windows[j].expire_before(bound);
        }
        rec.n_cross = self
            .windows
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .fold(1u64, |acc, (_, w)| acc.saturating_mul(w.len() as u64));
        let e = Arc::new(e);
        rec.n_join = match sink {
            Some(out) => {
                let before = out.len();
                self.enumerate(&e, &mut |parts| {
                    out.push(ResultTuple {
                        ts: e.ts,
                        parts: parts.iter().map(|p| Arc::clone(p)).collect(),
                    })
                });
                (out.len() - before) as u64
            }
            None => self.count(&e, rec.n_cross),
        };
        self.counters.results += rec.n_join;
        self.windows[i].insert(e);
        rec
    }

    fn count(&self, e: &Arc<Tuple>, n_cross: u64) -> u64 {
        if n_cross == 0 {
            return 0;
        }
        match (&self.predicate, &self.classes) {
            (JoinPredicate::Cross, _) => n_cross,
            (JoinPredicate::Equi(_), Some(classes)) if self.indexed => {
                let mut bound = vec![None; classes.classes];
                if !bind(&classes.members[e.stream], e, &mut bound) {
                    return 0;
                }
                let rest: Vec<usize> = (0..self.windows.len()).filter(|&s| s != e.stream).collect();
                self.count_classes(classes, &rest, &mut bound)
            }
            _ => {
                let mut n = 0u64;
                self.enumerate(e, &mut |_| n += 1);
                n
            }
        }
    }

    /// Counts combinations over `rest` consistent with the bound classes.
    fn count_classes(&self, classes: &EquiClasses, rest: &[usize], bound: &mut Vec<Option<ValueKey>>) -> u64 {
        // A stream that shares an unbound class with another remaining stream
        // couples them; enumerate it first.
        let coupled = rest.iter().position(|&s| {
            classes.members[s].iter().any(|&(_, c)| {
                bound[c].is_none()
                    && rest
                        .iter()
                        .any(|&o| o != s && classes.members[o].iter().any(|&(_, oc)| oc == c))
            })
        });
        let Some(pos) = coupled else {
            let mut total = 1u64;
            for &s in rest {
                let n = self.count_stream(classes, s, bound);
                if n == 0 {
                    return 0;
                }
                total = total.saturating_mul(n);
            }
            return total;
        };
        let s = rest[pos];
        let others: Vec<usize> = rest.iter().copied().filter(|&o| o != s).collect();
        // Group the stream's consistent tuples by the values they bind.
        let mut groups: BTreeMap<Vec<(usize, ValueKey)>, u64> = BTreeMap::new();
        for t in self.candidates(classes, s, bound) {
            let mut local = bound.clone();
            if bind(&classes.members[s], t, &mut local) {
                let fresh: Vec<(usize, ValueKey)> = (0..local.len())
                    .filter(|&c| bound[c].is_none())
                    .filter_map(|c| local[c].map(|v| (c, v)))
                    .collect();
                *groups.entry(fresh).or_default() += 1;
            }
        }
        let mut total = 0u64;
        for (fresh, weight) in groups {
            for &(c, v) in &fresh {
                bound[c] = Some(v);
            }
            let n = self.count_classes(classes, &others, bound);
            total = total.saturating_add(weight.saturating_mul(n));
            for &(c, _) in &fresh {
                bound[c] = None;
            }
        }
        total
    }

    fn count_stream(&self, classes: &EquiClasses, s: usize, bound: &[Option<ValueKey>]) -> u64 {
        let members = &classes.members[s];
        if let [(attr, c)] = members.as_slice() {
            if let Some(v) = bound[*c] {
                return self.windows[s].lookup(attr, v).map_or(0, |set| set.len() as u64);
            }
        }
        self.candidates(classes, s, bound)
            .filter(|t| {
                let mut local = bound.to_vec();
                bind(members, t, &mut local)
            })
            .count() as u64
    }

    /// Window tuples of `s`, narrowed through an index when a class is bound.
    fn candidates<'a>(
        &'a self,
        classes: &EquiClasses,
        s: usize,
        bound: &[Option<ValueKey>],
    ) -> Box<dyn Iterator<Item = &'a Arc<Tuple>> + 'a> {
        let w = &self.windows[s];
        let narrowed = classes.members[s]
            .iter()
            .filter_map(|(attr, c)| bound[*c].map(|v| w.lookup(attr, v)))
            .min_by_key(|set| set.map_or(0, BTreeSet::len));
        match narrowed {
            Some(None) => Box::new(std::iter::empty()),
            Some(Some(set)) => Box::new(set.iter().map(move |k| &w.tuples[k])),
            None => Box::new(w.tuples.values()),
        }
    }

    /// Visits every predicate-passing combination for trigger `e`, streams in
    /// ascending order, each window in `(ts, seq)` order.
    fn enumerate(&self, e: &Arc<Tuple>, visit: &mut dyn FnMut(&[&Arc<Tuple>])) {
        let plan = &self.plans[e.stream];
        if plan.iter().any(|l| self.windows[l.stream].len() == 0) {
            return;
        }
        let mut parts: Vec<&Arc<Tuple>> = vec![e; self.windows.len()];
        self.descend(plan, 0, &mut parts, visit);
    }

    fn descend<'a>(
        &'a self,
        plan: &[Level],
        depth: usize,
        parts: &mut Vec<&'a Arc<Tuple>>,
        visit: &mut dyn FnMut(&[&Arc<Tuple>]),
    ) {
        let Some(level) = plan.get(depth) else {
            if let JoinPredicate::Custom(c) = &self.predicate {
                let refs: Vec<&Tuple> = parts.iter().map(|p| p.as_ref()).collect();
                if !c.call(&refs) {
                    return;
                }
            }
            visit(parts);
            return;
        };
        let w = &self.windows[level.stream];
        let candidates: Box<dyn Iterator<Item = &Arc<Tuple>>> = match &level.probe {
            Some((attr, other)) => match other.value(parts[other.stream]) {
                Some(v) => match w.lookup(attr, v.key()) {
                    Some(set) => Box::new(set.iter().map(|k| &w.tuples[k])),
                    None => return,
                },
                None => return,
            },
            None => Box::new(w.tuples.values()),
        };
        for t in candidates {
            parts[level.stream] = t;
            let ok = level.checks.iter().all(|term| {
                let (a, b) = term.streams();
                term.holds(parts[a], parts[b])
            });
            if ok {
                self.descend(plan, depth + 1, parts, visit);
            }
        }
    }
}

/// Binds classes from the attributes of `t`; false on a conflict or a
/// missing attribute.
fn bind(members: &[(Arc<str>, usize)], t: &Tuple, bound: &mut [Option<ValueKey>]) -> bool {
    for (attr, c) in members {
        let Some(v) = t.attr(attr) else {
            return false;
        };
        let v = v.key();
        match bound[*c] {
            Some(b) if b != v => return false,
            Some(_) => {}
            None => bound[*c] = Some(v),
        }
    }
    true
}

fn plan_for(trigger: usize, m: usize, terms: &[PairTerm], indexed: bool) -> Vec<Level> {
    let mut bound = vec![trigger];
    let mut plan = Vec::new();
    for s in (0..m).filter(|&s| s != trigger) {
        let probe = if indexed {
            terms.iter().find_map(|t| match t {
                PairTerm::Equal(a, b) if a.stream == s && bound.contains(&b.stream) => {
                    Some((a.attr.clone(), b.clone()))
                }
                PairTerm::Equal(a, b) if b.stream == s && bound.contains(&a.stream) => {
                    Some((b.attr.clone(), a.clone()))
                }
                _ => None,
            })
        } else {
            None
        };
        bound.push(s);
        let checks = terms
            .iter()
            .filter(|t| {
                let (a, b) = t.streams();
                (a == s || b == s) && bound.contains(&a) && bound.contains(&b)
            })
            .cloned()
            .collect();
        plan.push(Level {
            stream: s,
            probe,
            checks,
        });
    }
    plan
}

/// True iff result timestamps never decrease.
pub fn output_in_order_check(results: &[ResultTuple]) -> bool {
    results.windows(2).all(|w| w[0].ts <= w[1].ts)
}
