//! Delay histograms, arrival rates and synchronizer-skew estimates over
//! adaptively sized recent histories.
//!
//! Each stream keeps its recent delays in a window whose length is chosen by
//! an ADWIN-style change detector: whenever two adjacent sub-windows have
//! significantly different mean delays, the older part is forgotten.

use std::collections::VecDeque;

use crate::stream::{Millis, StreamClock, Timestamp};

/// Coarse delay bin: 0 for in-order tuples, otherwise `ceil(delay / g)`.
pub fn coarse_delay(delay: Millis, g: Millis) -> usize {
    debug_assert!(delay >= 0 && g > 0);
    if delay <= 0 {
        0
    } else {
        ((delay + g - 1) / g) as usize
    }
}

/// Discrete pdf over coarse delay bins.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayHistogram {
    granularity: Millis,
    mass: Vec<f64>,
    samples: usize,
}

impl DelayHistogram {
    /// All mass in bin 0.
    pub fn in_order(granularity: Millis) -> Self {
        DelayHistogram {
            granularity,
            mass: vec![1.0],
            samples: 0,
        }
    }

    /// Builds a histogram from explicit bin masses (normalized here).
    pub fn from_masses(granularity: Millis, mass: Vec<f64>) -> Self {
        let total: f64 = mass.iter().sum();
        assert!(total > 0.0, "histogram needs positive mass");
        let mut h = DelayHistogram {
            granularity,
            mass: mass.into_iter().map(|m| m / total).collect(),
            samples: 0,
        };
        h.trim();
        h
    }

    pub fn from_delays(granularity: Millis, delays: impl IntoIterator<Item = Millis>) -> Option<Self> {
        let mut counts: Vec<u64> = Vec::new();
        for d in delays {
            let bin = coarse_delay(d, granularity);
            if counts.len() <= bin {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
        }
        Self::from_counts(granularity, &counts)
    }

    fn from_counts(granularity: Millis, counts: &[u64]) -> Option<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return None;
        }
        let mut h = DelayHistogram {
            granularity,
            mass: counts.iter().map(|&c| c as f64 / n as f64).collect(),
            samples: n as usize,
        };
        h.trim();
        Some(h)
    }

    fn trim(&mut self) {
        while self.mass.len() > 1 && self.mass.last() == Some(&0.0) {
            self.mass.pop();
        }
    }

    pub fn granularity(&self) -> Millis {
        self.granularity
    }

    pub fn sample_count(&self) -> usize {
        self.samples
    }

    /// Mass of bin `d`.
    pub fn f(&self, d: usize) -> f64 {
        self.mass.get(d).copied().unwrap_or(0.0)
    }

    /// Highest bin with nonzero mass.
    pub fn max_bin(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Mass of bins `0..=d`; exactly 1 once `d` covers every bin.
    pub fn cumulative(&self, d: usize) -> f64 {
        if d >= self.max_bin() {
            1.0
        } else {
            self.mass[..=d].iter().sum()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bucket {
    total: f64,
    variance: f64,
    len: u64,
}

/// Adaptive windowing change detector over a real-valued sequence.
///
/// Keeps an exponential histogram of buckets (at most `max_buckets` per
/// size class) and drops the oldest buckets while some split of the window
/// into an older and a newer part shows mean values further apart than the
/// Hoeffding-style bound at confidence `delta`.
#[derive(Debug, Clone)]
pub struct Adwin {
    delta: f64,
    max_buckets: usize,
    min_side: u64,
    rows: Vec<VecDeque<Bucket>>,
    width: u64,
    total: f64,
    variance: f64,
}

impl Adwin {
    pub fn new(delta: f64) -> Self {
        assert!(delta > 0.0 && delta < 1.0, "confidence must lie in (0, 1)");
        Adwin {
            delta,
            max_buckets: 5,
            min_side: 5,
            rows: Vec::new(),
            width: 0,
            total: 0.0,
            variance: 0.0,
        }
    }

    pub fn width(&self) -> u64 {
        self.width
    }

    pub fn mean(&self) -> f64 {
        if self.width == 0 {
            0.0
        } else {
            self.total / self.width as f64
        }
    }

    /// Adds one value; returns how many of the oldest values were dropped.
    pub fn insert(&mut self, value: f64) -> u64 {
        if self.width > 0 {
            let n = self.width as f64;
            let delta = value - self.total / n;
            self.variance += n * delta * delta / (n + 1.0);
        }
        self.width += 1;
        self.total += value;
        if self.rows.is_empty() {
            self.rows.push(VecDeque::new());
        }
        self.rows[0].push_back(Bucket {
            total: value,
            variance: 0.0,
            len: 1,
        });
        self.compress();
        self.shrink()
    }

    fn compress(&mut self) {
        let mut row = 0;
        while row < self.rows.len() && self.rows[row].len() > self.max_buckets {
            let a = self.rows[row].pop_front().expect("row over capacity");
            let b = self.rows[row].pop_front().expect("row over capacity");
            let (na, nb) = (a.len as f64, b.len as f64);
            let diff = a.total / na - b.total / nb;
            let merged = Bucket {
                total: a.total + b.total,
                variance: a.variance + b.variance + na * nb * diff * diff / (na + nb),
                len: a.len + b.len,
            };
            if self.rows.len() == row + 1 {
                self.rows.push(VecDeque::new());
            }
            self.rows[row + 1].push_back(merged);
            row += 1;
        }
    }

    fn shrink(&mut self) -> u64 {
        let mut dropped = 0;
        while self.has_cut() {
            dropped += self.drop_oldest();
        }
        dropped
    }

    fn buckets_oldest_first(&self) -> impl Iterator<Item = &Bucket> {
        self.rows.iter().rev().flat_map(|r| r.iter())
    }

    fn has_cut(&self) -> bool {
        if self.width < 2 * self.min_side {
            return false;
        }
        let n = self.width as f64;
        let v = self.variance / n;
        let dd = (2.0 * n.ln() / self.delta).ln();
        let (mut n0, mut t0) = (0u64, 0.0);
        for bucket in self.buckets_oldest_first() {
            n0 += bucket.len;
            t0 += bucket.total;
            let n1 = self.width - n0;
            if n1 < self.min_side {
                break;
            }
            if n0 < self.min_side {
                continue;
            }
            let t1 = self.total - t0;
            let gap = (t0 / n0 as f64 - t1 / n1 as f64).abs();
            let m = 1.0 / (n0 - self.min_side + 1) as f64 + 1.0 / (n1 - self.min_side + 1) as f64;
            let eps = (2.0 * m * v * dd).sqrt() + 2.0 / 3.0 * dd * m;
            if gap > eps {
                return true;
            }
        }
        false
    }

    fn drop_oldest(&mut self) -> u64 {
        let top = self.rows.len() - 1;
        let b = self.rows[top].pop_front().expect("non-empty window");
        if self.rows[top].is_empty() {
            self.rows.pop();
        }
        let n = self.width as f64;
        let nb = b.len as f64;
        self.width -= b.len;
        self.total -= b.total;
        if self.width == 0 {
            self.total = 0.0;
            self.variance = 0.0;
        } else {
            let rest = self.width as f64;
            let diff = b.total / nb - self.total / rest;
            self.variance -= b.variance + nb * rest * diff * diff / n;
            self.variance = self.variance.max(0.0);
        }
        b.len
    }
}

/// Recent delays of one stream, kept as a contiguous suffix of all
/// observations.
#[derive(Debug, Clone)]
pub struct AdaptiveHistory {
    granularity: Millis,
    detector: Adwin,
    /// (delay, raw local time at arrival)
    samples: VecDeque<(Millis, Timestamp)>,
    counts: Vec<u64>,
    /// Absolute index of `samples[0]`.
    first: u64,
    /// Candidates for the window maximum: (absolute index, delay).
    maxima: VecDeque<(u64, Millis)>,
}

impl AdaptiveHistory {
    pub fn new(granularity: Millis, delta: f64) -> Self {
        assert!(granularity > 0, "granularity must be positive");
        AdaptiveHistory {
            granularity,
            detector: Adwin::new(delta),
            samples: VecDeque::new(),
            counts: Vec::new(),
            first: 0,
            maxima: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Absolute index of the oldest retained observation.
    pub fn first_index(&self) -> u64 {
        self.first
    }

    /// Absolute index the next observation will get.
    pub fn next_index(&self) -> u64 {
        self.first + self.samples.len() as u64
    }

    pub fn record_delay(&mut self, delay: Millis, arrived_at: Timestamp) {
        assert!(delay >= 0, "delays are non-negative");
        let index = self.next_index();
        let bin = coarse_delay(delay, self.granularity);
        if self.counts.len() <= bin {
            self.counts.resize(bin + 1, 0);
        }
        self.counts[bin] += 1;
        self.samples.push_back((delay, arrived_at));
        while self.maxima.back().is_some_and(|&(_, d)| d <= delay) {
            self.maxima.pop_back();
        }
        self.maxima.push_back((index, delay));
        let dropped = self.detector.insert(delay as f64);
        for _ in 0..dropped {
            let (old, _) = self.samples.pop_front().expect("detector tracks samples");
            self.counts[coarse_delay(old, self.granularity)] -= 1;
            self.first += 1;
        }
        while self.maxima.front().is_some_and(|&(i, _)| i < self.first) {
            self.maxima.pop_front();
        }
    }

    /// Normalized histogram of the current window; `None` when empty.
    pub fn snapshot_pdf(&self) -> Option<DelayHistogram> {
        DelayHistogram::from_counts(self.granularity, &self.counts)
    }

    pub fn max_observed_delay(&self) -> Millis {
        self.maxima.front().map_or(0, |&(_, d)| d)
    }

    /// Tuples per second over the window's span of arrival (local) times.
    pub fn arrival_rate(&self) -> Option<f64> {
        let (first, last) = (self.samples.front()?.1, self.samples.back()?.1);
        let span = last - first;
        if self.samples.len() < 2 || span <= 0 {
            return None;
        }
        Some((self.samples.len() - 1) as f64 * 1000.0 / span as f64)
    }
}

/// Converts per-stream average leads into synchronizer slack estimates:
/// each average minus the smallest one. Any missing average yields zeros.
pub fn estimate_ksync(averages: &[Option<f64>]) -> Vec<f64> {
    let Some(values) = averages.iter().copied().collect::<Option<Vec<f64>>>() else {
        return vec![0.0; averages.len()];
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    values.iter().map(|v| v - min).collect()
}

/// Per-stream statistics handed to the buffer manager.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamStats {
    pub pdf: Option<DelayHistogram>,
    pub rate: Option<f64>,
    pub max_delay: Millis,
    pub k_sync: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsSnapshot {
    pub granularity: Millis,
    pub streams: Vec<StreamStats>,
}

impl StatsSnapshot {
    /// Largest windowed delay over all streams.
    pub fn max_delay(&self) -> Millis {
        self.streams.iter().map(|s| s.max_delay).max().unwrap_or(0)
    }

    /// True when every stream has a pdf and a rate.
    pub fn complete(&self) -> bool {
        self.streams.iter().all(|s| s.pdf.is_some() && s.rate.is_some())
    }
}

/// Leads over the slowest stream measured at arrivals, tagged with the
/// measured stream's latest history index so they age out with it.
#[derive(Debug, Clone, Default)]
struct LeadSeries {
    samples: VecDeque<(u64, Millis)>,
    sum: i128,
}

/// The statistics stage: observes raw (pre-K-slack) arrivals of all streams.
#[derive(Debug, Clone)]
pub struct StatisticsManager {
    granularity: Millis,
    clocks: Vec<StreamClock>,
    started: Vec<bool>,
    histories: Vec<AdaptiveHistory>,
    leads: Vec<LeadSeries>,
}

impl StatisticsManager {
    pub fn new(streams: usize, granularity: Millis, delta: f64) -> Self {
        StatisticsManager {
            granularity,
            clocks: vec![StreamClock::new(); streams],
            started: vec![false; streams],
            histories: (0..streams).map(|_| AdaptiveHistory::new(granularity, delta)).collect(),
            leads: vec![LeadSeries::default(); streams],
        }
    }

    pub fn history(&self, stream: usize) -> &AdaptiveHistory {
        &self.histories[stream]
    }

    /// Raw local time of a stream.
    pub fn local_time(&self, stream: usize) -> Timestamp {
        self.clocks[stream].local_time()
    }

    /// Records a raw arrival and returns its delay.
    pub fn observe(&mut self, stream: usize, ts: Timestamp) -> Millis {
        let delay = self.clocks[stream].advance(ts);
        self.started[stream] = true;
        let now = self.clocks[stream].local_time();
        self.histories[stream].record_delay(delay, now);
        for (series, h) in self.leads.iter_mut().zip(&self.histories) {
            while series.samples.front().is_some_and(|&(i, _)| i < h.first_index()) {
                let (_, v) = series.samples.pop_front().expect("checked non-empty");
                series.sum -= v as i128;
            }
        }
        if self.started.iter().all(|&s| s) {
            let min = self
                .clocks
                .iter()
                .map(StreamClock::local_time)
                .min()
                .expect("streams exist");
            for (j, series) in self.leads.iter_mut().enumerate() {
                let lead = self.clocks[j].local_time() - min;
                series.samples.push_back((self.histories[j].next_index() - 1, lead));
                series.sum += lead as i128;
            }
        }
        delay
    }

    /// Average lead of each stream over its history window.
    pub fn average_leads(&self) -> Vec<Option<f64>> {
        self.leads
            .iter()
            .map(|s| (!s.samples.is_empty()).then(|| s.sum as f64 / s.samples.len() as f64))
            .collect()
    }

    pub fn estimate_ksync(&self) -> Vec<f64> {
        estimate_ksync(&self.average_leads())
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        let k_sync = self.estimate_ksync();
        StatsSnapshot {
            granularity: self.granularity,
            streams: self
                .histories
                .iter()
                .zip(k_sync)
                .map(|(h, k_sync)| StreamStats {
                    pdf: h.snapshot_pdf(),
                    rate: h.arrival_rate(),
                    max_delay: h.max_observed_delay(),
                    k_sync,
                })
                .collect(),
        }
    }
}
