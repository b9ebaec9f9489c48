//! Analytical recall model.
//!
//! Given per-stream delay pdfs, arrival rates and windows, the model predicts
//! which fraction of the true join results a uniform buffer size `K` lets the
//! join produce. A tuple whose delay is absorbed by its buffer (plus the slack
//! the synchronizer gives its stream) reaches the join in order and can
//! trigger a probe; the windows it probes are complete except for the most
//! recent basic windows, whose late tuples have not arrived yet.
//!
//! Rates are tuples per second; every time quantity is in milliseconds.

use crate::stats::{DelayHistogram, StatsSnapshot};
use crate::stream::{Millis, Timestamp};

/// Delay pdf seen at the join when a buffer of `k` (plus `k_sync`) applies.
pub fn shift_pdf(f: &DelayHistogram, k: Millis, k_sync: f64) -> DelayHistogram {
    let g = f.granularity();
    let shift = ((k as f64 + k_sync) / g as f64).floor().max(0.0) as usize;
    let mut mass = vec![f.cumulative(shift)];
    mass.extend((1..=f.max_bin().saturating_sub(shift)).map(|d| f.f(d + shift)));
    DelayHistogram::from_masses(g, mass)
}

fn rate_per_ms(rate: f64) -> f64 {
    rate / 1000.0
}

/// Number of basic windows covering a window.
pub fn basic_window_count(window: Millis, basic: Millis) -> usize {
    ((window + basic - 1) / basic) as usize
}

/// Expected number of tuples present in the `l`-th (1-based, newest first)
/// basic window of a stream.
pub fn basic_window_cardinality(f_k: &DelayHistogram, rate: f64, window: Millis, basic: Millis, l: usize) -> f64 {
    let n = basic_window_count(window, basic);
    assert!((1..=n).contains(&l), "basic window index out of range");
    let g = f_k.granularity();
    let reach = ((l as i64 - 1) * basic / g) as usize;
    let extent = if l < n { basic } else { window - (n as i64 - 1) * basic };
    rate_per_ms(rate) * extent as f64 * f_k.cumulative(reach)
}

/// Expected number of tuples present in the whole window.
pub fn window_cardinality(f_k: &DelayHistogram, rate: f64, window: Millis, basic: Millis) -> f64 {
    let n = basic_window_count(window, basic);
    let g = f_k.granularity();
    let step = (basic / g) as usize;
    let top = f_k.max_bin();
    let mut acc = 0.0;
    let mut cum = 0.0;
    let mut next_bin = 0;
    let mut complete = 0usize;
    for l in 1..n {
        let reach = (l - 1) * step;
        if reach >= top {
            complete = n - l;
            break;
        }
        while next_bin <= reach {
            cum += f_k.f(next_bin);
            next_bin += 1;
        }
        acc += cum;
    }
    acc += complete as f64;
    let last_extent = window - (n as i64 - 1) * basic;
    let last = f_k.cumulative((n - 1) * step);
    rate_per_ms(rate) * (basic as f64 * acc + last_extent as f64 * last)
}

/// Statistics of one stream as consumed by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamModel {
    pub rate: f64,
    pub window: Millis,
    pub pdf: DelayHistogram,
    pub k_sync: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    pub streams: Vec<StreamModel>,
    pub basic_window: Millis,
}

impl ModelInputs {
    /// Combines a statistics snapshot with the query windows; `None` while
    /// some stream still lacks a pdf or a rate.
    pub fn from_snapshot(snapshot: &StatsSnapshot, windows: &[Millis], basic_window: Millis) -> Option<Self> {
        let streams = snapshot
            .streams
            .iter()
            .zip(windows)
            .map(|(s, &window)| {
                Some(StreamModel {
                    rate: s.rate?,
                    window,
                    pdf: s.pdf.clone()?,
                    k_sync: s.k_sync,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(ModelInputs { streams, basic_window })
    }

    /// `(f_i^K(0), expected window cardinality)` per stream.
    fn shifted(&self, k: Millis) -> Vec<(f64, f64)> {
        self.streams
            .iter()
            .map(|s| {
                let f_k = shift_pdf(&s.pdf, k, s.k_sync);
                (f_k.f(0), window_cardinality(&f_k, s.rate, s.window, self.basic_window))
            })
            .collect()
    }

    /// Sum over triggers `i` of `r_i * weight_i * prod_{j != i} size_j`.
    fn trigger_sum(&self, terms: &[(f64, f64)]) -> f64 {
        (0..terms.len())
            .map(|i| {
                let others: f64 = (0..terms.len()).filter(|&j| j != i).map(|j| terms[j].1).product();
                rate_per_ms(self.streams[i].rate) * terms[i].0 * others
            })
            .sum()
    }

    fn complete_terms(&self) -> Vec<(f64, f64)> {
        self.streams
            .iter()
            .map(|s| (1.0, rate_per_ms(s.rate) * s.window as f64))
            .collect()
    }
}

/// Recall before clamping, scaled by the selectivity ratio.
pub fn estimate_recall_unclamped(inputs: &ModelInputs, k: Millis, ratio: f64) -> f64 {
    let produced = inputs.trigger_sum(&inputs.shifted(k));
    let truth = inputs.trigger_sum(&inputs.complete_terms());
    if truth == 0.0 {
        return 1.0;
    }
    ratio * produced / truth
}

/// Modeled recall over one adaptation interval for buffer size `k`.
pub fn estimate_recall(inputs: &ModelInputs, k: Millis, ratio: f64) -> f64 {
    estimate_recall_unclamped(inputs, k, ratio).clamp(0.0, 1.0)
}

/// Expected true result count over `interval` ms for absolute selectivity `sel`.
pub fn true_size(inputs: &ModelInputs, sel: f64, interval: Millis) -> f64 {
    sel * interval as f64 * inputs.trigger_sum(&inputs.complete_terms())
}

/// Expected produced result count over `interval` ms with buffer size `k`
/// and the selectivity observed under that buffer.
pub fn prod_size(inputs: &ModelInputs, sel_k: f64, k: Millis, interval: Millis) -> f64 {
    sel_k * interval as f64 * inputs.trigger_sum(&inputs.shifted(k))
}

/// The uniform buffer size equivalent to per-stream sizes `ks` when the
/// streams' local times are `ts`.
pub fn equivalent_k(ks: &[Millis], ts: &[Timestamp]) -> Millis {
    assert_eq!(ks.len(), ts.len(), "one buffer size per stream");
    let min_t = ts.iter().min().expect("at least one stream");
    let min_shifted = ts
        .iter()
        .zip(ks)
        .map(|(&t, &k)| t - k)
        .min()
        .expect("at least one stream");
    *min_t - min_shifted
}
