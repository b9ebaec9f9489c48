//! Periodic buffer-size adaptation.
//!
//! Every adaptation interval `L` the manager turns the user's requirement `Γ`
//! over the period `P` into a requirement `Γ′` for the next interval, taking
//! into account what the previous `P - L` already delivered, and then searches
//! `K = 0, g, 2g, …` for the smallest buffer size whose modeled recall meets
//! `Γ′`.

use std::collections::VecDeque;
use std::fmt;
use std::time::Instant;

use crate::model::{estimate_recall, ModelInputs};
use crate::profiler::{ProductivityMaps, SelectivityStrategy};
use crate::stats::StatsSnapshot;
use crate::stream::{Millis, Timestamp};

/// Produced and estimated-true result counts of the last `(P - L) / L`
/// intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultSizeMonitor {
    produced: VecDeque<u64>,
    truth: VecDeque<u64>,
    capacity: usize,
}

impl ResultSizeMonitor {
    pub fn new(period: Millis, interval: Millis) -> Self {
        assert!(
            interval > 0 && period >= interval && period % interval == 0,
            "period must be a multiple of the interval"
        );
        let capacity = ((period - interval) / interval) as usize;
        ResultSizeMonitor {
            produced: VecDeque::with_capacity(capacity),
            truth: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn record_interval(&mut self, produced: u64, true_estimate: u64) {
        if self.capacity == 0 {
            return;
        }
        if self.produced.len() == self.capacity {
            self.produced.pop_front();
            self.truth.pop_front();
        }
        self.produced.push_back(produced);
        self.truth.push_back(true_estimate);
    }

    pub fn produced_sum(&self) -> u64 {
        self.produced.iter().sum()
    }

    pub fn true_sum(&self) -> u64 {
        self.truth.iter().sum()
    }
}

/// The recall the next interval must reach so that the whole period meets
/// `gamma`, clamped to `[0, 1]`.
pub fn derive_instant_requirement(produced_past: u64, true_past: u64, true_next: u64, gamma: f64) -> f64 {
    if true_next == 0 {
        return gamma;
    }
    let needed = gamma * (true_past + true_next) as f64 - produced_past as f64;
    (needed / true_next as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecisionFlags {
    /// Statistics were incomplete; `K` fell back to 0.
    pub warmup: bool,
    /// No searched size met the target; `K` is the search bound.
    pub capped: bool,
    /// The selectivity ratio was undefined and replaced by 1.
    pub ratio_undefined: bool,
}

impl fmt::Display for DecisionFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [
            (self.warmup, "warmup"),
            (self.capped, "capped"),
            (self.ratio_undefined, "ratio_undefined"),
        ];
        let set: Vec<&str> = names.iter().filter(|(on, _)| *on).map(|(_, n)| *n).collect();
        f.write_str(&set.join("|"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationDecision {
    pub interval_end: Timestamp,
    pub k_star: Millis,
    pub gamma_target: f64,
    pub estimated_recall: f64,
    pub search_steps: u32,
    pub adapt_time_us: u64,
    pub flags: DecisionFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManagerConfig {
    pub gamma: f64,
    pub period: Millis,
    pub interval: Millis,
    pub basic_window: Millis,
    pub granularity: Millis,
    pub strategy: SelectivityStrategy,
    pub windows: Vec<Millis>,
}

#[derive(Debug, Clone)]
pub struct BufferSizeManager {
    config: ManagerConfig,
    monitor: ResultSizeMonitor,
}

/// Comparison slack for `γ ≥ Γ′`, absorbing rounding in the model sums.
const TOLERANCE: f64 = 1e-12;

impl BufferSizeManager {
    pub fn new(config: ManagerConfig) -> Self {
        let monitor = ResultSizeMonitor::new(config.period, config.interval);
        BufferSizeManager { config, monitor }
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.config
    }

    pub fn monitor(&self) -> &ResultSizeMonitor {
        &self.monitor
    }

    /// Closes an interval: records its produced count and profile, then picks
    /// the buffer size for the next one.
    pub fn tick(
        &mut self,
        now: Timestamp,
        produced: u64,
        maps: &ProductivityMaps,
        stats: &StatsSnapshot,
    ) -> AdaptationDecision {
        let started = Instant::now();
        let true_estimate = maps.true_result_size_estimate();
        self.monitor.record_interval(produced, true_estimate);
        let target = derive_instant_requirement(
            self.monitor.produced_sum(),
            self.monitor.true_sum(),
            true_estimate,
            self.config.gamma,
        );
        let mut decision = self.search(now, target, maps, stats);
        decision.adapt_time_us = started.elapsed().as_micros() as u64;
        decision
    }

    /// Modeled recall for buffer size `k`; `None` while statistics are
    /// incomplete.
    pub fn estimate(&self, k: Millis, maps: &ProductivityMaps, stats: &StatsSnapshot) -> Option<f64> {
        let inputs = ModelInputs::from_snapshot(stats, &self.config.windows, self.config.basic_window)?;
        let ratio = match self.config.strategy {
            SelectivityStrategy::EqSel => 1.0,
            SelectivityStrategy::NonEqSel => maps.selectivity_ratio(k, self.config.granularity).0,
        };
        Some(estimate_recall(&inputs, k, ratio))
    }

    /// Linear search for the smallest sufficient buffer size.
    pub fn search(
        &self,
        now: Timestamp,
        target: f64,
        maps: &ProductivityMaps,
        stats: &StatsSnapshot,
    ) -> AdaptationDecision {
        let g = self.config.granularity;
        let mut decision = AdaptationDecision {
            interval_end: now,
            k_star: 0,
            gamma_target: target,
            estimated_recall: 1.0,
            search_steps: 0,
            adapt_time_us: 0,
            flags: DecisionFlags::default(),
        };
        let Some(inputs) = ModelInputs::from_snapshot(stats, &self.config.windows, self.config.basic_window) else {
            decision.flags.warmup = true;
            return decision;
        };
        let bound = (stats.max_delay() + g - 1) / g * g;
        let mut k = 0;
        loop {
            let (ratio, undefined) = match self.config.strategy {
                SelectivityStrategy::EqSel => (1.0, false),
                SelectivityStrategy::NonEqSel => maps.selectivity_ratio(k, g),
            };
            let gamma = estimate_recall(&inputs, k, ratio);
            decision.search_steps += 1;
            decision.k_star = k;
            decision.estimated_recall = gamma;
            decision.flags.ratio_undefined = undefined;
            if gamma >= target - TOLERANCE {
                break;
            }
            if k >= bound {
                decision.flags.capped = true;
                break;
            }
            k += g;
        }
        decision
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{DelayHistogram, StreamStats};

    fn stats(mass: &[f64], max_delay: Millis) -> StatsSnapshot {
        let s = StreamStats {
            pdf: Some(DelayHistogram::from_masses(10, mass.to_vec())),
            rate: Some(100.0),
            max_delay,
            k_sync: 0.0,
        };
        StatsSnapshot {
            granularity: 10,
            streams: vec![s.clone(), s],
        }
    }

    fn manager(strategy: SelectivityStrategy) -> BufferSizeManager {
        BufferSizeManager::new(ManagerConfig {
            gamma: 0.9,
            period: 10_000,
            interval: 1000,
            basic_window: 10,
            granularity: 10,
            strategy,
            windows: vec![500, 500],
        })
    }

    #[test]
    fn instant_requirement_examples() {
        assert!((derive_instant_requirement(810, 900, 100, 0.9) - 0.9).abs() < 1e-12);
        assert_eq!(derive_instant_requirement(900, 900, 100, 0.9), 0.0);
        assert_eq!(derive_instant_requirement(700, 900, 100, 0.9), 1.0);
        assert_eq!(derive_instant_requirement(5, 9, 0, 0.95), 0.95);
    }

    #[test]
    fn monitor_keeps_the_last_intervals() {
        let mut m = ResultSizeMonitor::new(4000, 1000);
        assert_eq!((m.capacity(), m.produced_sum(), m.true_sum()), (3, 0, 0));
        for i in 1..=3 {
            m.record_interval(i, 10 * i);
        }
        assert_eq!((m.produced_sum(), m.true_sum()), (6, 60));
        m.record_interval(4, 40);
        assert_eq!((m.produced_sum(), m.true_sum()), (9, 90));
        let mut none = ResultSizeMonitor::new(1000, 1000);
        none.record_interval(5, 5);
        assert_eq!(none.true_sum(), 0);
    }

    #[test]
    fn zero_target_needs_no_buffer() {
        let m = manager(SelectivityStrategy::EqSel);
        let d = m.search(Timestamp(0), 0.0, &ProductivityMaps::default(), &stats(&[0.1, 0.9], 10));
        assert_eq!((d.k_star, d.search_steps), (0, 1));
    }

    #[test]
    fn disorder_free_history_needs_no_buffer() {
        let m = manager(SelectivityStrategy::EqSel);
        let d = m.search(Timestamp(0), 1.0, &ProductivityMaps::default(), &stats(&[1.0], 0));
        assert_eq!(d.k_star, 0);
        assert!(!d.flags.capped);
    }

    #[test]
    fn full_recall_absorbs_the_largest_delay() {
        let m = manager(SelectivityStrategy::NonEqSel);
        let maps = ProductivityMaps {
            m_cross: [(0, 100), (1, 50), (2, 50)].into(),
            m_join: [(0, 10), (1, 5), (2, 5)].into(),
            ..Default::default()
        };
        let d = m.search(Timestamp(0), 1.0, &maps, &stats(&[0.5, 0.3, 0.2], 20));
        assert_eq!(d.k_star, 20);
        assert_eq!(d.search_steps, 3);
        assert_eq!(d.flags, DecisionFlags::default());
    }

    #[test]
    fn missing_statistics_mean_warmup() {
        let m = manager(SelectivityStrategy::EqSel);
        let mut s = stats(&[1.0], 0);
        s.streams[1].pdf = None;
        let d = m.search(Timestamp(0), 0.9, &ProductivityMaps::default(), &s);
        assert_eq!(d.k_star, 0);
        assert_eq!(d.flags.to_string(), "warmup");
    }

    #[test]
    fn unreachable_target_caps_at_the_bound() {
        let m = manager(SelectivityStrategy::NonEqSel);
        // Late tuples are the productive ones; the ratio stays below 1 until
        // the bound, which is then reported as capped.
        let maps = ProductivityMaps {
            m_cross: [(0, 100), (3, 100)].into(),
            m_join: [(0, 1), (3, 99)].into(),
            ..Default::default()
        };
        let d = m.search(Timestamp(0), 1.0, &maps, &stats(&[0.5, 0.5], 5));
        assert_eq!(d.k_star, 10);
        assert!(d.flags.capped);
        assert_eq!(d.flags.to_string(), "capped");
    }

    #[test]
    fn tick_records_then_derives() {
        let mut m = manager(SelectivityStrategy::EqSel);
        let maps = ProductivityMaps {
            m_cross: [(0, 10)].into(),
            m_join: [(0, 10)].into(),
            ..Default::default()
        };
        let d = m.tick(Timestamp(1000), 10, &maps, &stats(&[1.0], 0));
        assert_eq!(m.monitor().produced_sum(), 10);
        assert!((d.gamma_target - 0.8).abs() < 1e-12);
    }
}
