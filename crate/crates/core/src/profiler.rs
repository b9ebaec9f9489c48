//! Delay-conditioned productivity of join inputs.
//!
//! For every coarse delay bin the profiler accumulates how many cross-join
//! combinations (`M×`) and how many actual results (`M⋈`) tuples of that delay
//! derived during the current adaptation interval. Late tuples derive nothing
//! at the join, so they are credited with the largest per-tuple counts seen
//! on in-order tuples instead.

use std::collections::BTreeMap;

use crate::join::ProbeRecord;
use crate::stats::coarse_delay;
use crate::stream::Millis;

/// How the model treats the join selectivity under incomplete disorder
/// handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectivityStrategy {
    /// Assume it equals the disorder-free selectivity.
    EqSel,
    /// Learn it from the productivity maps.
    #[default]
    NonEqSel,
}

impl std::str::FromStr for SelectivityStrategy {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eqsel" => Ok(SelectivityStrategy::EqSel),
            "noneqsel" => Ok(SelectivityStrategy::NonEqSel),
            other => Err(crate::Error::config(format!("unknown strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for SelectivityStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectivityStrategy::EqSel => "eqsel",
            SelectivityStrategy::NonEqSel => "noneqsel",
        })
    }
}

/// Accumulated productivities of one adaptation interval.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProductivityMaps {
    pub m_cross: BTreeMap<usize, u64>,
    pub m_join: BTreeMap<usize, u64>,
    pub max_n_cross: u64,
    pub max_n_join: u64,
    /// Whether any in-order tuple was recorded (the maxima are meaningful).
    pub seen_in_order: bool,
}

impl ProductivityMaps {
    /// Largest delay bin present.
    pub fn max_delay_key(&self) -> Option<usize> {
        self.m_cross.keys().chain(self.m_join.keys()).copied().max()
    }

    /// Total join count; the estimate of the true result size over the interval.
    pub fn true_result_size_estimate(&self) -> u64 {
        self.m_join.values().sum()
    }

    fn totals(&self) -> (u128, u128) {
        (
            self.m_cross.values().map(|&v| v as u128).sum(),
            self.m_join.values().map(|&v| v as u128).sum(),
        )
    }

    fn totals_up_to(&self, bin: usize) -> (u128, u128) {
        (
            self.m_cross.range(..=bin).map(|(_, &v)| v as u128).sum(),
            self.m_join.range(..=bin).map(|(_, &v)| v as u128).sum(),
        )
    }

    /// Ratio of the selectivity seen by tuples with coarse delay up to `K`
    /// to the overall selectivity. When undefined, returns `(1, true)`.
    pub fn selectivity_ratio(&self, k: Millis, granularity: Millis) -> (f64, bool) {
        let bin = (k / granularity) as usize;
        let (cross_k, join_k) = self.totals_up_to(bin);
        let (cross, join) = self.totals();
        if cross_k == 0 || join == 0 {
            return (1.0, true);
        }
        let num = join_k * cross;
        let den = cross_k * join;
        if num == den {
            return (1.0, false);
        }
        (num as f64 / den as f64, false)
    }
}

#[derive(Debug, Clone)]
pub struct ProductivityProfiler {
    granularity: Millis,
    current: ProductivityMaps,
    /// Maxima of the previous interval, used before any in-order tuple.
    fallback: (u64, u64),
}

impl ProductivityProfiler {
    pub fn new(granularity: Millis) -> Self {
        assert!(granularity > 0, "granularity must be positive");
        ProductivityProfiler {
            granularity,
            current: ProductivityMaps::default(),
            fallback: (0, 0),
        }
    }

    pub fn maps(&self) -> &ProductivityMaps {
        &self.current
    }

    pub fn record(&mut self, rec: &ProbeRecord) {
        let d = coarse_delay(rec.delay, self.granularity);
        let maps = &mut self.current;
        let (n_cross, n_join) = if rec.in_order {
            maps.max_n_cross = maps.max_n_cross.max(rec.n_cross);
            maps.max_n_join = maps.max_n_join.max(rec.n_join);
            maps.seen_in_order = true;
            (rec.n_cross, rec.n_join)
        } else if maps.seen_in_order {
            (maps.max_n_cross, maps.max_n_join)
        } else {
            self.fallback
        };
        *maps.m_cross.entry(d).or_default() += n_cross;
        *maps.m_join.entry(d).or_default() += n_join;
    }

    /// Starts a new interval and returns the finished one.
    pub fn reset_interval(&mut self) -> ProductivityMaps {
        let done = std::mem::take(&mut self.current);
        if done.seen_in_order {
            self.fallback = (done.max_n_cross, done.max_n_join);
        }
        done
    }
}
