//! Synthetic out-of-order streams.
//!
//! Each stream advances its local time by `1000 / rate` ms per tuple, draws a
//! delay from a Zipf distribution over `{0, step, 2*step, …, max_delay}`
//! (ascending rank, so higher skew means more in-order tuples) and stamps the
//! tuple `local_time - delay`. Integer attributes are Zipf-distributed over
//! `[1, domain]`; their skew can drift, changing at random intervals to a
//! random value. Streams are interleaved by generation time, ties broken by
//! stream index.
//!
//! Spec files are flat `key=value` text:
//!
//! ```text
//! preset=desk3          # optional base: syn3, syn4, desk3, desk4
//! streams=3
//! rate=100              # tuples per second, all streams
//! duration_ms=180000
//! max_delay_ms=2000
//! delay_step_ms=10
//! delay_skews=2,3,3     # one value for all streams or one per stream; inf allowed
//! leads_ms=0,0,0        # timestamp head start per stream
//! attrs=a1              # one group for all streams, or groups separated by ';'
//! attr_domain=100
//! attr_skew=1.0
//! drift=on
//! drift_skew_max=5
//! drift_interval_ms=60000..600000
//! hot_delayed=0         # probability that a delayed tuple takes the hottest value
//! seed=1
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};
use crate::kv;
use crate::stream::{Millis, Timestamp, Tuple, Value};

/// Draws a rank in `[1, n]` with probability proportional to `rank^-s`.
/// An infinite skew always yields 1.
pub fn zipf_sample<R: Rng + ?Sized>(n: u64, s: f64, rng: &mut R) -> u64 {
    assert!(n >= 1 && s >= 0.0, "need n >= 1 and s >= 0");
    if n == 1 || s.is_infinite() {
        return 1;
    }
    let zipf = Zipf::new(n as f64, s).expect("validated parameters");
    zipf.sample(rng) as u64
}

/// Cached Zipf sampler for a fixed domain and a changing skew.
#[derive(Debug, Clone)]
struct ZipfSampler {
    n: u64,
    s: f64,
    dist: Option<Zipf<f64>>,
}

impl ZipfSampler {
    fn new(n: u64, s: f64) -> Self {
        let mut z = ZipfSampler {
            n,
            s: f64::NAN,
            dist: None,
        };
        z.set_skew(s);
        z
    }

    fn set_skew(&mut self, s: f64) {
        self.s = s;
        self.dist = (self.n > 1 && s.is_finite()).then(|| Zipf::new(self.n as f64, s).expect("validated parameters"));
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.dist.as_ref().map_or(1, |d| d.sample(rng) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    pub skew_max: f64,
    pub min_interval: Millis,
    pub max_interval: Millis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttrGenSpec {
    pub name: String,
    pub domain: u64,
    pub skew: f64,
    pub drift: Option<Drift>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamGenSpec {
    pub rate: f64,
    pub duration: Millis,
    pub max_delay: Millis,
    pub delay_step: Millis,
    pub delay_skew: f64,
    /// Head start of this stream's timestamps.
    pub lead: Millis,
    pub attrs: Vec<AttrGenSpec>,
    /// Probability that a delayed tuple takes value 1 on every attribute.
    pub hot_delayed: f64,
}

impl StreamGenSpec {
    fn validate(&self) -> Result<()> {
        let ok = self.rate > 0.0
            && self.duration >= 0
            && self.max_delay >= 0
            && self.delay_step > 0
            && self.delay_skew >= 0.0
            && self.lead >= 0
            && (0.0..=1.0).contains(&self.hot_delayed)
            && self.attrs.iter().all(|a| {
                a.domain >= 1
                    && a.skew >= 0.0
                    && a.drift
                        .is_none_or(|d| d.skew_max >= 0.0 && d.min_interval > 0 && d.max_interval >= d.min_interval)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::config("generator parameters out of range"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub streams: Vec<StreamGenSpec>,
    pub seed: u64,
}

fn attr(name: &str, drift: bool) -> AttrGenSpec {
    AttrGenSpec {
        name: name.to_string(),
        domain: 100,
        skew: 1.0,
        drift: drift.then_some(Drift {
            skew_max: 5.0,
            min_interval: 60_000,
            max_interval: 600_000,
        }),
    }
}

fn preset(skews: &[f64], duration: Millis, max_delay: Millis, schemas: &[&[&str]]) -> Vec<StreamGenSpec> {
    skews
        .iter()
        .zip(schemas)
        .map(|(&delay_skew, names)| StreamGenSpec {
            rate: 100.0,
            duration,
            max_delay,
            delay_step: 10,
            delay_skew,
            lead: 0,
            attrs: names.iter().map(|n| attr(n, true)).collect(),
            hot_delayed: 0.0,
        })
        .collect()
}

impl GenSpec {
    /// Three streams with one join attribute, 30 minutes, delays up to 20 s.
    pub fn syn3(seed: u64) -> Self {
        GenSpec {
            streams: preset(&[2.0, 3.0, 3.0], 1_800_000, 20_000, &[&["a1"], &["a1"], &["a1"]]),
            seed,
        }
    }

    /// Four streams in a star schema around stream 1.
    pub fn syn4(seed: u64) -> Self {
        GenSpec {
            streams: preset(
                &[3.0, 3.0, 3.0, 4.0],
                1_800_000,
                20_000,
                &[&["a1", "a2", "a3"], &["a1"], &["a2"], &["a3"]],
            ),
            seed,
        }
    }

    /// `syn3` shrunk to 3 minutes and 2 s maximum delay.
    pub fn desk3(seed: u64) -> Self {
        GenSpec {
            streams: preset(&[2.0, 3.0, 3.0], 180_000, 2_000, &[&["a1"], &["a1"], &["a1"]]),
            seed,
        }
    }

    /// `syn4` shrunk to 3 minutes and 2 s maximum delay.
    pub fn desk4(seed: u64) -> Self {
        GenSpec {
            streams: preset(
                &[3.0, 3.0, 3.0, 4.0],
                180_000,
                2_000,
                &[&["a1", "a2", "a3"], &["a1"], &["a2"], &["a3"]],
            ),
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "syn3" => Ok(Self::syn3(seed)),
            "syn4" => Ok(Self::syn4(seed)),
            "desk3" => Ok(Self::desk3(seed)),
            "desk4" => Ok(Self::desk4(seed)),
            other => Err(Error::config(format!("unknown generator preset {other:?}"))),
        }
    }

    /// Parses a spec file (see the module docs).
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = kv::parse(text)?;
        let mut spec = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, name)) => Self::preset(name, 0)?,
            None => Self::desk3(0),
        };
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "streams") {
            let m: usize = kv::number("streams", v)?;
            if m < 2 {
                return Err(Error::config("streams must be at least 2"));
            }
            let template = spec.streams[0].clone();
            spec.streams.resize(m, template);
        }
        for (key, value) in &pairs {
            spec.apply(key, value)?;
        }
        for s in &spec.streams {
            s.validate()?;
        }
        Ok(spec)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let m = self.streams.len();
        match key {
            "preset" | "streams" => {}
            "seed" => self.seed = kv::number(key, value)?,
            "rate" => self.set_all(key, value, |s, v| s.rate = v)?,
            "duration_ms" => self.set_all(key, value, |s, v| s.duration = v)?,
            "max_delay_ms" => self.set_all(key, value, |s, v| s.max_delay = v)?,
            "delay_step_ms" => self.set_all(key, value, |s, v| s.delay_step = v)?,
            "hot_delayed" => self.set_all(key, value, |s, v| s.hot_delayed = v)?,
            "delay_skews" => {
                let skews: Vec<f64> = per_stream(key, value, m)?;
                for (s, z) in self.streams.iter_mut().zip(skews) {
                    s.delay_skew = z;
                }
            }
            "leads_ms" => {
                let leads: Vec<Millis> = per_stream(key, value, m)?;
                for (s, l) in self.streams.iter_mut().zip(leads) {
                    s.lead = l;
                }
            }
            "attrs" => {
                let groups: Vec<&str> = value.split(';').map(str::trim).collect();
                if groups.len() != 1 && groups.len() != m {
                    return Err(Error::config("attrs: give one group or one per stream"));
                }
                for (i, s) in self.streams.iter_mut().enumerate() {
                    let group = groups[if groups.len() == 1 { 0 } else { i }];
                    let template = s.attrs.first().cloned().unwrap_or_else(|| attr("a1", true));
                    s.attrs = group
                        .split(',')
                        .map(str::trim)
                        .filter(|n| !n.is_empty())
                        .map(|n| AttrGenSpec {
                            name: n.to_string(),
                            ..template.clone()
                        })
                        .collect();
                }
            }
            "attr_domain" => {
                let v = kv::number(key, value)?;
                self.each_attr(|a| {
                    a.domain = v;
                    Ok(())
                })?
            }
            "attr_skew" => {
                let v = kv::number(key, value)?;
                self.each_attr(|a| {
                    a.skew = v;
                    Ok(())
                })?
            }
            "drift" => {
                let on = kv::boolean(key, value)?;
                self.each_attr(|a| {
                    a.drift = match (on, a.drift) {
                        (false, _) => None,
                        (true, Some(d)) => Some(d),
                        (true, None) => attr("", true).drift,
                    };
                    Ok(())
                })?
            }
            "drift_skew_max" => self.each_attr(|a| {
                if let Some(d) = &mut a.drift {
                    d.skew_max = kv::number(key, value)?;
                }
                Ok(())
            })?,
            "drift_interval_ms" => {
                let (lo, hi) = value
                    .split_once("..")
                    .ok_or_else(|| Error::config("drift_interval_ms: expected LO..HI"))?;
                let (lo, hi): (Millis, Millis) = (kv::number(key, lo.trim())?, kv::number(key, hi.trim())?);
                self.each_attr(|a| {
                    if let Some(d) = &mut a.drift {
                        d.min_interval = lo;
                        d.max_interval = hi;
                    }
                    Ok(())
                })?
            }
            other => return Err(Error::config(format!("unknown generator key {other:?}"))),
        }
        Ok(())
    }

    fn set_all<T: std::str::FromStr + Copy>(
        &mut self,
        key: &str,
        value: &str,
        f: impl Fn(&mut StreamGenSpec, T),
    ) -> Result<()> {
        let v: T = kv::number(key, value)?;
        self.streams.iter_mut().for_each(|s| f(s, v));
        Ok(())
    }

    fn each_attr(&mut self, mut f: impl FnMut(&mut AttrGenSpec) -> Result<()>) -> Result<()> {
        self.streams
            .iter_mut()
            .flat_map(|s| s.attrs.iter_mut())
            .try_for_each(&mut f)
    }

    /// Generates and interleaves all streams.
    pub fn generate(&self) -> Result<Vec<Tuple>> {
        for s in &self.streams {
            s.validate()?;
        }
        let fragments = self
            .streams
            .iter()
            .enumerate()
            .map(|(i, s)| generate_stream(s, i, self.seed))
            .collect();
        Ok(interleave(fragments))
    }
}

fn per_stream<T: std::str::FromStr + Clone>(key: &str, value: &str, m: usize) -> Result<Vec<T>> {
    let values: Vec<T> = kv::list(key, value)?;
    match values.len() {
        1 => Ok(vec![values[0].clone(); m]),
        n if n == m => Ok(values),
        n => Err(Error::config(format!("{key}: expected 1 or {m} values, got {n}"))),
    }
}

/// A generated tuple with its generation time (ms since the run started).
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub at: f64,
    pub tuple: Tuple,
}

fn rng_for(seed: u64, stream: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64 * 4 + purpose);
    rng
}

/// Generates one stream in arrival order.
pub fn generate_stream(spec: &StreamGenSpec, stream: usize, seed: u64) -> Vec<Generated> {
    let mut delays_rng = rng_for(seed, stream, 0);
    let mut attr_rng = rng_for(seed, stream, 1);
    let mut drift_rng = rng_for(seed, stream, 2);
    let step = 1000.0 / spec.rate;
    let count = (spec.duration as f64 * spec.rate / 1000.0).floor() as u64;
    let delay_values = (spec.max_delay / spec.delay_step) as u64 + 1;
    let delays = ZipfSampler::new(delay_values, spec.delay_skew);
    let start = 1 + spec.lead;
    let mut samplers: Vec<ZipfSampler> = spec.attrs.iter().map(|a| ZipfSampler::new(a.domain, a.skew)).collect();
    let mut next_change: Vec<Option<f64>> = spec
        .attrs
        .iter()
        .map(|a| {
            a.drift
                .map(|d| drift_rng.random_range(d.min_interval..=d.max_interval) as f64)
        })
        .collect();
    let names: Vec<std::sync::Arc<str>> = spec
        .attrs
        .iter()
        .map(|a| std::sync::Arc::from(a.name.as_str()))
        .collect();
    let mut out = Vec::with_capacity(count as usize);
    for n in 0..count {
        let at = n as f64 * step;
        let local = start + at.round() as i64;
        let delay = ((delays.sample(&mut delays_rng) - 1) as i64 * spec.delay_step).min(local - 1);
        for (a, (sampler, change)) in spec.attrs.iter().zip(samplers.iter_mut().zip(next_change.iter_mut())) {
            while let (Some(t), Some(d)) = (*change, a.drift) {
                if at < t {
                    break;
                }
                sampler.set_skew(drift_rng.random_range(0.0..=d.skew_max));
                *change = Some(t + drift_rng.random_range(d.min_interval..=d.max_interval) as f64);
            }
        }
        let hot = delay > 0 && spec.hot_delayed > 0.0 && attr_rng.random_bool(spec.hot_delayed);
        let attrs = names
            .iter()
            .zip(&samplers)
            .map(|(name, sampler)| {
                let v = sampler.sample(&mut attr_rng);
                (name.clone(), Value::Int(if hot { 1 } else { v as i64 }))
            })
            .collect();
        out.push(Generated {
            at,
            tuple: Tuple::new(stream, n + 1, Timestamp(local - delay), attrs),
        });
    }
    out
}

/// Merges per-stream fragments by generation time, ties by stream index.
pub fn interleave(fragments: Vec<Vec<Generated>>) -> Vec<Tuple> {
    let mut all: Vec<(f64, usize, u64, Tuple)> = fragments
        .into_iter()
        .enumerate()
        .flat_map(|(i, f)| f.into_iter().map(move |g| (g.at, i, g.tuple.seq, g.tuple)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    all.into_iter().map(|(_, _, _, t)| t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::write_trace;

    fn spec_with(text: &str) -> GenSpec {
        GenSpec::parse(text).unwrap()
    }

    #[test]
    fn infinite_skew_means_no_delay() {
        let spec = spec_with("streams=2\nduration_ms=1000\ndelay_skews=inf\nattrs=\n");
        let trace = spec.generate().unwrap();
        let s0: Vec<i64> = trace.iter().filter(|t| t.stream == 0).map(|t| t.ts.0).collect();
        assert_eq!(s0, (0..100).map(|n| 1 + 10 * n).collect::<Vec<_>>());
    }

    #[test]
    fn one_minute_at_100_per_second() {
        let spec = spec_with("streams=2\nduration_ms=60000\n");
        let t = generate_stream(&spec.streams[0], 0, 1);
        assert_eq!(t.len(), 6000);
        assert!(t.iter().all(|g| g.tuple.ts.0 >= 1));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = spec_with("streams=3\nduration_ms=5000\nseed=9\n");
        let bytes = |s: &GenSpec| {
            let mut buf = Vec::new();
            write_trace(&mut buf, &s.generate().unwrap()).unwrap();
            buf
        };
        assert_eq!(bytes(&spec), bytes(&spec));
        let other = GenSpec {
            seed: 10,
            ..spec.clone()
        };
        assert_ne!(bytes(&spec), bytes(&other));
    }

    #[test]
    fn delays_stay_within_bounds() {
        let spec = spec_with("streams=2\nduration_ms=20000\ndelay_skews=0.5\nmax_delay_ms=300\n");
        let trace = spec.generate().unwrap();
        for s in 0..2 {
            let mut local = 0;
            for t in trace.iter().filter(|t| t.stream == s) {
                local = local.max(t.ts.0);
                assert!(local - t.ts.0 <= 300 + 10);
            }
        }
    }

    #[test]
    fn interleaving_patterns() {
        let spec = spec_with("streams=2\nduration_ms=200\n");
        let one = generate_stream(&spec.streams[0], 0, 1);
        assert_eq!(
            interleave(vec![one.clone()]),
            one.iter().map(|g| g.tuple.clone()).collect::<Vec<_>>()
        );
        let trace = spec.generate().unwrap();
        let order: Vec<usize> = trace.iter().map(|t| t.stream).collect();
        assert_eq!(order, [0, 1].repeat(20));
        let mut slow = spec.streams[1].clone();
        slow.rate = 50.0;
        let mixed = interleave(vec![one, generate_stream(&slow, 1, 1)]);
        assert_eq!(mixed.iter().filter(|t| t.stream == 0).count(), 20);
        assert_eq!(mixed.iter().filter(|t| t.stream == 1).count(), 10);
        assert_eq!(
            mixed.iter().take(6).map(|t| t.stream).collect::<Vec<_>>(),
            [0, 1, 0, 0, 1, 0]
        );
    }

    #[test]
    fn zipf_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..100).all(|_| zipf_sample(1, 2.0, &mut rng) == 1));
        assert!((0..100).all(|_| zipf_sample(50, f64::INFINITY, &mut rng) == 1));
        assert!((0..1000).all(|_| (1..=4).contains(&zipf_sample(4, 0.0, &mut rng))));
    }

    #[test]
    fn leads_shift_timestamps() {
        let spec = spec_with("streams=2\nduration_ms=100\ndelay_skews=inf\nleads_ms=300,0\n");
        let trace = spec.generate().unwrap();
        assert_eq!(trace[0].ts.0 - trace[1].ts.0, 300);
    }

    #[test]
    fn hot_delayed_tuples_take_value_one() {
        let spec = spec_with("streams=2\nduration_ms=20000\ndelay_skews=1\nhot_delayed=1\nattr_skew=0\ndrift=off\n");
        let t = generate_stream(&spec.streams[0], 0, 4);
        let mut local = 0;
        for g in &t {
            let delayed = g.tuple.ts.0 < local;
            local = local.max(g.tuple.ts.0);
            if delayed {
                assert_eq!(g.tuple.attr("a1"), Some(Value::Int(1)));
            }
        }
    }

    #[test]
    fn spec_parsing() {
        let s = spec_with("preset=desk4\nattrs=a1,a2,a3;a1;a2;a3\nseed=5\n");
        assert_eq!(s.streams.len(), 4);
        assert_eq!(s.streams[0].attrs.len(), 3);
        assert_eq!(s.streams[3].attrs[0].name, "a3");
        assert_eq!(s.streams[3].delay_skew, 4.0);
        assert_eq!(s.seed, 5);
        assert_eq!(GenSpec::desk4(5), s);
        assert!(GenSpec::parse("bogus=1").is_err());
        assert!(GenSpec::parse("streams=3\ndelay_skews=1,2").is_err());
        assert!(GenSpec::parse("rate=-1").is_err());
        assert!(GenSpec::parse("preset=nope").is_err());
    }
}
