#![allow(dead_code)]

use mswj::predicate::{AttrRef, JoinPredicate};
use mswj::stream::{Millis, StreamClock, Tuple, Value};
use rand::Rng;

/// Arrival-ordered trace over `m` streams with bounded intra-stream disorder.
/// Every tuple carries an integer `a` in `1..=4` and a real `x` in `[0, 10)`.
pub fn random_trace<R: Rng>(rng: &mut R, m: usize, n: usize, max_delay: Millis) -> Vec<Tuple> {
    let mut base = vec![1i64; m];
    let mut seq = vec![0u64; m];
    (0..n)
        .map(|_| {
            let s = rng.random_range(0..m);
            base[s] += rng.random_range(0..4);
            let delay = if rng.random_bool(0.3) {
                rng.random_range(0..=max_delay)
            } else {
                0
            };
            seq[s] += 1;
            Tuple::bare(s, seq[s], (base[s] - delay).max(1))
                .with_attr("a", Value::Int(rng.random_range(1..=4)))
                .with_attr("x", Value::Real(rng.random_range(0.0..10.0)))
        })
        .collect()
}

pub fn random_predicate<R: Rng>(rng: &mut R, m: usize) -> JoinPredicate {
    let a = |s| AttrRef::new(s, "a");
    match rng.random_range(0..5) {
        0 => JoinPredicate::Cross,
        1 => JoinPredicate::Equi((1..m).map(|j| (a(j - 1), a(j))).collect()),
        2 => JoinPredicate::Equi((1..m).map(|j| (a(0), a(j))).collect()),
        3 => {
            let theta = rng.random_range(1.0..6.0);
            JoinPredicate::parse(&format!("band(1.x-2.x<{theta})")).unwrap()
        }
        _ => JoinPredicate::distance_below(a(0), AttrRef::new(0, "x"), a(1), AttrRef::new(1, "x"), 4.0),
    }
}

/// Largest raw delay per stream.
pub fn max_delay(trace: &[Tuple], m: usize) -> Millis {
    let mut clocks = vec![StreamClock::new(); m];
    trace.iter().map(|t| clocks[t.stream].advance(t.ts)).max().unwrap_or(0)
}

/// One stream for the direct recall formula: rate in tuples/s, window and
/// slack in ms, bin masses at granularity `g`.
#[derive(Debug, Clone)]
pub struct DirectStream {
    pub rate: f64,
    pub window: Millis,
    pub mass: Vec<f64>,
    pub k_sync: f64,
}

fn cdf(mass: &[f64], d: usize) -> f64 {
    let total: f64 = mass.iter().sum();
    mass.iter().take(d + 1).sum::<f64>() / total
}

/// Recall computed term by term, without any of the library's shortcuts.
pub fn direct_recall(streams: &[DirectStream], g: Millis, b: Millis, k: Millis, ratio: f64) -> f64 {
    let per_ms = |r: f64| r / 1000.0;
    let shifted = |s: &DirectStream| ((k as f64 + s.k_sync) / g as f64).floor().max(0.0) as usize;
    let window = |s: &DirectStream| {
        let n = ((s.window + b - 1) / b) as usize;
        let shift = shifted(s);
        (1..=n)
            .map(|l| {
                let extent = if l < n { b } else { s.window - (n as i64 - 1) * b };
                let reach = ((l as i64 - 1) * b / g) as usize;
                per_ms(s.rate) * extent as f64 * cdf(&s.mass, reach + shift)
            })
            .sum::<f64>()
    };
    let m = streams.len();
    let mut produced = 0.0;
    let mut truth = 0.0;
    for i in 0..m {
        let mut p = per_ms(streams[i].rate) * cdf(&streams[i].mass, shifted(&streams[i]));
        let mut t = per_ms(streams[i].rate);
        for (j, s) in streams.iter().enumerate() {
            if j != i {
                p *= window(s);
                t *= per_ms(s.rate) * s.window as f64;
            }
        }
        produced += p;
        truth += t;
    }
    if truth == 0.0 {
        1.0
    } else {
        (ratio * produced / truth).clamp(0.0, 1.0)
    }
}

pub fn model_inputs(streams: &[DirectStream], g: Millis, b: Millis) -> mswj::model::ModelInputs {
    use mswj::model::{ModelInputs, StreamModel};
    use mswj::stats::DelayHistogram;
    ModelInputs {
        streams: streams
            .iter()
            .map(|s| StreamModel {
                rate: s.rate,
                window: s.window,
                pdf: DelayHistogram::from_masses(g, s.mass.clone()),
                k_sync: s.k_sync,
            })
            .collect(),
        basic_window: b,
    }
}

/// Random model configuration; masses are positive in bin 0.
pub fn random_streams<R: Rng>(rng: &mut R, m: usize, bins: usize) -> Vec<DirectStream> {
    (0..m)
        .map(|_| {
            let n = rng.random_range(1..=bins);
            let mut mass: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            mass[0] += 0.05;
            DirectStream {
                rate: rng.random_range(1.0..500.0),
                window: rng.random_range(1..200) * 10,
                mass,
                k_sync: if rng.random_bool(0.5) {
                    0.0
                } else {
                    rng.random_range(0.0..100.0)
                },
            }
        })
        .collect()
}
