mod common;

use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mswj::datagen::GenSpec;
use mswj::engine::{self, Mode, RunOutput, Summary};
use mswj::harness::{self, Query, RunConfig, SweepParam, TraceSource, DECISIONS_HEADER, RECALL_HEADER};
use mswj::manager::AdaptationDecision;
use mswj::oracle::{compute_truth, recall_at, recall_by_identity};
use mswj::stream::{Tuple, WindowSpec};
use mswj::Timestamp;

fn desk3(seed: u64) -> Vec<Tuple> {
    GenSpec::desk3(seed).generate().unwrap()
}

fn config(mode: Mode) -> RunConfig {
    RunConfig {
        mode,
        ..RunConfig::default()
    }
}

/// Drops the wall-clock fields, which differ between identical runs.
fn timeless(out: &RunOutput) -> (Vec<AdaptationDecision>, Summary) {
    let decisions = out
        .decisions
        .iter()
        .map(|d| AdaptationDecision {
            adapt_time_us: 0,
            ..d.clone()
        })
        .collect();
    let summary = Summary {
        mean_adapt_us: None,
        max_adapt_us: None,
        ..out.summary.clone()
    };
    (decisions, summary)
}

#[test]
fn pipelined_run_matches_the_sequential_one() {
    let trace = desk3(3);
    let seq = config(Mode::Quality).engine_config().unwrap();
    let par = RunConfig {
        pipelined: true,
        ..config(Mode::Quality)
    }
    .engine_config()
    .unwrap();
    let a = engine::run(&trace, &seq).unwrap();
    let b = engine::run(&trace, &par).unwrap();
    assert_eq!(timeless(&a), timeless(&b));
    assert_eq!(a.measurements, b.measurements);
    assert_eq!(a.produced, b.produced);
}

#[test]
fn every_mode_accounts_for_every_tuple() {
    let trace = desk3(2);
    let truth = engine::truth_for(&trace, &config(Mode::Quality).engine_config().unwrap()).unwrap();
    for mode in [Mode::Quality, Mode::NoKSlack, Mode::MaxKSlack, Mode::Fixed(250)] {
        let out = engine::run_against(&trace, &config(mode).engine_config().unwrap(), &truth).unwrap();
        let s = &out.summary;
        assert!(s.conserved, "{mode}");
        assert_eq!(s.tuples, trace.len() as u64);
        assert_eq!(s.counters.received, trace.len() as u64);
        assert_eq!(s.produced_results, out.produced.total());
        assert!(s.produced_results <= s.true_results, "{mode}");
        assert_eq!(s.true_results, truth.total());
    }
}

#[test]
fn more_buffering_means_higher_recall() {
    for seed in 1..=5 {
        let trace = desk3(seed);
        let truth = engine::truth_for(&trace, &config(Mode::Quality).engine_config().unwrap()).unwrap();
        let mean = |mode| {
            let out = engine::run_against(&trace, &config(mode).engine_config().unwrap(), &truth).unwrap();
            (out.summary.mean_gamma.unwrap(), out.summary.average_k)
        };
        let (none, k_none) = mean(Mode::NoKSlack);
        let (quality, k_quality) = mean(Mode::Quality);
        let (max, k_max) = mean(Mode::MaxKSlack);
        assert!(
            none <= quality + 0.02 && quality <= max + 0.02,
            "seed {seed}: {none} {quality} {max}"
        );
        assert!(
            k_none <= k_quality && k_quality <= k_max,
            "seed {seed}: {k_none} {k_quality} {k_max}"
        );
    }
}

#[test]
fn a_buffer_covering_every_delay_is_exact() {
    let trace = desk3(4);
    let k = common::max_delay(&trace, 3);
    let out = engine::run(&trace, &config(Mode::Fixed(k)).engine_config().unwrap()).unwrap();
    assert!(out.measurements.iter().all(|m| m.gamma == 1.0));
    assert_eq!(out.summary.produced_results, out.summary.true_results);
    assert_eq!(out.summary.average_k, k as f64);
}

#[test]
fn recall_by_count_equals_recall_by_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let trace = common::random_trace(&mut rng, 3, 200, 12);
        let pred = common::random_predicate(&mut rng, 3);
        let spec = WindowSpec::uniform(3, 10).unwrap();
        let truth = compute_truth(&trace, &spec, &pred).unwrap();
        let produced = engine::run_static(&trace, &[3, 3, 3], &spec, &pred).unwrap();
        let counts = |r: &[mswj::join::ResultTuple]| mswj::oracle::ResultCounts::from_results(r);
        let (tc, pc) = (counts(&truth), counts(&produced));
        for t in (0..300).step_by(7) {
            let t = Timestamp(t);
            let by_count = recall_at(&tc, &pc, t, 40);
            let by_id = recall_by_identity(&truth, &produced, t, 40);
            assert!((by_count - by_id).abs() < 1e-12, "{by_count} vs {by_id} at {t}");
        }
    }
}

#[test]
fn a_one_value_sweep_is_a_run() {
    let base = RunConfig {
        source: Some(TraceSource::Gen(GenSpec::desk3(1))),
        ..RunConfig::default()
    };
    let direct = harness::run(&RunConfig {
        gamma: 0.9,
        ..base.clone()
    })
    .unwrap();
    let rows = harness::sweep(&base, SweepParam::Gamma, &[0.9]).unwrap();
    assert_eq!(rows.len(), 1);
    let swept = Summary {
        mean_adapt_us: None,
        max_adapt_us: None,
        ..rows[0].summary.clone()
    };
    assert_eq!(swept, timeless(&direct).1);
}

#[test]
fn a_granularity_sweep_at_the_default_is_the_default_run() {
    let base = RunConfig {
        source: Some(TraceSource::Gen(GenSpec::desk3(1))),
        ..RunConfig::default()
    };
    let direct = harness::run(&base).unwrap();
    let rows = harness::sweep(&base, SweepParam::Granularity, &[10.0, 30.0]).unwrap();
    let swept = Summary {
        mean_adapt_us: None,
        max_adapt_us: None,
        ..rows[0].summary.clone()
    };
    assert_eq!(swept, timeless(&direct).1);
    let coarse = SweepParam::Granularity.apply(&base, 30.0).unwrap();
    assert_eq!((coarse.granularity, coarse.basic_window), (30, 30));
    assert!(rows[1].summary.conserved);
}

#[test]
fn stricter_requirements_buy_more_recall() {
    let base = RunConfig {
        source: Some(TraceSource::Gen(GenSpec::desk3(1))),
        ..RunConfig::default()
    };
    let rows = harness::sweep(&base, SweepParam::Gamma, &[0.5, 0.8, 0.9, 0.99]).unwrap();
    for w in rows.windows(2) {
        let (a, b) = (w[0].summary.mean_gamma.unwrap(), w[1].summary.mean_gamma.unwrap());
        assert!(b >= a - 0.01, "gamma {} -> {}: {a} -> {b}", w[0].value, w[1].value);
    }
    for r in &rows {
        assert!(r.summary.mean_gamma.unwrap() >= 0.99 * r.value, "gamma {}", r.value);
    }
}

#[test]
fn reports_are_reproducible() {
    let config = RunConfig {
        source: Some(TraceSource::Gen(GenSpec::desk3(2))),
        query: Query::q3(),
        ..RunConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        harness::write_report(d.path(), &harness::run(&config).unwrap(), &config).unwrap();
    }
    for name in ["decisions.csv", "recall.csv", "summary.txt"] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        assert_eq!(a, fs::read(dirs[1].path().join(name)).unwrap(), "{name}");
    }
    let decisions = fs::read_to_string(dirs[0].path().join("decisions.csv")).unwrap();
    let recall = fs::read_to_string(dirs[0].path().join("recall.csv")).unwrap();
    assert_eq!(decisions.lines().next(), Some(DECISIONS_HEADER));
    assert_eq!(recall.lines().next(), Some(RECALL_HEADER));
    assert_eq!(decisions.lines().count(), recall.lines().count());
    assert!(decisions.lines().skip(1).all(|l| l.split(',').nth(5) == Some("0")));
}
