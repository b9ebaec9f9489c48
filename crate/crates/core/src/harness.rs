//! Experiment driver: configuration files, sweeps and report writers.
//!
//! A run configuration is a flat `key=value` file:
//!
//! ```text
//! mode=quality            # quality | none | max | fixed:K
//! gamma=0.95
//! period_ms=60000
//! interval_ms=1000
//! basic_window_ms=10
//! granularity_ms=10
//! strategy=noneqsel       # eqsel | noneqsel
//! query=q3                # q3, q4, or set windows/predicate below
//! windows=5000,5000,5000
//! predicate=equi(1.a1=2.a1,2.a1=3.a1)
//! gen=desk3               # generator preset or spec file; or trace=FILE
//! seed=7
//! out=results
//! delta=0.01
//! measure_adapt_time=false
//! pipelined=false
//! ```

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::GenSpec;
use crate::engine::{self, EngineConfig, Measurement, Mode, RunOutput, Summary};
use crate::error::{Error, Result};
use crate::kv;
use crate::manager::{AdaptationDecision, ManagerConfig};
use crate::oracle::ResultCounts;
use crate::predicate::JoinPredicate;
use crate::profiler::SelectivityStrategy;
use crate::stream::{self, Millis, Tuple};

/// Windows and predicate of a join query.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub windows: Vec<Millis>,
    pub predicate: JoinPredicate,
}

impl Query {
    /// Three streams, 5 s windows, equality on `a1`.
    pub fn q3() -> Self {
        Query {
            windows: vec![5000; 3],
            predicate: JoinPredicate::parse("equi(1.a1=2.a1,2.a1=3.a1)").expect("valid preset"),
        }
    }

    /// Four streams, 3 s windows, a star of equalities around stream 1.
    pub fn q4() -> Self {
        Query {
            windows: vec![3000; 4],
            predicate: JoinPredicate::parse("equi(1.a1=2.a1,1.a2=3.a2,1.a3=4.a3)").expect("valid preset"),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "q3" => Some(Self::q3()),
            "q4" => Some(Self::q4()),
            _ => None,
        }
    }

    /// A preset name, or `windows=W1,W2,… predicate=P` separated by spaces.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Some(q) = Self::preset(text) {
            return Ok(q);
        }
        let mut windows = None;
        let mut predicate = None;
        for part in text.split_whitespace() {
            match part.split_once('=') {
                Some(("windows", v)) => windows = Some(kv::list::<Millis>("windows", v)?),
                Some(("predicate", v)) => predicate = Some(JoinPredicate::parse(v)?),
                _ => return Err(Error::query(format!("unexpected query part {part:?}"))),
            }
        }
        let windows = windows.ok_or_else(|| Error::query("query needs windows="))?;
        let predicate = predicate.unwrap_or(JoinPredicate::Cross);
        predicate.validate(windows.len())?;
        Ok(Query { windows, predicate })
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w: Vec<String> = self.windows.iter().map(Millis::to_string).collect();
        write!(f, "windows={} predicate={}", w.join(","), self.predicate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Gen(GenSpec),
}

impl TraceSource {
    /// A generator preset name or the path of a spec file.
    pub fn generator(spec: &str) -> Result<Self> {
        match GenSpec::preset(spec, 0) {
            Ok(g) => Ok(TraceSource::Gen(g)),
            Err(_) => {
                let text = fs::read_to_string(spec).map_err(|e| {
                    Error::config(format!("gen: {spec:?} is neither a preset nor a readable file: {e}"))
                })?;
                Ok(TraceSource::Gen(GenSpec::parse(&text)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub gamma: f64,
    pub period: Millis,
    pub interval: Millis,
    pub basic_window: Millis,
    pub granularity: Millis,
    pub strategy: SelectivityStrategy,
    pub query: Query,
    pub source: Option<TraceSource>,
    /// Overrides the generator's seed.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub delta: f64,
    /// Report wall-clock adaptation times; otherwise they print as 0.
    pub measure_adapt_time: bool,
    pub pipelined: bool,
    pub materialize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Quality,
            gamma: 0.95,
            period: 60_000,
            interval: 1000,
            basic_window: 10,
            granularity: 10,
            strategy: SelectivityStrategy::NonEqSel,
            query: Query::q3(),
            source: None,
            seed: None,
            out: None,
            delta: 0.01,
            measure_adapt_time: false,
            pipelined: false,
            materialize: false,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (k, v) in kv::parse(text)? {
            config.set(&k, &v)?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "gamma" => self.gamma = kv::number(key, value)?,
            "period_ms" | "period" => self.period = kv::number(key, value)?,
            "interval_ms" | "interval" => self.interval = kv::number(key, value)?,
            "basic_window_ms" | "basic_window" => self.basic_window = kv::number(key, value)?,
            "granularity_ms" | "granularity" => self.granularity = kv::number(key, value)?,
            "strategy" => {
                self.strategy =
                    SelectivityStrategy::from_str(value).map_err(|e| Error::config(format!("strategy: {e}")))?
            }
            "query" => self.query = Query::parse(value)?,
            "windows" => self.query.windows = kv::list(key, value)?,
            "predicate" => self.query.predicate = JoinPredicate::parse(value)?,
            "trace" => self.source = Some(TraceSource::File(PathBuf::from(value))),
            "gen" => self.source = Some(TraceSource::generator(value)?),
            "seed" => self.seed = Some(kv::number(key, value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            "delta" => self.delta = kv::number(key, value)?,
            "measure_adapt_time" => self.measure_adapt_time = kv::boolean(key, value)?,
            "pipelined" => self.pipelined = kv::boolean(key, value)?,
            "materialize" => self.materialize = kv::boolean(key, value)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Checks every invariant and lists all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            bad.push(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.interval <= 0 || self.interval > self.period {
            bad.push(format!(
                "need 0 < interval <= period, got L={} P={}",
                self.interval, self.period
            ));
        } else if self.period % self.interval != 0 {
            bad.push(format!(
                "period {} is not a multiple of interval {}",
                self.period, self.interval
            ));
        }
        if self.granularity <= 0 || self.basic_window <= 0 {
            bad.push("granularity and basic window must be positive".to_string());
        } else if self.basic_window % self.granularity != 0 {
            bad.push(format!(
                "basic window {} is not a multiple of granularity {}",
                self.basic_window, self.granularity
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bad.push(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.query.windows.len() < 2 || self.query.windows.iter().any(|&w| w <= 0) {
            bad.push("query needs at least two positive windows".to_string());
        }
        if let Err(e) = self.query.predicate.validate(self.query.windows.len()) {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::config(bad.join("; ")))
        }
    }

    pub fn engine_config(&self) -> Result<EngineConfig> {
        self.validate()?;
        Ok(EngineConfig {
            mode: self.mode,
            manager: ManagerConfig {
                gamma: self.gamma,
                period: self.period,
                interval: self.interval,
                basic_window: self.basic_window,
                granularity: self.granularity,
                strategy: self.strategy,
                windows: self.query.windows.clone(),
            },
            predicate: self.query.predicate.clone(),
            delta: self.delta,
            materialize: self.materialize,
            pipelined: self.pipelined,
        })
    }

    pub fn load_trace(&self) -> Result<Vec<Tuple>> {
        match &self.source {
            Some(TraceSource::File(path)) => stream::load_trace(path),
            Some(TraceSource::Gen(spec)) => {
                let mut spec = spec.clone();
                if let Some(seed) = self.seed {
                    spec.seed = seed;
                }
                spec.generate()
            }
            None => Err(Error::config("no trace source: set trace= or gen=")),
        }
    }
}

/// Loads the configured trace and runs it.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let engine = config.engine_config()?;
    engine::run(&config.load_trace()?, &engine)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Gamma,
    Period,
    Interval,
    Granularity,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gamma" => Ok(SweepParam::Gamma),
            "period" | "p" => Ok(SweepParam::Period),
            "interval" | "l" => Ok(SweepParam::Interval),
            "granularity" | "g" => Ok(SweepParam::Granularity),
            _ => Err(Error::config(format!(
                "cannot sweep {s:?}; use gamma, period, interval or granularity"
            ))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Gamma => "gamma",
            SweepParam::Period => "period",
            SweepParam::Interval => "interval",
            SweepParam::Granularity => "granularity",
        })
    }
}

impl SweepParam {
    /// `base` with the parameter set to `value`. A granularity that does
    /// not divide the basic window raises the basic window to its next
    /// multiple.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = base.clone();
        let as_ms = |v: f64| -> Result<Millis> {
            if v.fract() == 0.0 && v > 0.0 {
                Ok(v as Millis)
            } else {
                Err(Error::config(format!(
                    "{self}: expected a positive whole number of ms, got {v}"
                )))
            }
        };
        match self {
            SweepParam::Gamma => c.gamma = value,
            SweepParam::Period => c.period = as_ms(value)?,
            SweepParam::Interval => c.interval = as_ms(value)?,
            SweepParam::Granularity => {
                let g = as_ms(value)?;
                c.granularity = g;
                if c.basic_window % g != 0 {
                    c.basic_window = (c.basic_window / g + 1) * g;
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub summary: Summary,
}

/// One run per value over a shared trace and truth.
pub fn sweep(base: &RunConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    let configs = values
        .iter()
        .map(|&v| param.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let trace = base.load_trace()?;
    let truth = engine::truth_for(&trace, &base.engine_config()?)?;
    configs
        .iter()
        .zip(values)
        .map(|(c, &value)| {
            let out = engine::run_against(&trace, &c.engine_config()?, &truth)?;
            Ok(SweepRow {
                param,
                value,
                summary: out.summary,
            })
        })
        .collect()
}

/// Mean absolute gap between each warm interval's modeled recall and the
/// recall the next interval actually achieved, over intervals with true
/// results.
pub fn model_fidelity(out: &RunOutput, truth: &ResultCounts) -> Option<f64> {
    let gaps: Vec<f64> = out
        .measurements
        .windows(2)
        .filter(|w| w[0].warm)
        .filter_map(|w| {
            let estimate = w[0].model_estimate?;
            let span = w[1].measurement_ts - w[0].measurement_ts;
            if span <= 0 {
                return None;
            }
            let want = truth.count_in_period(w[1].measurement_ts, span);
            (want > 0).then(|| {
                let got = out.produced.count_in_period(w[1].measurement_ts, span);
                (estimate - got as f64 / want as f64).abs()
            })
        })
        .collect();
    (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
}

pub const DECISIONS_HEADER: &str =
    "interval_end_ts,k_star_ms,gamma_target,estimated_recall,search_steps,adapt_time_us,flags";
pub const RECALL_HEADER: &str = "measurement_ts,gamma_P,k_current_ms,produced_in_P,true_in_P";
pub const SWEEP_HEADER: &str =
    "param,value,mode,average_k_ms,final_k_ms,phi_gamma,phi_099_gamma,mean_gamma,produced_results,true_results";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

pub fn write_decisions(w: &mut impl Write, decisions: &[AdaptationDecision], measured: bool) -> io::Result<()> {
    writeln!(w, "{DECISIONS_HEADER}")?;
    for d in decisions {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            d.interval_end,
            d.k_star,
            d.gamma_target,
            d.estimated_recall,
            d.search_steps,
            if measured { d.adapt_time_us } else { 0 },
            d.flags
        )?;
    }
    Ok(())
}

pub fn write_recall(w: &mut impl Write, measurements: &[Measurement]) -> io::Result<()> {
    writeln!(w, "{RECALL_HEADER}")?;
    for s in measurements {
        writeln!(
            w,
            "{},{},{},{},{}",
            s.measurement_ts, s.gamma, s.k_current, s.produced_in_p, s.true_in_p
        )?;
    }
    Ok(())
}

pub fn write_summary(w: &mut impl Write, s: &Summary, config: &RunConfig) -> io::Result<()> {
    writeln!(w, "mode: {}", s.mode)?;
    writeln!(w, "gamma: {}", config.gamma)?;
    writeln!(w, "strategy: {}", config.strategy)?;
    writeln!(w, "query: {}", config.query)?;
    writeln!(
        w,
        "period_ms: {} interval_ms: {} basic_window_ms: {} granularity_ms: {}",
        config.period, config.interval, config.basic_window, config.granularity
    )?;
    writeln!(w, "tuples: {}", s.tuples)?;
    writeln!(w, "produced_results: {}", s.produced_results)?;
    writeln!(w, "true_results: {}", s.true_results)?;
    writeln!(w, "average_k_ms: {}", s.average_k)?;
    writeln!(w, "final_k_ms: {}", s.final_k)?;
    writeln!(w, "phi_gamma: {}", opt(s.phi_gamma))?;
    writeln!(w, "phi_099_gamma: {}", opt(s.phi_099_gamma))?;
    writeln!(w, "mean_gamma_P: {}", opt(s.mean_gamma))?;
    writeln!(w, "measurements: {}", s.warm_measurements)?;
    writeln!(w, "adaptations: {}", s.adaptations)?;
    if config.measure_adapt_time {
        writeln!(w, "mean_adapt_time_us: {}", opt(s.mean_adapt_us))?;
        writeln!(
            w,
            "max_adapt_time_us: {}",
            s.max_adapt_us.map_or("undefined".into(), |v| v.to_string())
        )?;
    } else {
        writeln!(w, "mean_adapt_time_us: not measured")?;
        writeln!(w, "max_adapt_time_us: not measured")?;
    }
    let c = &s.counters;
    writeln!(
        w,
        "join: received {} in_order {} late_inserted {} late_dropped {} expired {} windowed {}",
        c.received, c.in_order, c.late_inserted, c.late_dropped, c.expired, s.windowed
    )?;
    writeln!(w, "conserved: {}", s.conserved)
}

pub fn write_sweep(w: &mut impl Write, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        let s = &r.summary;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.param,
            r.value,
            s.mode,
            s.average_k,
            s.final_k,
            opt(s.phi_gamma),
            opt(s.phi_099_gamma),
            opt(s.mean_gamma),
            s.produced_results,
            s.true_results
        )?;
    }
    Ok(())
}

fn write_file(path: &Path, body: impl FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>) -> Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes `decisions.csv`, `recall.csv` and `summary.txt` into `dir`.
pub fn write_report(dir: &Path, out: &RunOutput, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_file(&dir.join("decisions.csv"), |w| {
        write_decisions(w, &out.decisions, config.measure_adapt_time)
    })?;
    write_file(&dir.join("recall.csv"), |w| write_recall(w, &out.measurements))?;
    write_file(&dir.join("summary.txt"), |w| write_summary(w, &out.summary, config))
}

pub fn write_sweep_report(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_file(&dir.join("sweep.csv"), |w| write_sweep(w, rows))
}

/// `ts,count` lines of per-timestamp true result counts.
pub fn write_truth_counts(w: &mut impl Write, counts: &ResultCounts) -> io::Result<()> {
    writeln!(w, "ts,count")?;
    for (ts, n) in counts.per_timestamp() {
        writeln!(w, "{ts},{n}")?;
    }
    Ok(())
}

/// `ts,parts` lines, parts as `stream:seq` joined by `;` (1-based streams).
pub fn write_truth_results(w: &mut impl Write, results: &[crate::join::ResultTuple]) -> io::Result<()> {
    writeln!(w, "ts,parts")?;
    for r in results {
        let parts: Vec<String> = r.identity().iter().map(|(s, q)| format!("{}:{q}", s + 1)).collect();
        writeln!(w, "{},{}", r.ts, parts.join(";"))?;
    }
    Ok(())
}
