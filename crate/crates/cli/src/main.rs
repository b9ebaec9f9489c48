use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mswj::datagen::GenSpec;
use mswj::harness::{self, Query, RunConfig, SweepParam};
use mswj::oracle;
use mswj::stream;

#[derive(Parser)]
#[command(
    name = "mswj",
    version,
    about = "Quality-driven disorder handling for m-way sliding window joins"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write decisions.csv, recall.csv and summary.txt.
    Run(RunArgs),
    /// Generate a synthetic trace.
    Gen {
        /// Spec file or preset name (syn3, syn4, desk3, desk4).
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute the true results of a query over a trace.
    Truth {
        #[arg(long)]
        trace: PathBuf,
        /// q3, q4, or "windows=W1,W2,... predicate=P".
        #[arg(long)]
        query: String,
        #[arg(long)]
        out: PathBuf,
        /// List every result instead of per-timestamp counts.
        #[arg(long)]
        materialize: bool,
    },
    /// Run once per value of one parameter and write sweep.csv.
    Sweep {
        /// gamma, period, interval or granularity.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key=value configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// quality, none, max or fixed:K.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_name = "MS")]
    period: Option<i64>,
    #[arg(long, value_name = "MS")]
    interval: Option<i64>,
    #[arg(long, value_name = "MS")]
    basic_window: Option<i64>,
    #[arg(long, value_name = "MS")]
    granularity: Option<i64>,
    /// eqsel or noneqsel.
    #[arg(long)]
    strategy: Option<String>,
    /// q3, q4, or "windows=W1,W2,... predicate=P".
    #[arg(long)]
    query: Option<String>,
    #[arg(long, conflicts_with = "gen")]
    trace: Option<PathBuf>,
    /// Generator preset or spec file.
    #[arg(long)]
    gen: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report wall-clock adaptation times.
    #[arg(long)]
    measure_adapt_time: bool,
    /// Run ingestion and the join on separate threads.
    #[arg(long)]
    pipelined: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => RunConfig::default(),
        };
        let text = |v: &Option<i64>| v.map(|x| x.to_string());
        let overrides = [
            ("mode", self.mode.clone()),
            ("gamma", self.gamma.map(|g| g.to_string())),
            ("period_ms", text(&self.period)),
            ("interval_ms", text(&self.interval)),
            ("basic_window_ms", text(&self.basic_window)),
            ("granularity_ms", text(&self.granularity)),
            ("strategy", self.strategy.clone()),
            ("query", self.query.clone()),
            ("trace", self.trace.as_ref().map(|p| p.display().to_string())),
            ("gen", self.gen.clone()),
            ("seed", self.seed.map(|s| s.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                c.set(key, &v)
                    .with_context(|| format!("--{}", key.trim_end_matches("_ms").replace('_', "-")))?;
            }
        }
        c.measure_adapt_time |= self.measure_adapt_time;
        c.pipelined |= self.pipelined;
        c.validate()?;
        Ok(c)
    }
}

fn out_dir(c: &RunConfig) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let config = args.config()?;
            let out = harness::run(&config)?;
            let dir = out_dir(&config);
            harness::write_report(&dir, &out, &config)?;
            harness::write_summary(&mut io::stdout().lock(), &out.summary, &config)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Gen { spec, out, seed } => {
            let mut g = match GenSpec::preset(&spec, 0) {
                Ok(g) => g,
                Err(_) => GenSpec::parse(&fs::read_to_string(&spec).with_context(|| format!("reading {spec}"))?)?,
            };
            if let Some(s) = seed {
                g.seed = s;
            }
            let trace = g.generate()?;
            stream::save_trace(&out, &trace)?;
            eprintln!("wrote {} tuples to {}", trace.len(), out.display());
        }
        Command::Truth {
            trace,
            query,
            out,
            materialize,
        } => {
            let q = Query::parse(&query)?;
            let tuples = stream::load_trace(&trace)?;
            let spec = stream::WindowSpec::new(q.windows.clone())?;
            if let Some(t) = tuples.iter().find(|t| t.stream >= spec.streams()) {
                bail!(
                    "trace has stream {} but the query joins {} streams",
                    t.stream + 1,
                    spec.streams()
                );
            }
            let mut w = io::BufWriter::new(fs::File::create(&out)?);
            if materialize {
                harness::write_truth_results(&mut w, &oracle::compute_truth(&tuples, &spec, &q.predicate)?)?;
            } else {
                harness::write_truth_counts(&mut w, &oracle::truth_counts(&tuples, &spec, &q.predicate)?)?;
            }
            w.flush()?;
        }
        Command::Sweep { param, values, run } => {
            let config = run.config()?;
            let param: SweepParam = param.parse()?;
            let values: Vec<f64> = mswj::kv::list("values", &values)?;
            if values.is_empty() {
                bail!("--values needs at least one value");
            }
            let rows = harness::sweep(&config, param, &values)?;
            let dir = out_dir(&config);
            harness::write_sweep_report(&dir, &rows)?;
            harness::write_sweep(&mut io::stdout().lock(), &rows)?;
        }
    }
    Ok(())
}
