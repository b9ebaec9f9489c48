//! Timestamps, tuples, per-stream clocks and the interleaved trace format.
//!
//! A trace is UTF-8 text with one tuple per line:
//!
//! ```text
//! # comment
//! 1	120	a1=7,x=0.5
//! 2	118	a1=3
//! ```
//!
//! The first column is the 1-based stream id, the second the timestamp in
//! milliseconds, the third a comma-separated list of `name=value` attributes.
//! File order is the global arrival order.
#![allow(clippy::tabs_in_doc_comments)]

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::{Add, Sub};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A span of logical time in milliseconds.
pub type Millis = i64;

/// Milliseconds since the stream epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn millis(self) -> i64 {
        self.0
    }
}

impl Add<Millis> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: Millis) -> Timestamp {
        Timestamp(self.0 + rhs)
    }
}

impl Sub<Millis> for Timestamp {
    type Output = Timestamp;
    fn sub(self, rhs: Millis) -> Timestamp {
        Timestamp(self.0 - rhs)
    }
}

impl Sub for Timestamp {
    type Output = Millis;
    fn sub(self, rhs: Timestamp) -> Millis {
        self.0 - rhs.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A scalar attribute value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
}

/// Hashable normal form of a [`Value`]; integral reals collapse to `Int` so
/// that `3` and `3.0` compare equal in equi-joins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueKey {
    Int(i64),
    Real(u64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Int(v) => v as f64,
            Value::Real(v) => v,
        }
    }

    pub fn key(self) -> ValueKey {
        match self {
            Value::Int(v) => ValueKey::Int(v),
            Value::Real(v) => {
                if v.fract() == 0.0 && v.abs() < 9.0e15 {
                    ValueKey::Int(v as i64)
                } else {
                    ValueKey::Real(v.to_bits())
                }
            }
        }
    }

    fn parse(s: &str) -> Option<Value> {
        if let Ok(v) = s.parse::<i64>() {
            return Some(Value::Int(v));
        }
        s.parse::<f64>().ok().map(Value::Real)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            // `{:?}` keeps a trailing `.0` so reals stay reals on re-read.
            Value::Real(v) => write!(f, "{v:?}"),
        }
    }
}

/// Identity of a tuple: 0-based stream index and per-stream arrival number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TupleId {
    pub stream: usize,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    /// 0-based stream index.
    pub stream: usize,
    /// Arrival number within the stream, starting at 1.
    pub seq: u64,
    pub ts: Timestamp,
    pub attrs: Vec<(Arc<str>, Value)>,
    /// Delay measured on the raw stream at arrival; set by the K-slack stage.
    pub delay: Millis,
}

impl Tuple {
    pub fn new(stream: usize, seq: u64, ts: Timestamp, attrs: Vec<(Arc<str>, Value)>) -> Self {
        Tuple {
            stream,
            seq,
            ts,
            attrs,
            delay: 0,
        }
    }

    /// A tuple without attributes.
    pub fn bare(stream: usize, seq: u64, ts: i64) -> Self {
        Tuple::new(stream, seq, Timestamp(ts), Vec::new())
    }

    pub fn with_attr(mut self, name: &str, value: Value) -> Self {
        self.attrs.push((Arc::from(name), value));
        self
    }

    pub fn attr(&self, name: &str) -> Option<Value> {
        self.attrs.iter().find(|(n, _)| n.as_ref() == name).map(|(_, v)| *v)
    }

    pub fn id(&self) -> TupleId {
        TupleId {
            stream: self.stream,
            seq: self.seq,
        }
    }

    /// Ordering key inside buffers and windows.
    pub fn order_key(&self) -> (Timestamp, u64) {
        (self.ts, self.seq)
    }
}

/// Local current time of one stream: the maximum timestamp seen so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamClock {
    local_time: Timestamp,
}

impl StreamClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn local_time(&self) -> Timestamp {
        self.local_time
    }

    /// Advances the clock with `e` and annotates `e` with its delay.
    pub fn observe(&mut self, e: &mut Tuple) -> Millis {
        let delay = self.advance(e.ts);
        e.delay = delay;
        delay
    }

    /// Advances the clock to cover `ts` and returns the delay of a tuple with
    /// that timestamp.
    pub fn advance(&mut self, ts: Timestamp) -> Millis {
        if ts > self.local_time {
            self.local_time = ts;
        }
        self.local_time - ts
    }
}

/// Absolute difference between the local times of two streams.
pub fn skew(a: &StreamClock, b: &StreamClock) -> Millis {
    (a.local_time - b.local_time).abs()
}

/// Per-stream window extents in milliseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSpec {
    sizes: Vec<Millis>,
}

impl WindowSpec {
    pub fn new(sizes: Vec<Millis>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::query("a join needs at least two streams"));
        }
        if let Some(w) = sizes.iter().find(|w| **w <= 0) {
            return Err(Error::query(format!("window sizes must be positive, got {w}")));
        }
        Ok(WindowSpec { sizes })
    }

    pub fn uniform(m: usize, size: Millis) -> Result<Self> {
        Self::new(vec![size; m])
    }

    pub fn size(&self, stream: usize) -> Millis {
        self.sizes[stream]
    }

    pub fn sizes(&self) -> &[Millis] {
        &self.sizes
    }

    pub fn streams(&self) -> usize {
        self.sizes.len()
    }
}

/// Reads an interleaved trace. Sequence numbers are assigned per stream in
/// file order starting at 1.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<Tuple>> {
    let mut names: HashMap<String, Arc<str>> = HashMap::new();
    let mut next_seq: Vec<u64> = Vec::new();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let mut cols = trimmed.split('\t');
        let stream_col = cols.next().unwrap_or_default();
        let ts_col = cols
            .next()
            .ok_or_else(|| err("expected stream_id<TAB>ts_ms[<TAB>attrs]".into()))?;
        let attr_col = cols.next().unwrap_or("");
        if cols.next().is_some() {
            return Err(err("too many columns".into()));
        }
        let stream_id: usize = stream_col
            .trim()
            .parse()
            .map_err(|_| err(format!("bad stream id {stream_col:?}")))?;
        if stream_id == 0 {
            return Err(err("stream ids are 1-based".into()));
        }
        let ts: i64 = ts_col
            .trim()
            .parse()
            .map_err(|_| err(format!("bad timestamp {ts_col:?}")))?;
        if ts < 0 {
            return Err(err(format!("negative timestamp {ts}")));
        }
        let mut attrs = Vec::new();
        for pair in attr_col.split(',').filter(|p| !p.trim().is_empty()) {
            let (name, value) = pair
                .split_once('=')
                .ok_or_else(|| err(format!("attribute {pair:?} is not name=value")))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(err("empty attribute name".into()));
            }
            let value = Value::parse(value.trim()).ok_or_else(|| err(format!("bad value for attribute {name:?}")))?;
            let name = names.entry(name.to_string()).or_insert_with(|| Arc::from(name)).clone();
            attrs.push((name, value));
        }
        let stream = stream_id - 1;
        if next_seq.len() <= stream {
            next_seq.resize(stream + 1, 1);
        }
        let seq = next_seq[stream];
        next_seq[stream] += 1;
        out.push(Tuple::new(stream, seq, Timestamp(ts), attrs));
    }
    Ok(out)
}

pub fn write_trace<W: Write>(mut writer: W, tuples: &[Tuple]) -> Result<()> {
    for t in tuples {
        write!(writer, "{}\t{}\t", t.stream + 1, t.ts)?;
        for (i, (name, value)) in t.attrs.iter().enumerate() {
            if i > 0 {
                writer.write_all(b",")?;
            }
            write!(writer, "{name}={value}")?;
        }
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<Tuple>> {
    read_trace(BufReader::new(File::open(path)?))
}

pub fn save_trace(path: impl AsRef<Path>, tuples: &[Tuple]) -> Result<()> {
    write_trace(BufWriter::new(File::create(path)?), tuples)
}

/// Number of streams referenced by a trace (highest stream index + 1).
pub fn stream_count(tuples: &[Tuple]) -> usize {
    tuples.iter().map(|t| t.stream + 1).max().unwrap_or(0)
}
