//! Join conditions.
//!
//! Textual forms accepted by [`JoinPredicate::parse`] (stream ids are 1-based):
//!
//! | form | meaning |
//! |------|---------|
//! | `cross` | always true |
//! | `equi(1.a1=2.a1, 2.a1=3.a1)` | conjunction of attribute equalities |
//! | `band(1.x-2.x<5.0)` | conjunction of `abs(left - right) < theta` |
//! | `dist(1.x,1.y,2.x,2.y<5.0)` | Euclidean distance of two points below a bound |

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::stream::{Tuple, Value};

/// An attribute of one stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttrRef {
    pub stream: usize,
    pub attr: Arc<str>,
}

impl AttrRef {
    pub fn new(stream: usize, attr: &str) -> Self {
        AttrRef {
            stream,
            attr: Arc::from(attr),
        }
    }

    pub fn value(&self, t: &Tuple) -> Option<Value> {
        t.attr(&self.attr)
    }

    fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (stream, attr) = s
            .split_once('.')
            .ok_or_else(|| Error::query(format!("expected <stream>.<attr>, got {s:?}")))?;
        let stream: usize = stream
            .trim()
            .parse()
            .map_err(|_| Error::query(format!("bad stream id in {s:?}")))?;
        if stream == 0 {
            return Err(Error::query("stream ids are 1-based"));
        }
        let attr = attr.trim();
        if attr.is_empty() || !attr.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(Error::query(format!("bad attribute name in {s:?}")));
        }
        Ok(AttrRef::new(stream - 1, attr))
    }
}

impl fmt::Display for AttrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.stream + 1, self.attr)
    }
}

/// `abs(left - right) < theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTerm {
    pub left: AttrRef,
    pub right: AttrRef,
    pub theta: f64,
}

/// A condition over exactly two attributes, evaluable once both of their
/// streams are bound.
#[derive(Debug, Clone, PartialEq)]
pub enum PairTerm {
    Equal(AttrRef, AttrRef),
    Band(BandTerm),
}

impl PairTerm {
    pub fn streams(&self) -> (usize, usize) {
        match self {
            PairTerm::Equal(a, b) => (a.stream, b.stream),
            PairTerm::Band(t) => (t.left.stream, t.right.stream),
        }
    }

    /// Evaluates the term with `left`/`right` being the tuples of the two
    /// referenced streams (in the term's own order).
    pub fn holds(&self, left: &Tuple, right: &Tuple) -> bool {
        match self {
            PairTerm::Equal(a, b) => match (a.value(left), b.value(right)) {
                (Some(x), Some(y)) => x.key() == y.key(),
                _ => false,
            },
            PairTerm::Band(t) => match (t.left.value(left), t.right.value(right)) {
                (Some(x), Some(y)) => (x.as_f64() - y.as_f64()).abs() < t.theta,
                _ => false,
            },
        }
    }
}

type CustomFn = dyn Fn(&[&Tuple]) -> bool + Send + Sync;

/// Caller-supplied condition over one tuple per stream (indexed by stream).
#[derive(Clone)]
pub struct CustomPredicate {
    name: String,
    f: Arc<CustomFn>,
}

impl CustomPredicate {
    pub fn new(name: impl Into<String>, f: impl Fn(&[&Tuple]) -> bool + Send + Sync + 'static) -> Self {
        CustomPredicate {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn call(&self, parts: &[&Tuple]) -> bool {
        (self.f)(parts)
    }
}

/// Custom predicates compare by name.
impl PartialEq for CustomPredicate {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl fmt::Debug for CustomPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPredicate").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JoinPredicate {
    Cross,
    Equi(Vec<(AttrRef, AttrRef)>),
    Band(Vec<BandTerm>),
    Custom(CustomPredicate),
}

impl JoinPredicate {
    /// `sqrt((ax-bx)^2 + (ay-by)^2) < bound` between two streams' coordinates.
    pub fn distance_below(ax: AttrRef, ay: AttrRef, bx: AttrRef, by: AttrRef, bound: f64) -> Self {
        let label = format!("dist({ax},{ay},{bx},{by}<{bound:?})");
        JoinPredicate::Custom(CustomPredicate::new(label, move |parts| {
            let get = |r: &AttrRef| parts.get(r.stream).and_then(|t| r.value(t)).map(Value::as_f64);
            match (get(&ax), get(&ay), get(&bx), get(&by)) {
                (Some(x1), Some(y1), Some(x2), Some(y2)) => (x1 - x2).hypot(y1 - y2) < bound,
                _ => false,
            }
        }))
    }

    /// Two-attribute terms usable for pruning partial combinations.
    pub fn pair_terms(&self) -> Vec<PairTerm> {
        match self {
            JoinPredicate::Equi(pairs) => pairs
                .iter()
                .map(|(a, b)| PairTerm::Equal(a.clone(), b.clone()))
                .collect(),
            JoinPredicate::Band(terms) => terms.iter().cloned().map(PairTerm::Band).collect(),
            JoinPredicate::Cross | JoinPredicate::Custom(_) => Vec::new(),
        }
    }

    pub fn is_cross(&self) -> bool {
        matches!(self, JoinPredicate::Cross)
    }

    /// Evaluates the full condition on one tuple per stream, indexed by stream.
    pub fn eval(&self, parts: &[&Tuple]) -> bool {
        match self {
            JoinPredicate::Cross => true,
            JoinPredicate::Custom(c) => c.call(parts),
            _ => self.pair_terms().iter().all(|term| {
                let (a, b) = term.streams();
                term.holds(parts[a], parts[b])
            }),
        }
    }

    /// Checks that every referenced stream exists.
    pub fn validate(&self, streams: usize) -> Result<()> {
        for term in self.pair_terms() {
            let (a, b) = term.streams();
            if a >= streams || b >= streams {
                return Err(Error::query(format!(
                    "predicate references stream {} but the query has {streams}",
                    a.max(b) + 1
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "cross" {
            return Ok(JoinPredicate::Cross);
        }
        let (kind, body) = text
            .split_once('(')
            .ok_or_else(|| Error::query(format!("unknown predicate {text:?}")))?;
        let body = body
            .trim_end()
            .strip_suffix(')')
            .ok_or_else(|| Error::query(format!("missing ')' in {text:?}")))?;
        match kind.trim() {
            "equi" => {
                let mut pairs = Vec::new();
                for term in body.split(',').filter(|s| !s.trim().is_empty()) {
                    let (a, b) = term
                        .split_once('=')
                        .ok_or_else(|| Error::query(format!("expected a=b, got {term:?}")))?;
                    pairs.push((AttrRef::parse(a)?, AttrRef::parse(b)?));
                }
                if pairs.is_empty() {
                    return Err(Error::query("equi() needs at least one pair"));
                }
                Ok(JoinPredicate::Equi(pairs))
            }
            "band" => {
                let mut terms = Vec::new();
                for term in body.split(',').filter(|s| !s.trim().is_empty()) {
                    let (lhs, theta) = term
                        .split_once('<')
                        .ok_or_else(|| Error::query(format!("expected a-b<theta, got {term:?}")))?;
                    let (a, b) = lhs
                        .split_once('-')
                        .ok_or_else(|| Error::query(format!("expected a-b<theta, got {term:?}")))?;
                    let theta = parse_bound(theta)?;
                    terms.push(BandTerm {
                        left: AttrRef::parse(a)?,
                        right: AttrRef::parse(b)?,
                        theta,
                    });
                }
                if terms.is_empty() {
                    return Err(Error::query("band() needs at least one term"));
                }
                Ok(JoinPredicate::Band(terms))
            }
            "dist" => {
                let (coords, bound) = body
                    .split_once('<')
                    .ok_or_else(|| Error::query("expected dist(a.x,a.y,b.x,b.y<bound)"))?;
                let refs = coords.split(',').map(AttrRef::parse).collect::<Result<Vec<_>>>()?;
                let [ax, ay, bx, by]: [AttrRef; 4] = refs
                    .try_into()
                    .map_err(|_| Error::query("dist() takes four coordinates"))?;
                Ok(JoinPredicate::distance_below(ax, ay, bx, by, parse_bound(bound)?))
            }
            other => Err(Error::query(format!("unknown predicate kind {other:?}"))),
        }
    }
}

fn parse_bound(s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::query(format!("bad bound {s:?}")))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::query(format!("bound must be positive, got {v}")));
    }
    Ok(v)
}

impl fmt::Display for JoinPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JoinPredicate::Cross => f.write_str("cross"),
            JoinPredicate::Equi(pairs) => {
                f.write_str("equi(")?;
                for (i, (a, b)) in pairs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}={b}")?;
                }
                f.write_str(")")
            }
            JoinPredicate::Band(terms) => {
                f.write_str("band(")?;
                for (i, t) in terms.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{}-{}<{:?}", t.left, t.right, t.theta)?;
                }
                f.write_str(")")
            }
            JoinPredicate::Custom(c) => f.write_str(c.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(stream: usize, attrs: &[(&str, Value)]) -> Tuple {
        attrs
            .iter()
            .fold(Tuple::bare(stream, 1, 1), |t, (n, v)| t.with_attr(n, *v))
    }

    #[test]
    fn parses_and_prints_the_text_forms() {
        for text in ["cross", "equi(1.a1=2.a1,2.a1=3.a1)", "band(1.x-2.x<5.0)"] {
            assert_eq!(JoinPredicate::parse(text).unwrap().to_string(), text);
        }
        let d = JoinPredicate::parse("dist(1.x, 1.y, 2.x, 2.y < 5)").unwrap();
        assert!(d.to_string().starts_with("dist("));
    }

    #[test]
    fn rejects_malformed_text() {
        for bad in [
            "",
            "equi()",
            "equi(1.a=2)",
            "band(1.x-2.x)",
            "dist(1.x,2.x<3)",
            "foo(1.a=2.a)",
            "equi(0.a=1.a)",
        ] {
            assert!(JoinPredicate::parse(bad).is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn equi_compares_normalized_values() {
        let p = JoinPredicate::parse("equi(1.a=2.b)").unwrap();
        let a = t(0, &[("a", Value::Int(4))]);
        let b = t(1, &[("b", Value::Real(4.0))]);
        let c = t(1, &[("b", Value::Int(5))]);
        assert!(p.eval(&[&a, &b]));
        assert!(!p.eval(&[&a, &c]));
        let missing = t(1, &[]);
        assert!(!p.eval(&[&a, &missing]));
    }

    #[test]
    fn band_is_strict() {
        let p = JoinPredicate::parse("band(1.x-2.x<2)").unwrap();
        let a = t(0, &[("x", Value::Int(0))]);
        let near = t(1, &[("x", Value::Real(1.5))]);
        let edge = t(1, &[("x", Value::Int(-2))]);
        assert!(p.eval(&[&a, &near]));
        assert!(!p.eval(&[&a, &edge]));
    }

    #[test]
    fn distance_predicate_uses_euclidean_norm() {
        let p = JoinPredicate::parse("dist(1.x,1.y,2.x,2.y<5)").unwrap();
        let a = t(0, &[("x", Value::Int(0)), ("y", Value::Int(0))]);
        let inside = t(1, &[("x", Value::Int(3)), ("y", Value::Real(3.9))]);
        let outside = t(1, &[("x", Value::Int(3)), ("y", Value::Int(4))]);
        assert!(p.eval(&[&a, &inside]));
        assert!(!p.eval(&[&a, &outside]));
    }

    #[test]
    fn validate_catches_out_of_range_streams() {
        let p = JoinPredicate::parse("equi(1.a=3.a)").unwrap();
        assert!(p.validate(2).is_err());
        assert!(p.validate(3).is_ok());
    }
}
