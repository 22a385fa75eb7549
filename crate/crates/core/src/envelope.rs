//! Linear envelopes `a*x <= f(x) <= b*x` and their refinement.
//!
//! [`derive_envelope_recurrence`] substitutes the envelope into a relation in
//! `x` alone. Every `f(x)` becomes the pivot `P`, every other `f(t)` the
//! interval `[a*t_lo, b*t_hi]` (valid because `t >= 0` on half-line domains
//! and `a >= 0`), and the two sides are propagated with interval arithmetic.
//! From `L = R` follow `L_lo - R_hi <= 0` and `R_lo - L_hi <= 0`; each is
//! affine in `P` and yields a bound on `P`, whose value at `x = 1` is the
//! coefficient update.

use std::fmt;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{BinOp, Expr, FunctionalRelation, RelationKind, Var};
use crate::eval::{evaluate, evaluate_scalar, Binding, EvalError, NoUnknown, ScalarBinding};
use crate::gridfn::GridFunction;
use crate::isolate::{add, affine_in_pivot, div, mul, neg, sign, simplify, sub, Sign};
use crate::number::{Scalar, EXACT_BIT_LIMIT};
use crate::parse::{parse_with, Dialect, ParseError};

/// Width decrease below `tol / 10` over this many steps counts as a stall.
pub const STALL_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),
    #[error("invalid envelope: {0}")]
    Invalid(String),
    #[error("step {step} produced a = {a} > b = {b}")]
    OrderViolation { step: usize, a: f64, b: f64 },
    #[error("step {step}: {source}")]
    Evaluation { step: usize, source: EvalError },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

fn unsupported(msg: impl Into<String>) -> EnvelopeError {
    EnvelopeError::UnsupportedShape(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearEnvelope {
    pub a: Scalar,
    pub b: Scalar,
    pub lower_strict: bool,
    pub upper_strict: bool,
}

impl LinearEnvelope {
    /// Requires finite `0 <= a <= b` with `b > 0`.
    pub fn new(a: Scalar, b: Scalar) -> Result<Self, EnvelopeError> {
        let ok = a.is_finite()
            && b.is_finite()
            && a.signum() >= 0
            && b.signum() > 0
            && matches!(a.compare(&b), Some(std::cmp::Ordering::Less | std::cmp::Ordering::Equal));
        if !ok {
            return Err(EnvelopeError::Invalid(format!("need 0 <= a <= b and b > 0, got ({a}, {b})")));
        }
        Ok(LinearEnvelope { a, b, lower_strict: false, upper_strict: false })
    }

    pub fn width(&self) -> f64 {
        self.b.sub(&self.a).to_f64()
    }

    /// `(0, B)` with `B` the largest sampled `f(x)/x`.
    pub fn from_oracle(oracle: &GridFunction) -> Result<Self, EnvelopeError> {
        let b = oracle
            .points()
            .iter()
            .zip(oracle.values())
            .fold(0.0f64, |m, (&x, &v)| m.max(v / x));
        Self::new(Scalar::zero(), Scalar::real(b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Derived,
    UserSupplied,
}

/// Coefficient updates `a' = lower(a, b)`, `b' = upper(a, b)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeRecurrence {
    pub lower: Expr,
    pub upper: Expr,
    pub origin: Origin,
}

impl EnvelopeRecurrence {
    pub fn user(lower: Expr, upper: Expr) -> Result<Self, EnvelopeError> {
        for m in [&lower, &upper] {
            let ok = !m.mentions_unknown()
                && !m.contains_pivot()
                && m.free_variables().iter().all(|v| matches!(v, Var::A | Var::B));
            if !ok {
                return Err(unsupported(format!("map `{m}` must be an f-free expression in a, b")));
            }
        }
        Ok(EnvelopeRecurrence { lower, upper, origin: Origin::UserSupplied })
    }

    pub fn parse_user(lower: &str, upper: &str) -> Result<Self, EnvelopeError> {
        Self::user(parse_with(lower, &Dialect::MAP)?, parse_with(upper, &Dialect::MAP)?)
    }

    /// Both maps at `(a, b)` in floating point.
    pub fn eval_f64(&self, a: f64, b: f64) -> Result<(f64, f64), EvalError> {
        let env = Binding::new().with(Var::A, a).with(Var::B, b);
        Ok((evaluate(&self.lower, &env, &NoUnknown)?, evaluate(&self.upper, &env, &NoUnknown)?))
    }
}

impl fmt::Display for EnvelopeRecurrence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a' = {}, b' = {}", self.lower, self.upper)
    }
}

type Interval = (Expr, Expr);

fn point(e: &Interval) -> bool {
    e.0 == e.1
}

fn scale_interval(c: &Expr, (lo, hi): Interval) -> Result<Interval, EnvelopeError> {
    match sign(c) {
        s if s.nonneg() => Ok((mul(c.clone(), lo), mul(c.clone(), hi))),
        s if s.nonpos() => Ok((mul(c.clone(), hi), mul(c.clone(), lo))),
        _ => Err(unsupported(format!("sign of `{c}` is indeterminate"))),
    }
}

fn interval(e: &Expr) -> Result<Interval, EnvelopeError> {
    let a = || Expr::var(Var::A);
    let b = || Expr::var(Var::B);
    match e {
        _ if e.is_f_of_x() => Ok((Expr::Pivot, Expr::Pivot)),
        Expr::Const(_) | Expr::Var(Var::X) => Ok((e.clone(), e.clone())),
        Expr::Var(v) => Err(unsupported(format!("variable `{v}` cannot be eliminated"))),
        Expr::Pivot => Err(unsupported("pivot placeholder in input")),
        Expr::Deriv(_) => Err(unsupported("derivatives are not enveloped")),
        Expr::Apply(t) => {
            let (lo, hi) = interval(t)?;
            Ok((mul(a(), lo), mul(b(), hi)))
        }
        Expr::Neg(inner) => {
            let (lo, hi) = interval(inner)?;
            Ok((neg(hi), neg(lo)))
        }
        Expr::Binary(op, l, r) => {
            let (l, r) = (interval(l)?, interval(r)?);
            match op {
                BinOp::Add => Ok((add(l.0, r.0), add(l.1, r.1))),
                BinOp::Sub => Ok((sub(l.0, r.1), sub(l.1, r.0))),
                BinOp::Mul if point(&l) => scale_interval(&l.0.clone(), r),
                BinOp::Mul if point(&r) => scale_interval(&r.0.clone(), l),
                BinOp::Mul if sign(&l.0).nonneg() && sign(&r.0).nonneg() => {
                    Ok((mul(l.0, r.0), mul(l.1, r.1)))
                }
                BinOp::Div if point(&r) && sign(&r.0) == Sign::Positive => {
                    Ok((div(l.0, r.0.clone()).expect("positive"), div(l.1, r.0).expect("positive")))
                }
                BinOp::Div if point(&r) && sign(&r.0) == Sign::Negative => {
                    Ok((div(l.1, r.0.clone()).expect("negative"), div(l.0, r.0).expect("negative")))
                }
                BinOp::Div if sign(&l.0).nonneg() && sign(&r.0) == Sign::Positive => {
                    Ok((div(l.0, r.1).expect("positive"), div(l.1, r.0).expect("positive")))
                }
                _ => Err(unsupported(format!("interval sign of `{}` is indeterminate", e))),
            }
        }
        Expr::Pow(base, n) => {
            let (lo, hi) = interval(base)?;
            if *n >= 0 && sign(&lo).nonneg() {
                Ok((Expr::pow(lo, *n), Expr::pow(hi, *n)))
            } else if *n < 0 && sign(&lo) == Sign::Positive {
                Ok((Expr::pow(hi, *n), Expr::pow(lo, *n)))
            } else {
                Err(unsupported(format!("power base of `{e}` may be negative")))
            }
        }
        Expr::Exp(inner) => {
            let (lo, hi) = interval(inner)?;
            Ok((Expr::Exp(Box::new(lo)), Expr::Exp(Box::new(hi))))
        }
        Expr::Ln(inner) => {
            let (lo, hi) = interval(inner)?;
            if sign(&lo) != Sign::Positive {
                return Err(unsupported(format!("logarithm argument of `{e}` may vanish")));
            }
            Ok((Expr::Ln(Box::new(lo)), Expr::Ln(Box::new(hi))))
        }
    }
}

/// Bound on the pivot implied by `e <= 0`: `Some((is_upper, bound))`, or
/// `None` when `e` does not involve the pivot.
fn pivot_bound(e: &Expr) -> Result<Option<(bool, Expr)>, EnvelopeError> {
    let (alpha, beta) = affine_in_pivot(e).ok_or_else(|| unsupported(format!("`{e}` is not affine in f(x)")))?;
    let alpha = simplify(&alpha);
    if alpha == Expr::int(0) {
        return Ok(None);
    }
    let bound = div(neg(simplify(&beta)), alpha.clone()).expect("nonzero coefficient");
    match sign(&alpha) {
        Sign::Positive => Ok(Some((true, bound))),
        Sign::Negative => Ok(Some((false, bound))),
        _ => Err(unsupported(format!("sign of the f(x) coefficient `{alpha}` is indeterminate"))),
    }
}

/// `bound(x) = x * bound(1)` at a few sample points.
fn homogeneous(bound: &Expr, map: &Expr) -> bool {
    let samples = [(0.37, 0.5, 1.9), (2.5, 1.1, 3.0), (11.0, 0.2, 0.7)];
    samples.iter().all(|&(x, a, b)| {
        let env = Binding::new().with(Var::X, x).with(Var::A, a).with(Var::B, b);
        match (evaluate(bound, &env, &NoUnknown), evaluate(map, &env, &NoUnknown)) {
            (Ok(full), Ok(unit)) => (full - x * unit).abs() <= 1e-12 * (1.0 + full.abs()),
            _ => false,
        }
    })
}

/// Coefficient updates implied by substituting `a*x <= f(x) <= b*x` into an
/// equality in `x` on a half-line domain.
pub fn derive_envelope_recurrence(rel: &FunctionalRelation) -> Result<EnvelopeRecurrence, EnvelopeError> {
    if rel.kind != RelationKind::Equality {
        return Err(unsupported("only equalities are enveloped"));
    }
    if !rel.domain.is_half_line() {
        return Err(unsupported("arguments of f must be nonnegative"));
    }
    if let Some(v) = rel.variables.iter().find(|v| **v != Var::X) {
        return Err(unsupported(format!("variable `{v}` cannot be eliminated")));
    }
    let (l, r) = (interval(&rel.lhs)?, interval(&rel.rhs)?);
    if ![&l.0, &l.1, &r.0, &r.1].iter().any(|e| e.contains_pivot()) {
        return Err(unsupported("no occurrence of f(x) to isolate"));
    }
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for e in [sub(l.0, r.1), sub(r.0, l.1)] {
        match pivot_bound(&e)? {
            Some((true, bound)) => upper.push(bound),
            Some((false, bound)) => lower.push(bound),
            None => {}
        }
    }
    let (lo_bound, hi_bound) = match (lower.as_slice(), upper.as_slice()) {
        ([lo], [hi]) => (lo.clone(), hi.clone()),
        _ => {
            return Err(unsupported(format!(
                "expected one lower and one upper bound, found {} and {}",
                lower.len(),
                upper.len()
            )))
        }
    };
    let at_one = |e: &Expr| simplify(&e.substitute(Var::X, &Expr::int(1)));
    let (lo_map, hi_map) = (at_one(&lo_bound), at_one(&hi_bound));
    if !homogeneous(&lo_bound, &lo_map) || !homogeneous(&hi_bound, &hi_map) {
        return Err(unsupported("implied bounds are not proportional to x"));
    }
    Ok(EnvelopeRecurrence { lower: lo_map, upper: hi_map, origin: Origin::Derived })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefinementStatus {
    Collapsed,
    Stalled,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementTrace {
    pub states: Vec<LinearEnvelope>,
    pub status: RefinementStatus,
    /// Midpoint of the final envelope when collapsed.
    pub c: Option<Scalar>,
    /// Steps whose envelope was not contained in its predecessor.
    pub trapping_violations: Vec<usize>,
}

impl RefinementTrace {
    pub fn collapsed(&self) -> bool {
        self.status == RefinementStatus::Collapsed
    }

    pub fn last(&self) -> &LinearEnvelope {
        self.states.last().expect("non-empty")
    }

    /// CSV with columns `n, a_n, b_n, width`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "a_n", "b_n", "width"])?;
        for (i, s) in self.states.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                format!("{:?}", s.a.to_f64()),
                format!("{:?}", s.b.to_f64()),
                format!("{:?}", s.width()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn le(x: &Scalar, y: &Scalar) -> bool {
    matches!(x.compare(y), Some(std::cmp::Ordering::Less | std::cmp::Ordering::Equal))
}

/// Iterates both maps simultaneously from `env0`, exactly while the
/// coefficients stay narrower than [`EXACT_BIT_LIMIT`] bits.
pub fn refine(
    rec: &EnvelopeRecurrence,
    env0: &LinearEnvelope,
    tol: f64,
    max_iter: usize,
) -> Result<RefinementTrace, EnvelopeError> {
    let mut states = vec![env0.clone()];
    let mut widths = vec![env0.width()];
    let mut violations = Vec::new();
    let mut status = RefinementStatus::MaxIterations;
    for step in 1..=max_iter {
        let cur = states.last().expect("non-empty");
        if cur.width() <= tol {
            status = RefinementStatus::Collapsed;
            break;
        }
        let k = widths.len() - 1;
        if k >= STALL_WINDOW && widths[k - STALL_WINDOW] - widths[k] <= tol / 10.0 {
            status = RefinementStatus::Stalled;
            break;
        }
        let env = ScalarBinding::new().with(Var::A, cur.a.clone()).with(Var::B, cur.b.clone());
        let eval = |m: &Expr| {
            evaluate_scalar(m, &env)
                .map(|v| v.demote_if_wider(EXACT_BIT_LIMIT))
                .map_err(|source| EnvelopeError::Evaluation { step, source })
        };
        let (a, b) = (eval(&rec.lower)?, eval(&rec.upper)?);
        if !le(&a, &b) {
            return Err(EnvelopeError::OrderViolation { step, a: a.to_f64(), b: b.to_f64() });
        }
        if !(le(&cur.a, &a) && le(&b, &cur.b)) {
            violations.push(step);
        }
        let next = LinearEnvelope { a, b, lower_strict: cur.lower_strict, upper_strict: cur.upper_strict };
        widths.push(next.width());
        states.push(next);
        if step == max_iter && states.last().expect("non-empty").width() <= tol {
            status = RefinementStatus::Collapsed;
        }
    }
    let c = (status == RefinementStatus::Collapsed).then(|| {
        let last = states.last().expect("non-empty");
        last.a.add(&last.b).mul(&Scalar::ratio(1, 2))
    });
    Ok(RefinementTrace { states, status, c, trapping_violations: violations })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeValidation {
    /// `min (f(x) - a*x)` over the grid.
    pub lower_margin: f64,
    /// `min (b*x - f(x))` over the grid.
    pub upper_margin: f64,
    pub valid: bool,
}

/// Checks the envelope against sampled values, with slack `1e-9 * scale`.
pub fn validate_envelope(env: &LinearEnvelope, oracle: &GridFunction) -> EnvelopeValidation {
    let (a, b) = (env.a.to_f64(), env.b.to_f64());
    let (mut lower, mut upper) = (f64::INFINITY, f64::INFINITY);
    for (&x, &v) in oracle.points().iter().zip(oracle.values()) {
        lower = lower.min(v - a * x);
        upper = upper.min(b * x - v);
    }
    let slack = -1e-9 * oracle.scale();
    EnvelopeValidation { lower_margin: lower, upper_margin: upper, valid: lower >= slack && upper >= slack }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ast::Domain;
    use crate::gridfn::Grid;
    use crate::parse::parse_relation;

    fn derive(text: &str, domain: Domain) -> Result<EnvelopeRecurrence, EnvelopeError> {
        derive_envelope_recurrence(&parse_relation(text, domain).unwrap())
    }

    #[test]
    fn derived_maps_print_cleanly() {
        let rec = derive("f(x)+f(f(x)) = 2*x", Domain::PositiveReals).unwrap();
        assert_eq!(rec.lower.to_string(), "2 / (1 + b)");
        assert_eq!(rec.upper.to_string(), "2 / (1 + a)");
        assert_eq!(rec.origin, Origin::Derived);
    }

    #[test]
    fn rejected_shapes() {
        for (text, domain) in [
            ("f(x*y+f(x)) = f(x)*f(y)+x", Domain::PositiveReals),
            ("f(x)+f(f(x)) = 2*x", Domain::Reals),
            ("f(x)^2 = x^2", Domain::PositiveReals),
            ("f(1) = 1", Domain::PositiveReals),
        ] {
            assert!(matches!(derive(text, domain), Err(EnvelopeError::UnsupportedShape(_))), "{text}");
        }
    }

    #[test]
    fn fixed_envelope_collapses_immediately() {
        let rec = EnvelopeRecurrence::parse_user("(b+2)/b", "(a+2)/a").unwrap();
        let t = refine(&rec, &LinearEnvelope::new(Scalar::int(2), Scalar::int(2)).unwrap(), 1e-8, 100).unwrap();
        assert!(t.collapsed() && t.states.len() == 1);
        assert_eq!(t.c, Some(Scalar::int(2)));
    }

    #[test]
    fn wrong_maps_violate_order() {
        let rec = EnvelopeRecurrence::parse_user("b+1", "a").unwrap();
        let env = LinearEnvelope::new(Scalar::int(1), Scalar::int(2)).unwrap();
        assert!(matches!(refine(&rec, &env, 1e-8, 10), Err(EnvelopeError::OrderViolation { step: 1, .. })));
    }

    #[test]
    fn stalls_are_detected() {
        let rec = EnvelopeRecurrence::parse_user("a", "b").unwrap();
        let env = LinearEnvelope::new(Scalar::int(1), Scalar::int(2)).unwrap();
        let t = refine(&rec, &env, 1e-8, 100).unwrap();
        assert_eq!(t.status, RefinementStatus::Stalled);
        assert!(t.c.is_none());
    }

    #[test]
    fn validation_against_identity() {
        let g = Arc::new(Grid::log(1e-3, 1e3, 512).unwrap());
        let id = GridFunction::from_fn(g, |x| x).unwrap();
        let env = |a: Scalar, b: Scalar| LinearEnvelope::new(a, b).unwrap();
        assert!(validate_envelope(&env(Scalar::ratio(2, 3), Scalar::ratio(6, 5)), &id).valid);
        assert!(!validate_envelope(&env(Scalar::ratio(3, 2), Scalar::int(2)), &id).valid);
        assert!(validate_envelope(&env(Scalar::zero(), Scalar::int(1_000_000)), &id).valid);
    }

    #[test]
    fn envelope_invariants() {
        assert!(LinearEnvelope::new(Scalar::int(2), Scalar::int(1)).is_err());
        assert!(LinearEnvelope::new(Scalar::int(-1), Scalar::int(1)).is_err());
        assert!(LinearEnvelope::new(Scalar::zero(), Scalar::zero()).is_err());
    }
}
