//! Recurrences, convergence classification, fixed points and squeezing.

use std::cmp::Ordering;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{Expr, Var};
use crate::eval::{evaluate, evaluate_scalar, Binding, EvalError, NoUnknown, ScalarBinding};
use crate::number::{Scalar, EXACT_BIT_LIMIT};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
pub const DEFAULT_WINDOW: usize = 5;
pub const SCAN_CELLS: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("update map must be f-free and use only {allowed}: `{map}`")]
    InvalidMap { map: String, allowed: &'static str },
    #[error("iterate {step} is not finite: {source}")]
    NonFinite { step: usize, source: EvalError },
    #[error("a trace needs at least {needed} entries, got {got}")]
    TooShort { needed: usize, got: usize },
}

/// One-step update of a scalar or a coupled pair `(a, b)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Recurrence {
    Single { map: Expr, init: Scalar },
    /// `a' = map_a(a, b)`, `b' = map_b(a, b)`, updated simultaneously.
    Coupled { map_a: Expr, map_b: Expr, init: (Scalar, Scalar) },
}

fn check_map(map: &Expr, allowed: &[Var], label: &'static str) -> Result<(), SequenceError> {
    let ok = !map.mentions_unknown()
        && !map.contains_pivot()
        && map.free_variables().iter().all(|v| allowed.contains(v));
    if ok {
        Ok(())
    } else {
        Err(SequenceError::InvalidMap { map: map.to_string(), allowed: label })
    }
}

impl Recurrence {
    /// `a' = map(a)`.
    pub fn single(map: Expr, init: Scalar) -> Result<Self, SequenceError> {
        check_map(&map, &[Var::A], "`a`")?;
        Ok(Recurrence::Single { map, init })
    }

    pub fn coupled(map_a: Expr, map_b: Expr, init: (Scalar, Scalar)) -> Result<Self, SequenceError> {
        check_map(&map_a, &[Var::A, Var::B], "`a, b`")?;
        check_map(&map_b, &[Var::A, Var::B], "`a, b`")?;
        Ok(Recurrence::Coupled { map_a, map_b, init })
    }

    pub fn is_coupled(&self) -> bool {
        matches!(self, Recurrence::Coupled { .. })
    }
}

/// Iterates of one state component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceTrace {
    values: Vec<Scalar>,
}

impl SequenceTrace {
    /// Panics on an empty list.
    pub fn new(values: Vec<Scalar>) -> Self {
        assert!(!values.is_empty(), "a trace has at least one entry");
        SequenceTrace { values }
    }

    pub fn from_f64(values: &[f64]) -> Self {
        Self::new(values.iter().copied().map(Scalar::Approx).collect())
    }

    pub fn values(&self) -> &[Scalar] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> &Scalar {
        self.values.last().expect("non-empty")
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(Scalar::to_f64).collect()
    }
}

/// The iterates of a recurrence; `b` is present for coupled recurrences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub a: SequenceTrace,
    pub b: Option<SequenceTrace>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// CSV with columns `n, a_n[, b_n], gap`; `gap` is the largest component
    /// change and is empty on the first row.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["n", "a_n"];
        if self.b.is_some() {
            header.push("b_n");
        }
        header.push("gap");
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![(i + 1).to_string(), format_f64(self.a.values[i].to_f64())];
            let mut gap = if i > 0 { Some(self.a.values[i].distance(&self.a.values[i - 1])) } else { None };
            if let Some(b) = &self.b {
                row.push(format_f64(b.values[i].to_f64()));
                if i > 0 {
                    let g = b.values[i].distance(&b.values[i - 1]);
                    gap = gap.map(|a| a.max(g));
                }
            }
            row.push(gap.map(format_f64).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn step(map: &Expr, env: &ScalarBinding, n: usize) -> Result<Scalar, SequenceError> {
    evaluate_scalar(map, env)
        .map(|v| v.demote_if_wider(EXACT_BIT_LIMIT))
        .map_err(|source| SequenceError::NonFinite { step: n, source })
}

/// The first `n` states, computed exactly while the iterates stay narrower
/// than [`EXACT_BIT_LIMIT`] bits.
pub fn iterate(rec: &Recurrence, n: usize) -> Result<Trajectory, SequenceError> {
    if n == 0 {
        return Err(SequenceError::TooShort { needed: 1, got: 0 });
    }
    match rec {
        Recurrence::Single { map, init } => {
            let mut values = vec![init.clone()];
            for k in 1..n {
                let env = ScalarBinding::new().with(Var::A, values[k - 1].clone());
                values.push(step(map, &env, k + 1)?);
            }
            Ok(Trajectory { a: SequenceTrace::new(values), b: None })
        }
        Recurrence::Coupled { map_a, map_b, init } => {
            let mut a = vec![init.0.clone()];
            let mut b = vec![init.1.clone()];
            for k in 1..n {
                let env = ScalarBinding::new()
                    .with(Var::A, a[k - 1].clone())
                    .with(Var::B, b[k - 1].clone());
                a.push(step(map_a, &env, k + 1)?);
                b.push(step(map_b, &env, k + 1)?);
            }
            Ok(Trajectory { a: SequenceTrace::new(a), b: Some(SequenceTrace::new(b)) })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Converged,
    MonotoneUnbounded,
    Oscillating,
    Undetermined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Increasing,
    Decreasing,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub classification: Classification,
    pub direction: Direction,
    /// Set only when boundedness is evidenced by convergence.
    pub bounded: bool,
    pub limit: Option<f64>,
    pub iterations: usize,
    /// Larger of the last two gaps.
    pub final_gap: f64,
}

impl ConvergenceReport {
    pub fn converged(&self) -> bool {
        self.classification == Classification::Converged
    }
}

/// Gap at or below round-off of the neighbouring iterate.
fn is_roundoff(gap: f64, at: f64) -> bool {
    gap <= 64.0 * f64::EPSILON * at.abs().max(f64::MIN_POSITIVE)
}

pub fn classify(trace: &SequenceTrace, tol: f64) -> Result<ConvergenceReport, SequenceError> {
    classify_with(trace, tol, DEFAULT_WINDOW)
}

/// Classifies a trace of at least three entries; `window` is the number of
/// recent gaps inspected.
pub fn classify_with(
    trace: &SequenceTrace,
    tol: f64,
    window: usize,
) -> Result<ConvergenceReport, SequenceError> {
    let v = trace.values();
    if v.len() < 3 {
        return Err(SequenceError::TooShort { needed: 3, got: v.len() });
    }
    let window = window.max(2);
    let orders: Vec<Option<Ordering>> = v.windows(2).map(|w| w[1].compare(&w[0])).collect();
    let gaps: Vec<f64> = v.windows(2).map(|w| w[1].distance(&w[0])).collect();
    let n = gaps.len();

    let direction = if orders.iter().all(|o| matches!(o, Some(Ordering::Greater | Ordering::Equal)))
        && orders.contains(&Some(Ordering::Greater))
    {
        Direction::Increasing
    } else if orders.iter().all(|o| matches!(o, Some(Ordering::Less | Ordering::Equal)))
        && orders.contains(&Some(Ordering::Less))
    {
        Direction::Decreasing
    } else {
        Direction::None
    };

    let final_gap = gaps[n - 1].max(gaps[n - 2]);
    let recent_start = n.saturating_sub(window);
    let significant: Vec<f64> = (recent_start..n)
        .filter(|&i| !is_roundoff(gaps[i], v[i + 1].to_f64()))
        .map(|i| gaps[i])
        .collect();
    let settling = significant.windows(2).all(|w| w[1] <= w[0]);

    let classification = if final_gap <= tol && settling {
        Classification::Converged
    } else if direction != Direction::None
        && n >= 2
        && (recent_start..n - 1).all(|i| gaps[i + 1] >= gaps[i] || is_roundoff(gaps[i] - gaps[i + 1], v[i + 1].to_f64()))
        && gaps[n - 1] > 0.0
    {
        Classification::MonotoneUnbounded
    } else if alternates(&orders[n.saturating_sub(window + 1)..]) {
        Classification::Oscillating
    } else {
        Classification::Undetermined
    };
    let converged = classification == Classification::Converged;
    Ok(ConvergenceReport {
        classification,
        direction,
        bounded: converged,
        limit: converged.then(|| trace.last().to_f64()),
        iterations: v.len(),
        final_gap,
    })
}

fn alternates(orders: &[Option<Ordering>]) -> bool {
    orders.len() >= 2
        && orders.iter().all(|o| matches!(o, Some(Ordering::Less | Ordering::Greater)))
        && orders.windows(2).all(|w| w[0] != w[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPoint {
    pub value: f64,
    /// `|l - phi(l)|`
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedPointSet {
    pub roots: Vec<FixedPoint>,
    /// Every scanned point is fixed.
    pub degenerate: bool,
}

impl FixedPointSet {
    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.roots.iter().map(|r| r.value).collect()
    }
}

fn single_variable(map: &Expr) -> Result<Option<Var>, SequenceError> {
    let vars = map.free_variables();
    if vars.len() > 1 || map.mentions_unknown() || map.contains_pivot() {
        return Err(SequenceError::InvalidMap { map: map.to_string(), allowed: "one variable" });
    }
    Ok(vars.into_iter().next())
}

/// Roots of `l - phi(l)` on `[lo, hi]` by a sign-change scan over
/// [`SCAN_CELLS`] cells and bisection; bisection limits with a residual
/// above `root_tol` are poles and are dropped.
pub fn fixed_points(map: &Expr, lo: f64, hi: f64, root_tol: f64) -> Result<FixedPointSet, SequenceError> {
    assert!(lo < hi, "empty search interval");
    let var = single_variable(map)?;
    let g = |l: f64| -> Option<f64> {
        let env = match var {
            Some(v) => Binding::new().with(v, l),
            None => Binding::new(),
        };
        evaluate(map, &env, &NoUnknown).ok().map(|phi| l - phi)
    };
    let h = (hi - lo) / SCAN_CELLS as f64;
    let points: Vec<f64> = (0..=SCAN_CELLS).map(|i| if i == SCAN_CELLS { hi } else { lo + i as f64 * h }).collect();
    let values: Vec<Option<f64>> = points.iter().map(|&l| g(l)).collect();

    let finite: Vec<f64> = values.iter().flatten().copied().collect();
    if !finite.is_empty() && finite.len() == values.len() && finite.iter().all(|r| r.abs() <= root_tol) {
        return Ok(FixedPointSet { roots: Vec::new(), degenerate: true });
    }

    let mut roots: Vec<FixedPoint> = Vec::new();
    let mut push = |value: f64, residual: f64| {
        if residual <= root_tol
            && roots.last().is_none_or(|r: &FixedPoint| (value - r.value).abs() > 1e-9 * (1.0 + value.abs()))
        {
            roots.push(FixedPoint { value, residual });
        }
    };
    for i in 0..SCAN_CELLS {
        let (Some(ga), Some(gb)) = (values[i], values[i + 1]) else { continue };
        if ga == 0.0 {
            push(points[i], 0.0);
            continue;
        }
        if gb == 0.0 {
            if i + 1 == SCAN_CELLS {
                push(points[i + 1], 0.0);
            }
            continue;
        }
        if ga.signum() == gb.signum() {
            continue;
        }
        if let Some((root, residual)) = bisect(&g, points[i], points[i + 1], ga) {
            push(root, residual);
        }
    }
    Ok(FixedPointSet { roots, degenerate: false })
}

fn bisect(g: &impl Fn(f64) -> Option<f64>, mut a: f64, mut b: f64, mut ga: f64) -> Option<(f64, f64)> {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let gm = g(m)?;
        if gm == 0.0 {
            return Some((m, 0.0));
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    let (ra, rb) = (g(a)?.abs(), g(b)?.abs());
    Some(if ra <= rb { (a, ra) } else { (b, rb) })
}

/// Admissibility test for a fixed point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RootConstraint {
    Positive,
    NonNegative,
    Negative,
    Within(f64, f64),
}

impl RootConstraint {
    pub fn admits(self, v: f64) -> bool {
        match self {
            RootConstraint::Positive => v > 0.0,
            RootConstraint::NonNegative => v >= 0.0,
            RootConstraint::Negative => v < 0.0,
            RootConstraint::Within(lo, hi) => lo <= v && v <= hi,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("several fixed points satisfy the constraint: {0:?}")]
    Ambiguous(Vec<f64>),
    #[error("no fixed point satisfies the constraint")]
    NoneSatisfies,
}

pub fn select_fixed_point(set: &FixedPointSet, constraint: RootConstraint) -> Result<f64, SelectError> {
    let admitted: Vec<f64> = set.values().into_iter().filter(|&v| constraint.admits(v)).collect();
    match admitted.as_slice() {
        [] => Err(SelectError::NoneSatisfies),
        [one] => Ok(*one),
        _ => Err(SelectError::Ambiguous(admitted)),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SqueezeError {
    #[error("lower and upper traces differ in length ({lower} vs {upper})")]
    LengthMismatch { lower: usize, upper: usize },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("lower exceeds upper at index {index}")]
    NotBracketing { index: usize },
    #[error("the {0} trace has not converged")]
    NotConverged(&'static str),
    #[error("limits {lower} and {upper} differ by more than the tolerance")]
    LimitsDisagree { lower: f64, upper: f64 },
}

/// Common limit of two bracketing traces.
pub fn squeeze(lower: &SequenceTrace, upper: &SequenceTrace, tol: f64) -> Result<f64, SqueezeError> {
    if lower.len() != upper.len() {
        return Err(SqueezeError::LengthMismatch { lower: lower.len(), upper: upper.len() });
    }
    if let Some(index) = lower
        .values()
        .iter()
        .zip(upper.values())
        .position(|(l, u)| !matches!(l.compare(u), Some(Ordering::Less | Ordering::Equal)))
    {
        return Err(SqueezeError::NotBracketing { index });
    }
    let lo = classify(lower, tol)?;
    let hi = classify(upper, tol)?;
    let l = lo.limit.ok_or(SqueezeError::NotConverged("lower"))?;
    let u = hi.limit.ok_or(SqueezeError::NotConverged("upper"))?;
    if (u - l).abs() > tol {
        return Err(SqueezeError::LimitsDisagree { lower: l, upper: u });
    }
    Ok(0.5 * l + 0.5 * u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_with, Dialect};

    fn map(text: &str) -> Expr {
        parse_with(text, &Dialect::MAP).unwrap()
    }

    #[test]
    fn identity_map_repeats() {
        let rec = Recurrence::single(map("a"), Scalar::ratio(7, 3)).unwrap();
        let t = iterate(&rec, 10).unwrap();
        assert!(t.a.values().iter().all(|v| *v == Scalar::ratio(7, 3)));
        let r = classify(&t.a, 1e-10).unwrap();
        assert!(r.converged());
        assert_eq!(r.direction, Direction::None);
    }

    #[test]
    fn progression_is_unbounded() {
        let t = SequenceTrace::new((1..=20).map(Scalar::int).collect());
        let r = classify(&t, 1e-10).unwrap();
        assert_eq!(r.classification, Classification::MonotoneUnbounded);
        assert_eq!(r.direction, Direction::Increasing);
        assert!(r.limit.is_none());
    }

    #[test]
    fn alternating_trace_oscillates() {
        let t = SequenceTrace::from_f64(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        assert_eq!(classify(&t, 1e-10).unwrap().classification, Classification::Oscillating);
    }

    #[test]
    fn slow_convergence_is_undetermined() {
        let t = SequenceTrace::from_f64(&(1..50).map(|n| 1.0 / n as f64).collect::<Vec<_>>());
        assert_eq!(classify(&t, 1e-10).unwrap().classification, Classification::Undetermined);
    }

    #[test]
    fn pole_is_reported() {
        let rec = Recurrence::single(map("1/(a-1)"), Scalar::int(2)).unwrap();
        assert!(matches!(iterate(&rec, 5), Err(SequenceError::NonFinite { step: 3, .. })));
    }

    #[test]
    fn maps_are_validated() {
        assert!(Recurrence::single(map("a+b"), Scalar::int(1)).is_err());
        assert!(Recurrence::single(Expr::apply(Expr::var(Var::A)), Scalar::int(1)).is_err());
    }

    #[test]
    fn fixed_points_with_pole() {
        let set = fixed_points(&map("2-4/(a+3)"), -10.0, 10.0, 1e-12).unwrap();
        let v = set.values();
        assert_eq!(v.len(), 2);
        assert!((v[0] + 2.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
        assert_eq!(select_fixed_point(&set, RootConstraint::Positive), Ok(v[1]));
    }

    #[test]
    fn identity_is_degenerate() {
        let set = fixed_points(&map("a"), -1.0, 1.0, 1e-12).unwrap();
        assert!(set.degenerate && set.is_empty());
    }

    #[test]
    fn ratio_map_fixed_point() {
        let set = fixed_points(&map("a/(2-a)"), 0.5, 1.9, 1e-12).unwrap();
        assert_eq!(set.roots.len(), 1);
        assert!((set.roots[0].value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn selection_errors() {
        let set = fixed_points(&map("a^2+5*a+3"), -10.0, 10.0, 1e-12).unwrap();
        let v = set.values();
        assert!((v[0] + 3.0).abs() < 1e-9 && (v[1] + 1.0).abs() < 1e-9);
        assert_eq!(select_fixed_point(&set, RootConstraint::Positive), Err(SelectError::NoneSatisfies));
        assert!(matches!(
            select_fixed_point(&set, RootConstraint::Negative),
            Err(SelectError::Ambiguous(_))
        ));
    }

    #[test]
    fn squeeze_examples() {
        let c = SequenceTrace::new(vec![Scalar::ratio(3, 2); 5]);
        assert_eq!(squeeze(&c, &c, 1e-10), Ok(1.5));
        let n = 200_000;
        let lo = SequenceTrace::from_f64(&(1..=n).map(|k| 1.0 - 1.0 / k as f64).collect::<Vec<_>>());
        let hi = SequenceTrace::from_f64(&(1..=n).map(|k| 1.0 + 1.0 / k as f64).collect::<Vec<_>>());
        let l = squeeze(&lo, &hi, 1e-4).unwrap();
        assert!((l - 1.0).abs() < 1e-4);
        assert_eq!(squeeze(&hi, &lo, 1e-4), Err(SqueezeError::NotBracketing { index: 0 }));
    }

    #[test]
    fn csv_export() {
        let rec = Recurrence::coupled(map("(b+2)/b"), map("(a+2)/a"), (Scalar::int(1), Scalar::int(3)))
            .unwrap();
        let mut out = Vec::new();
        iterate(&rec, 3).unwrap().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,a_n,b_n,gap");
        assert_eq!(lines[1], "1,1.0,3.0,");
        assert!(lines[2].starts_with("2,1.66"));
    }
}
