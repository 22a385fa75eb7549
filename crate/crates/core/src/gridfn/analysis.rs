//! Suprema, witness sequences, one-sided limits and derivative checks.

use serde::Serialize;
use thiserror::Error;

use super::GridFunction;
use crate::ast::{FunctionalRelation, RelationKind, Var};
use crate::eval::{residual_parts, Binding, EvalError, Interpretation};

/// Number of samples used by the tail extrapolations.
pub const TAIL_POINTS: usize = 8;
/// Number of samples inspected for local monotonicity.
pub const MONOTONE_POINTS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("window [{0}, {1}] contains no grid point")]
    EmptyWindow(f64, f64),
    #[error("witness count must be at least 1")]
    NoWitnesses,
    #[error("{0} is not an interior grid location")]
    BoundaryPoint(f64),
    #[error("samples near {0} are not monotone")]
    NotMonotoneNearPoint(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Functional {
    F,
    FOverX,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupInfReport {
    pub sup: f64,
    pub inf: f64,
    pub argmax: f64,
    pub argmin: f64,
    pub window: (f64, f64),
}

fn functional_values(gf: &GridFunction, functional: Functional) -> Vec<f64> {
    gf.points()
        .iter()
        .zip(gf.values())
        .map(|(&x, &v)| match functional {
            Functional::F => v,
            Functional::FOverX => v / x,
        })
        .collect()
}

/// Maximum and minimum over the grid points in `[w_lo, w_hi]`; ties go to
/// the leftmost point.
pub fn sup_inf(gf: &GridFunction, functional: Functional, window: (f64, f64)) -> Result<SupInfReport, AnalysisError> {
    let values = functional_values(gf, functional);
    let mut best: Option<(usize, usize)> = None;
    for (i, &x) in gf.points().iter().enumerate() {
        if x < window.0 || x > window.1 {
            continue;
        }
        best = Some(match best {
            None => (i, i),
            Some((hi, lo)) => (
                if values[i] > values[hi] { i } else { hi },
                if values[i] < values[lo] { i } else { lo },
            ),
        });
    }
    let (hi, lo) = best.ok_or(AnalysisError::EmptyWindow(window.0, window.1))?;
    let p = gf.points();
    Ok(SupInfReport { sup: values[hi], inf: values[lo], argmax: p[hi], argmin: p[lo], window })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitnessSequence {
    pub sup: f64,
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Some tolerance fell below the value spread next to the grid maximum;
    /// from there on every witness is the maximiser.
    pub exhausted: bool,
}

/// Points `a_n` with `f(a_n) >= S - eps_n`, `eps_1 = scale` and
/// `eps_n = eps_{n-1} / 10`. Each `a_n` has the smallest value admitted at
/// its tolerance, so the values are non-decreasing.
pub fn sup_witness_sequence(gf: &GridFunction, m: usize) -> Result<WitnessSequence, AnalysisError> {
    if m == 0 {
        return Err(AnalysisError::NoWitnesses);
    }
    let v = gf.values();
    let scale = gf.scale();
    let top = (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best });
    let sup = v[top];
    let neighbours = [top.checked_sub(1), (top + 1 < v.len()).then_some(top + 1)];
    let resolution = neighbours
        .iter()
        .flatten()
        .map(|&j| sup - v[j])
        .fold(f64::EPSILON * scale, f64::max);

    let mut out = WitnessSequence { sup, points: Vec::new(), values: Vec::new(), epsilons: Vec::new(), exhausted: false };
    let mut eps = scale;
    for _ in 0..m {
        out.exhausted |= eps < resolution;
        let threshold = sup - eps;
        let pick = (0..v.len())
            .filter(|&i| v[i] >= threshold)
            .fold(top, |best, i| if v[i] < v[best] { i } else { best });
        out.points.push(gf.points()[pick]);
        out.values.push(v[pick]);
        out.epsilons.push(eps);
        eps /= 10.0;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "at", content = "x")]
pub enum LimitLocation {
    Point(f64, Side),
    ZeroPlus,
    Infinity,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitEstimate {
    pub location: LimitLocation,
    /// Infinite when `unbounded` is set.
    pub value: f64,
    pub uncertainty: f64,
    pub monotone_consistent: bool,
    pub unbounded: bool,
}

/// Increasing (`1`), decreasing (`-1`) or neither (`0`), non-strictly.
fn monotone_sign(values: &[f64]) -> i32 {
    if values.windows(2).all(|w| w[1] >= w[0]) {
        1
    } else if values.windows(2).all(|w| w[1] <= w[0]) {
        -1
    } else {
        0
    }
}

/// One-sided limit at `x0` from the nearest samples on `side`.
///
/// The estimate extrapolates the nearest pair of samples on `side` to `x0`
/// and is clamped to the bracket a monotone function must respect: for
/// increasing `f` the right limit lies between the samples at or left of
/// `x0` and the samples right of it. `monotone_consistent` records whether
/// the raw extrapolant lay inside that bracket up to one sample step, and
/// `uncertainty` is the width of the bracket.
pub fn one_sided_limit(gf: &GridFunction, x0: f64, side: Side) -> Result<LimitEstimate, AnalysisError> {
    let p = gf.points();
    let v = gf.values();
    let n = p.len();
    let left_end = p.partition_point(|&x| x < x0);
    let right_start = p.partition_point(|&x| x <= x0);
    let node = (left_end < right_start).then_some(left_end);
    // Nearest and second-nearest samples on `side`, and the nearest sample
    // bounding the limit from the other side (the node at x0 if there is one).
    let picked = match side {
        Side::Left if left_end >= 2 => node
            .or((right_start < n).then_some(right_start))
            .map(|far| (left_end - 1, left_end - 2, far)),
        Side::Right if right_start + 2 <= n => node
            .or(left_end.checked_sub(1))
            .map(|far| (right_start, right_start + 1, far)),
        _ => None,
    };
    let (near, next, far) = match picked {
        Some(t) if x0.is_finite() => t,
        _ => return Err(AnalysisError::BoundaryPoint(x0)),
    };

    let half = MONOTONE_POINTS / 2;
    let lo = left_end.saturating_sub(half);
    let hi = (right_start + half).min(n);
    let dir = monotone_sign(&v[lo..hi]);
    if dir == 0 {
        return Err(AnalysisError::NotMonotoneNearPoint(x0));
    }
    let s = f64::from(dir);

    let c = |x: f64| gf.grid().coord(x);
    let (w_near, w_next) = (gf.value_coord(v[near]), gf.value_coord(v[next]));
    let slope = (w_next - w_near) / (c(p[next]) - c(p[near]));
    let raw = gf.value_from_coord(w_near + slope * (c(x0) - c(p[near])));

    // Bracket in the increasing orientation: [s*lower, s*upper].
    let (a, b) = match side {
        Side::Left => (s * v[near], s * v[far]),
        Side::Right => (s * v[far], s * v[near]),
    };
    let width = b - a;
    // One interpolation step of slack: the secant misses curvature by less.
    let step_tol = (v[near] - v[next]).abs().max(1e-12 * v[near].abs().max(v[far].abs()).max(1.0));
    let consistent = s * raw >= a - step_tol && s * raw <= b + step_tol;
    let value = s * (s * raw).clamp(a, b);
    Ok(LimitEstimate {
        location: LimitLocation::Point(x0, side),
        value,
        uncertainty: width.abs(),
        monotone_consistent: consistent,
        unbounded: false,
    })
}

struct Tail {
    value: f64,
    spread: f64,
    unbounded: bool,
}

fn negligible(d: f64, at: f64) -> bool {
    d.abs() <= 64.0 * f64::EPSILON * at.abs().max(f64::MIN_POSITIVE)
}

/// Limit of a sequence sampled at geometrically spaced abscissae, ordered
/// towards the limit point, assuming geometrically shrinking differences.
fn geometric_tail(s: &[f64]) -> Tail {
    let d: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
    let mut estimates = Vec::new();
    let mut diverging = 0;
    for k in 0..d.len() - 1 {
        let at = s[k + 2];
        let (d0, d1) = (d[k], d[k + 1]);
        if negligible(d1, at) {
            estimates.push(at);
            continue;
        }
        if negligible(d0, at) {
            continue;
        }
        let r = d1 / d0;
        if r.abs() >= 1.0 {
            diverging += 1;
            continue;
        }
        estimates.push(at + d1 * r / (1.0 - r));
    }
    let last_ratio_diverges = {
        let (d0, d1) = (d[d.len() - 2], d[d.len() - 1]);
        !negligible(d1, s[s.len() - 1]) && (negligible(d0, s[s.len() - 1]) || (d1 / d0).abs() >= 1.0)
    };
    if estimates.is_empty() || (last_ratio_diverges && diverging >= d.len() / 2) {
        let sign = d[d.len() - 1].signum();
        return Tail { value: sign * f64::INFINITY, spread: f64::INFINITY, unbounded: true };
    }
    let max = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = estimates.iter().copied().fold(f64::INFINITY, f64::min);
    Tail { value: *estimates.last().expect("non-empty"), spread: max - min, unbounded: false }
}

fn tail_estimate(samples: &[f64], location: LimitLocation) -> LimitEstimate {
    let tail = geometric_tail(samples);
    let dir = monotone_sign(samples);
    let nearest = samples[samples.len() - 1];
    let slack = tail.spread + 1e-12 * nearest.abs().max(1.0);
    let consistent = !tail.unbounded
        && match dir {
            1 => tail.value >= nearest - slack,
            -1 => tail.value <= nearest + slack,
            _ => false,
        };
    LimitEstimate {
        location,
        value: tail.value,
        uncertainty: tail.spread,
        monotone_consistent: consistent,
        unbounded: tail.unbounded,
    }
}

fn towards_zero(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().take(TAIL_POINTS).rev().collect()
}

/// `lim f(x)` as `x -> 0+` from the lowest [`TAIL_POINTS`] samples.
///
/// On a log grid the differences of `L + C x^p` shrink geometrically towards
/// zero, so the remaining tail is summed as a geometric series; the spread of
/// the estimates from successive triples is the uncertainty.
pub fn limit_at_zero(gf: &GridFunction) -> LimitEstimate {
    tail_estimate(&towards_zero(gf.values().to_vec()), LimitLocation::ZeroPlus)
}

/// `lim f(x)/x` as `x -> 0+`.
pub fn ratio_limit_at_zero(gf: &GridFunction) -> LimitEstimate {
    let ratios = functional_values(gf, Functional::FOverX);
    tail_estimate(&towards_zero(ratios), LimitLocation::ZeroPlus)
}

/// `lim x/f(x)` as `x -> infinity` from the top [`TAIL_POINTS`] samples.
pub fn tail_ratio(gf: &GridFunction) -> LimitEstimate {
    let n = gf.len();
    let h: Vec<f64> = gf.points()[n - TAIL_POINTS..]
        .iter()
        .zip(&gf.values()[n - TAIL_POINTS..])
        .map(|(&x, &v)| x / v)
        .collect();
    tail_estimate(&h, LimitLocation::Infinity)
}

/// `f'(x0)` by central differences in the grid coordinates.
pub fn derivative(gf: &GridFunction, x0: f64) -> Result<f64, AnalysisError> {
    gf.derivative(x0).map_err(|_| AnalysisError::BoundaryPoint(x0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DifferentialResidual {
    /// Largest `|lhs - rhs| / (1 + |lhs| + |rhs|)`.
    pub max_scaled: f64,
    /// Largest `|lhs - rhs|`.
    pub max_abs: f64,
    /// Abscissa of the largest scaled residual.
    pub worst_x: f64,
}

/// Residual of a relation in `x` involving `f` and `f'` at every interior
/// grid point.
pub fn differential_residual(gf: &GridFunction, rel: &FunctionalRelation) -> Result<DifferentialResidual, AnalysisError> {
    let p = gf.points();
    let mut out = DifferentialResidual { max_scaled: 0.0, max_abs: 0.0, worst_x: p[1] };
    for &x in &p[1..p.len() - 1] {
        let parts = residual_parts(rel, &Binding::new().with(Var::X, x), gf)?;
        let raw = match rel.kind {
            RelationKind::Equality => parts.residual.abs(),
            RelationKind::GreaterEqual => parts.residual,
        };
        let scaled = parts.scaled();
        out.max_abs = out.max_abs.max(raw);
        if scaled > out.max_scaled {
            out.max_scaled = scaled;
            out.worst_x = x;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ast::Domain;
    use crate::gridfn::Grid;
    use crate::parse::parse_relation;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::log(1e-3, 1e3, 512).unwrap())
    }

    fn gf(f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::from_fn(grid(), f).unwrap()
    }

    #[test]
    fn sup_inf_of_ratios() {
        let r = sup_inf(&gf(|x| 2.0 * x), Functional::FOverX, (0.0, f64::INFINITY)).unwrap();
        assert!((r.sup - 2.0).abs() < 1e-15 && (r.inf - 2.0).abs() < 1e-15);
        let r = sup_inf(&gf(|x| x), Functional::F, (1.0, 10.0)).unwrap();
        assert!(r.argmin >= 1.0 && r.argmax <= 10.0 && r.inf <= r.sup);
        assert!(matches!(
            sup_inf(&gf(|x| x), Functional::F, (2e3, 3e3)),
            Err(AnalysisError::EmptyWindow(..))
        ));
    }

    #[test]
    fn witnesses_of_increasing_function() {
        let g = Arc::new(Grid::log(1.0, 100.0, 64).unwrap());
        let f = GridFunction::from_fn(g, |x| x).unwrap();
        let w = sup_witness_sequence(&f, 3).unwrap();
        assert_eq!(w.sup, 100.0);
        assert!(w.points.windows(2).all(|p| p[1] >= p[0]));
        assert!(*w.points.last().unwrap() > 90.0);
        assert!(w.values.windows(2).all(|v| v[1] >= v[0]));
    }

    #[test]
    fn witness_schedule_exhausts() {
        let w = sup_witness_sequence(&gf(|x| x), 40).unwrap();
        assert!(w.exhausted && w.points.len() == 40);
        assert_eq!(*w.points.last().unwrap(), 1e3);
        let c = sup_witness_sequence(&gf(|_| 3.0), 3).unwrap();
        assert!(c.values.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn continuous_point_limit() {
        let e = one_sided_limit(&gf(|x| x), 1.0, Side::Right).unwrap();
        assert!((e.value - 1.0).abs() < 1e-9 && e.monotone_consistent);
    }

    #[test]
    fn jump_limits() {
        let g = Arc::new(Grid::log(1e-2, 1e2, 401).unwrap());
        let f = GridFunction::from_fn(g, |x| if x < 1.0 { x } else { x + 1.0 }).unwrap();
        let left = one_sided_limit(&f, 1.0, Side::Left).unwrap();
        let right = one_sided_limit(&f, 1.0, Side::Right).unwrap();
        assert!((left.value - 1.0).abs() < 1e-3, "{left:?}");
        assert!((right.value - 2.0).abs() < 1e-3, "{right:?}");
        assert!(right.value >= f.value_at(1.0).unwrap() - 1e-12);
    }

    #[test]
    fn limit_requires_monotone_samples() {
        let f = gf(|x| 2.0 + (50.0 * x.ln()).sin());
        assert!(matches!(
            one_sided_limit(&f, 1.0, Side::Left),
            Err(AnalysisError::NotMonotoneNearPoint(_))
        ));
        assert!(matches!(
            one_sided_limit(&gf(|x| x), 1e3, Side::Right),
            Err(AnalysisError::BoundaryPoint(_))
        ));
    }

    #[test]
    fn limits_at_zero() {
        let id = limit_at_zero(&gf(|x| x));
        assert!(id.value.abs() < 1e-12 && id.uncertainty < 1e-12 && id.monotone_consistent);
        let shifted = limit_at_zero(&gf(|x| x + 1.0));
        assert!((shifted.value - 1.0).abs() < 1e-9);
        assert_eq!(limit_at_zero(&gf(|_| 2.0)).value, 2.0);
        let ratio = ratio_limit_at_zero(&gf(|x| 2.0 * x));
        assert!((ratio.value - 2.0).abs() < 1e-12);
        let blowup = ratio_limit_at_zero(&gf(|x| x + 1.0));
        assert!(blowup.unbounded && blowup.value == f64::INFINITY);
    }

    #[test]
    fn tail_ratios() {
        assert!((tail_ratio(&gf(|x| x)).value - 1.0).abs() < 1e-12);
        assert!((tail_ratio(&gf(|x| 2.0 * x)).value - 0.5).abs() < 1e-12);
        let sub = tail_ratio(&gf(|x| x + x.sqrt()));
        assert!((sub.value - 1.0).abs() < 1e-2, "{sub:?}");
    }

    #[test]
    fn derivative_examples() {
        assert!((derivative(&gf(|x| x), 3.3).unwrap() - 1.0).abs() < 1e-6);
        assert!((derivative(&gf(|x| 2.0 * x), 0.07).unwrap() - 2.0).abs() < 1e-6);
        assert!(matches!(derivative(&gf(|x| x), 1e3), Err(AnalysisError::BoundaryPoint(_))));
    }

    #[test]
    fn differential_residuals() {
        let rel = parse_relation("f'(x)*f(x)^3 = x^3", Domain::PositiveReals).unwrap();
        assert!(differential_residual(&gf(|x| x), &rel).unwrap().max_scaled <= 1e-6);
        let rel = parse_relation("f(x) = f(x/2) + f'(x)*x/2", Domain::PositiveReals).unwrap();
        assert!(differential_residual(&gf(|x| 3.0 * x), &rel).unwrap().max_scaled <= 1e-8);
        let sq = differential_residual(&gf(|x| x * x), &rel).unwrap();
        assert!(sq.max_scaled > 0.1);
    }
}
