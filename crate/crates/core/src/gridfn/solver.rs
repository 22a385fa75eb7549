//! Damped Picard iteration for a functional equation on a grid.
//!
//! The relation is specialized to the single variable `x` and solved for one
//! occurrence of `f(x)`, the pivot:
//!
//! * direct form: the leftmost `f(x)` not nested in another application
//!   enters the relation affinely, `alpha * f(x) + beta = 0`, so
//!   `T(f)(x) = -beta / alpha`;
//! * inverted form: one side is `f(A)` with the pivot inside `A`, so
//!   `A = f^-1(other side)` is solved for the pivot instead.
//!
//! Everything except the pivot is evaluated with the current iterate.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::{GridError, GridFunction, Spacing};
use crate::ast::{Expr, FunctionalRelation, RelationKind, Var};
use crate::eval::{evaluate, Binding, EvalError};
use crate::isolate::{affine_in_pivot, div, is_one, is_zero, neg, sub};

pub const DEFAULT_DAMPING: f64 = 0.5;
pub const DEFAULT_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
/// Consecutive norm increases treated as divergence.
pub const DIVERGENCE_RUN: usize = 50;
/// Norm history inspected for oscillation.
pub const OSCILLATION_WINDOW: usize = 8;
/// Positivity floor relative to the iterate's scale.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("relation cannot be solved for a pivot occurrence of f(x): {0}")]
    NotSolvableForPivot(String),
    #[error("update norm grew for {DIVERGENCE_RUN} consecutive iterations (last {norm:e})")]
    Diverged { iterations: usize, norm: f64 },
    #[error("evaluation failed at x = {x}: {source}")]
    Evaluation { x: f64, source: EvalError },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("damping must lie in (0, 1], got {0}")]
    BadDamping(f64),
}

/// Values substituted for the auxiliary variables `y` and `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Substitution {
    pairs: Vec<(Var, Expr)>,
}

impl Default for Substitution {
    /// `y := x`, `z := x`.
    fn default() -> Self {
        Substitution { pairs: vec![(Var::Y, Expr::var(Var::X)), (Var::Z, Expr::var(Var::X))] }
    }
}

impl Substitution {
    /// Explicit pairs take precedence over the `:= x` defaults.
    pub fn new(pairs: Vec<(Var, Expr)>) -> Self {
        let mut out = Substitution { pairs };
        for v in [Var::Y, Var::Z] {
            if !out.pairs.iter().any(|(w, _)| *w == v) {
                out.pairs.push((v, Expr::var(Var::X)));
            }
        }
        out
    }

    pub fn apply(&self, e: &Expr) -> Expr {
        self.pairs.iter().fold(e.clone(), |acc, (v, with)| acc.substitute(*v, with))
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.pairs.iter().map(|(v, e)| format!("{v} := {e}")).collect();
        f.write_str(&parts.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub substitution: Substitution,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            damping: DEFAULT_DAMPING,
            tol: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITERATIONS,
            substitution: Substitution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Damping in effect at the end, after any halving.
    pub damping: f64,
    /// `max |f_{k+1} - f_k| / max |f_{k+1}|` of the last step.
    pub update_norm: f64,
    pub converged: bool,
    pub clamps: usize,
    pub extrapolations: usize,
    /// The solved-for update `T(f)(x)`.
    pub update: String,
    pub substitution: String,
}

#[derive(Clone, Debug)]
enum Update {
    /// `f(x) = -beta / alpha`
    Direct { alpha: Expr, beta: Expr },
    /// `f(x) = (f^-1(target) - beta) / alpha`
    Inverted { alpha: Expr, beta: Expr, target: Expr },
}

impl fmt::Display for Update {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Update::Direct { alpha, beta } => match div(neg(beta.clone()), alpha.clone()) {
                Some(e) => write!(f, "f(x) <- {e}"),
                None => write!(f, "f(x) <- -({beta}) / 0"),
            },
            Update::Inverted { alpha, beta, target } => {
                let pre = format!("f^-1({target})");
                let num = match beta {
                    b if is_zero(b) => pre,
                    Expr::Neg(b) => format!("{pre} + {b}"),
                    b => format!("{pre} - ({b})"),
                };
                if is_one(alpha) {
                    write!(f, "f(x) <- {num}")
                } else {
                    write!(f, "f(x) <- ({num}) / ({alpha})")
                }
            }
        }
    }
}

/// Replaces the leftmost `f(x)` that is not nested in an application.
fn replace_top_level_pivot(e: &Expr) -> Option<Expr> {
    if e.is_f_of_x() {
        return Some(Expr::Pivot);
    }
    match e {
        Expr::Apply(_) | Expr::Deriv(_) => None,
        _ => {
            let mut done = false;
            let out = e.map_children(|c| {
                if done {
                    return c.clone();
                }
                match replace_top_level_pivot(c) {
                    Some(r) => {
                        done = true;
                        r
                    }
                    None => c.clone(),
                }
            });
            done.then_some(out)
        }
    }
}

fn derive_update(lhs: &Expr, rhs: &Expr) -> Option<Update> {
    for (side, other, on_left) in [(lhs, rhs, true), (rhs, lhs, false)] {
        if let Some(with_pivot) = replace_top_level_pivot(side) {
            let (l, r) = if on_left { (with_pivot, other.clone()) } else { (other.clone(), with_pivot) };
            let (alpha, beta) = affine_in_pivot(&sub(l, r))?;
            return Some(Update::Direct { alpha, beta });
        }
    }
    for (side, other) in [(lhs, rhs), (rhs, lhs)] {
        if let Expr::Apply(inner) = side {
            if let Some(with_pivot) = replace_top_level_pivot(inner) {
                let (alpha, beta) = affine_in_pivot(&with_pivot)?;
                return Some(Update::Inverted { alpha, beta, target: other.clone() });
            }
        }
    }
    None
}

fn evaluate_update(update: &Update, x: f64, f: &GridFunction) -> Result<f64, SolveError> {
    let env = Binding::new().with(Var::X, x);
    let eval = |e: &Expr| evaluate(e, &env, f).map_err(|source| SolveError::Evaluation { x, source });
    match update {
        Update::Direct { alpha, beta } => {
            let a = eval(alpha)?;
            if a == 0.0 {
                return Err(SolveError::Evaluation { x, source: EvalError::NonFinite });
            }
            Ok(-eval(beta)? / a)
        }
        Update::Inverted { alpha, beta, target } => {
            let a = eval(alpha)?;
            if a == 0.0 {
                return Err(SolveError::Evaluation { x, source: EvalError::NonFinite });
            }
            let y = eval(target)?;
            let pre = f.inverse(y).map_err(|_| SolveError::Evaluation { x, source: EvalError::Domain { arg: y } })?;
            Ok((pre - eval(beta)?) / a)
        }
    }
}

fn alternating(norms: &[f64]) -> bool {
    let d: Vec<f64> = norms.windows(2).map(|w| w[1] - w[0]).collect();
    d.len() + 1 >= OSCILLATION_WINDOW
        && d.iter().all(|v| *v != 0.0)
        && d.windows(2).all(|w| w[0].signum() != w[1].signum())
}

/// Iterates `f <- (1 - w) f + w T(f)` from `init` until the update norm is
/// at most `opts.tol`. Running out of iterations is reported, not an error.
pub fn solve_fixed_point(
    rel: &FunctionalRelation,
    init: &GridFunction,
    opts: &SolveOptions,
) -> Result<(GridFunction, SolveReport), SolveError> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(SolveError::BadDamping(opts.damping));
    }
    if rel.kind != RelationKind::Equality || rel.mentions_derivative() {
        return Err(SolveError::NotSolvableForPivot("only equalities without f' are solved".into()));
    }
    let lhs = opts.substitution.apply(&rel.lhs);
    let rhs = opts.substitution.apply(&rel.rhs);
    if lhs.free_variables().union(&rhs.free_variables()).any(|v| *v != Var::X) {
        return Err(SolveError::NotSolvableForPivot(format!(
            "variables other than x remain after {}",
            opts.substitution
        )));
    }
    let update = derive_update(&lhs, &rhs)
        .ok_or_else(|| SolveError::NotSolvableForPivot(format!("{lhs} = {rhs}")))?;

    let grid: Arc<_> = Arc::clone(init.grid());
    let positive = grid.spacing() == Spacing::Log || rel.domain.is_half_line();
    let mut current = init.clone();
    current.reset_extrapolations();
    let mut damping = opts.damping;
    let mut report = SolveReport {
        iterations: 0,
        damping,
        update_norm: f64::INFINITY,
        converged: false,
        clamps: 0,
        extrapolations: 0,
        update: update.to_string(),
        substitution: opts.substitution.to_string(),
    };
    let mut norms: Vec<f64> = Vec::new();
    let mut rising = 0;

    while report.iterations < opts.max_iter {
        let old = current.values();
        let floor = POSITIVITY_FLOOR * current.scale();
        let mut next = Vec::with_capacity(old.len());
        for (&x, &v) in grid.points().iter().zip(old) {
            let t = evaluate_update(&update, x, &current)?;
            let mut w = (1.0 - damping) * v + damping * t;
            if positive && w < floor {
                w = floor;
                report.clamps += 1;
            }
            next.push(w);
        }
        report.extrapolations += current.extrapolation_count();
        let diff = old.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = next.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        let norm = diff / scale;
        current = GridFunction::new(Arc::clone(&grid), next)?;
        report.iterations += 1;

        rising = match norms.last() {
            Some(&prev) if norm > prev => rising + 1,
            _ => 0,
        };
        norms.push(norm);
        report.update_norm = norm;
        if norm <= opts.tol {
            report.converged = true;
            break;
        }
        if rising >= DIVERGENCE_RUN {
            return Err(SolveError::Diverged { iterations: report.iterations, norm });
        }
        if norms.len() >= OSCILLATION_WINDOW && alternating(&norms[norms.len() - OSCILLATION_WINDOW..]) {
            damping /= 2.0;
            norms.clear();
            rising = 0;
        }
    }
    report.damping = damping;
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Domain;
    use crate::gridfn::Grid;
    use crate::parse::parse_relation;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::log(1e-3, 1e3, 512).unwrap())
    }

    #[test]
    fn known_solution_is_fixed() {
        let rel = parse_relation("f(x)+f(f(x)) = 2*x", Domain::PositiveReals).unwrap();
        let init = GridFunction::from_fn(grid(), |x| x).unwrap();
        let (_, r) = solve_fixed_point(&rel, &init, &SolveOptions::default()).unwrap();
        assert!(r.converged && r.iterations <= 2 && r.update_norm < 1e-14, "{r:?}");
    }

    #[test]
    fn direct_form_from_double() {
        let rel = parse_relation("f(x)+f(f(x)) = 2*x", Domain::PositiveReals).unwrap();
        let init = GridFunction::from_fn(grid(), |x| 2.0 * x).unwrap();
        let (f, r) = solve_fixed_point(&rel, &init, &SolveOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        for (&x, &v) in f.points().iter().zip(f.values()) {
            assert!((v / x - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn inverted_form() {
        let rel = parse_relation("f(f(x)-x) = 2*x", Domain::NonNegReals).unwrap();
        let init = GridFunction::from_fn(grid(), |x| 3.0 * x).unwrap();
        let (f, r) = solve_fixed_point(&rel, &init, &SolveOptions::default()).unwrap();
        assert!(r.converged && r.update.starts_with("f(x) <- f^-1("), "{r:?}");
        assert!((f.value_at(5.0).unwrap() - 10.0).abs() < 1e-8);
    }

    #[test]
    fn unsolvable_shapes() {
        let rel = parse_relation("f(x)^2 = x", Domain::PositiveReals).unwrap();
        let init = GridFunction::from_fn(grid(), |x| x).unwrap();
        assert!(matches!(
            solve_fixed_point(&rel, &init, &SolveOptions::default()),
            Err(SolveError::NotSolvableForPivot(_))
        ));
        let opts = SolveOptions { damping: 0.0, ..SolveOptions::default() };
        assert_eq!(solve_fixed_point(&rel, &init, &opts).unwrap_err(), SolveError::BadDamping(0.0));
    }

    #[test]
    fn substitution_specializes_y() {
        let rel = parse_relation("f(x*y+f(x)) = f(x)*f(y)+x", Domain::PositiveReals).unwrap();
        let init = GridFunction::from_fn(grid(), |x| x).unwrap();
        let (_, r) = solve_fixed_point(&rel, &init, &SolveOptions::default()).unwrap();
        assert!(r.substitution.contains("y := x"));
        assert!(r.update_norm < 1e-12, "{r:?}");
    }
}
