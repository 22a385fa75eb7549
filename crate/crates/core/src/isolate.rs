//! Constant-folding constructors, sign analysis and pivot isolation.
//!
//! Signs assume every variable, the pivot and every application of `f` are
//! strictly positive, which holds on half-line domains with positive
//! envelope coefficients.

use crate::ast::{BinOp, Expr};
use crate::number::Scalar;

fn as_const(e: &Expr) -> Option<&Scalar> {
    match e {
        Expr::Const(c) => Some(c),
        _ => None,
    }
}

pub(crate) fn is_zero(e: &Expr) -> bool {
    as_const(e).is_some_and(Scalar::is_zero)
}

pub(crate) fn is_one(e: &Expr) -> bool {
    as_const(e).is_some_and(Scalar::is_one)
}

pub(crate) fn neg(e: Expr) -> Expr {
    match e {
        Expr::Const(c) => Expr::Const(c.neg()),
        Expr::Neg(inner) => *inner,
        Expr::Binary(BinOp::Sub, a, b) => sub(*b, *a),
        Expr::Binary(BinOp::Div, a, b) if matches!(*a, Expr::Neg(_) | Expr::Binary(BinOp::Sub, _, _)) => {
            Expr::binary(BinOp::Div, neg(*a), *b)
        }
        other => Expr::negate(other),
    }
}

pub(crate) fn add(p: Expr, q: Expr) -> Expr {
    match (&p, &q) {
        (Expr::Const(a), Expr::Const(b)) => Expr::Const(a.add(b)),
        _ if is_zero(&p) => q,
        _ if is_zero(&q) => p,
        (_, Expr::Neg(inner)) => sub(p, (**inner).clone()),
        _ => Expr::binary(BinOp::Add, p, q),
    }
}

pub(crate) fn sub(p: Expr, q: Expr) -> Expr {
    match (&p, &q) {
        (Expr::Const(a), Expr::Const(b)) => Expr::Const(a.sub(b)),
        _ if is_zero(&q) => p,
        _ if is_zero(&p) => neg(q),
        (_, Expr::Neg(inner)) => add(p, (**inner).clone()),
        _ => Expr::binary(BinOp::Sub, p, q),
    }
}

pub(crate) fn mul(p: Expr, q: Expr) -> Expr {
    match (&p, &q) {
        (Expr::Const(a), Expr::Const(b)) => Expr::Const(a.mul(b)),
        _ if is_zero(&p) || is_zero(&q) => Expr::int(0),
        _ if is_one(&p) => q,
        _ if is_one(&q) => p,
        (Expr::Neg(a), Expr::Neg(b)) => mul((**a).clone(), (**b).clone()),
        (Expr::Neg(a), _) => neg(mul((**a).clone(), q)),
        (_, Expr::Neg(b)) => neg(mul(p, (**b).clone())),
        _ => Expr::binary(BinOp::Mul, p, q),
    }
}

/// `None` for a constant zero divisor.
pub(crate) fn div(p: Expr, q: Expr) -> Option<Expr> {
    if is_zero(&q) {
        return None;
    }
    Some(match (&p, &q) {
        (Expr::Const(a), Expr::Const(b)) => Expr::Const(a.div(b)?),
        _ if is_zero(&p) => Expr::int(0),
        _ if is_one(&q) => p,
        (Expr::Neg(a), Expr::Neg(b)) => div((**a).clone(), (**b).clone())?,
        (Expr::Neg(a), _) => neg(div((**a).clone(), q)?),
        (_, Expr::Neg(b)) => neg(div(p, (**b).clone())?),
        _ => Expr::binary(BinOp::Div, p, q),
    })
}

/// Rebuilds `e` bottom-up through the folding constructors.
pub(crate) fn simplify(e: &Expr) -> Expr {
    match e {
        Expr::Neg(inner) => neg(simplify(inner)),
        Expr::Binary(op, l, r) => {
            let (l, r) = (simplify(l), simplify(r));
            match op {
                BinOp::Add => add(l, r),
                BinOp::Sub => sub(l, r),
                BinOp::Mul => mul(l, r),
                BinOp::Div => div(l.clone(), r.clone()).unwrap_or_else(|| Expr::binary(BinOp::Div, l, r)),
            }
        }
        other => other.map_children(simplify),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Sign {
    Positive,
    Negative,
    Zero,
    NonNegative,
    NonPositive,
    Unknown,
}

impl Sign {
    fn of_scalar(s: &Scalar) -> Sign {
        match s.signum() {
            1 => Sign::Positive,
            -1 => Sign::Negative,
            _ if s.is_zero() => Sign::Zero,
            _ => Sign::Unknown,
        }
    }

    fn flip(self) -> Sign {
        match self {
            Sign::Positive => Sign::Negative,
            Sign::Negative => Sign::Positive,
            Sign::NonNegative => Sign::NonPositive,
            Sign::NonPositive => Sign::NonNegative,
            s => s,
        }
    }

    pub(crate) fn nonneg(self) -> bool {
        matches!(self, Sign::Positive | Sign::Zero | Sign::NonNegative)
    }

    pub(crate) fn nonpos(self) -> bool {
        matches!(self, Sign::Negative | Sign::Zero | Sign::NonPositive)
    }

    fn add(self, other: Sign) -> Sign {
        use Sign::*;
        match (self, other) {
            (Zero, s) | (s, Zero) => s,
            (Positive, s) | (s, Positive) if s.nonneg() => Positive,
            (Negative, s) | (s, Negative) if s.nonpos() => Negative,
            (NonNegative, NonNegative) => NonNegative,
            (NonPositive, NonPositive) => NonPositive,
            _ => Unknown,
        }
    }

    fn mul(self, other: Sign) -> Sign {
        use Sign::*;
        match (self, other) {
            (Zero, _) | (_, Zero) => Zero,
            (Unknown, _) | (_, Unknown) => Unknown,
            (Positive, s) => s,
            (s, Positive) => s,
            (Negative, s) => s.flip(),
            (s, Negative) => s.flip(),
            (NonNegative, NonNegative) | (NonPositive, NonPositive) => NonNegative,
            _ => NonPositive,
        }
    }
}

pub(crate) fn sign(e: &Expr) -> Sign {
    match e {
        Expr::Const(c) => Sign::of_scalar(c),
        Expr::Var(_) | Expr::Pivot | Expr::Apply(_) | Expr::Exp(_) => Sign::Positive,
        Expr::Deriv(_) | Expr::Ln(_) => Sign::Unknown,
        Expr::Neg(inner) => sign(inner).flip(),
        Expr::Binary(op, l, r) => {
            let (l, r) = (sign(l), sign(r));
            match op {
                BinOp::Add => l.add(r),
                BinOp::Sub => l.add(r.flip()),
                BinOp::Mul => l.mul(r),
                BinOp::Div if r == Sign::Zero => Sign::Unknown,
                BinOp::Div => l.mul(match r {
                    Sign::NonNegative => Sign::Positive,
                    Sign::NonPositive => Sign::Negative,
                    s => s,
                }),
            }
        }
        Expr::Pow(base, n) => {
            let s = sign(base);
            if n % 2 == 0 {
                if matches!(s, Sign::Positive | Sign::Negative) {
                    Sign::Positive
                } else {
                    Sign::NonNegative
                }
            } else {
                s
            }
        }
    }
}

/// Writes `e` as `alpha * Pivot + beta` with pivot-free `alpha`, `beta`.
pub(crate) fn affine_in_pivot(e: &Expr) -> Option<(Expr, Expr)> {
    if !e.contains_pivot() {
        return Some((Expr::int(0), e.clone()));
    }
    match e {
        Expr::Pivot => Some((Expr::int(1), Expr::int(0))),
        Expr::Neg(inner) => {
            let (a, b) = affine_in_pivot(inner)?;
            Some((neg(a), neg(b)))
        }
        Expr::Binary(op, l, r) => {
            let (la, lb) = affine_in_pivot(l)?;
            let (ra, rb) = affine_in_pivot(r)?;
            match op {
                BinOp::Add => Some((add(la, ra), add(lb, rb))),
                BinOp::Sub => Some((sub(la, ra), sub(lb, rb))),
                BinOp::Mul if !l.contains_pivot() => {
                    Some((mul((**l).clone(), ra), mul((**l).clone(), rb)))
                }
                BinOp::Mul if !r.contains_pivot() => {
                    Some((mul(la, (**r).clone()), mul(lb, (**r).clone())))
                }
                BinOp::Div if !r.contains_pivot() => {
                    Some((div(la, (**r).clone())?, div(lb, (**r).clone())?))
                }
                _ => None,
            }
        }
        Expr::Pow(base, 1) => affine_in_pivot(base),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Var;
    use crate::eval::{evaluate, Binding, NoUnknown};

    fn x() -> Expr {
        Expr::var(Var::X)
    }

    #[test]
    fn folding() {
        assert_eq!(add(Expr::int(2), Expr::int(3)), Expr::int(5));
        let y = Expr::var(Var::Y);
        assert_eq!(sub(x(), neg(y.clone())), Expr::binary(BinOp::Add, x(), y.clone()));
        assert_eq!(mul(neg(x()), neg(x())), Expr::binary(BinOp::Mul, x(), x()));
        assert_eq!(div(neg(x()), neg(y.clone())), div(x(), y.clone()));
        assert_eq!(neg(neg(x())), x());
        assert!(div(x(), Expr::int(0)).is_none());
    }

    #[test]
    fn simplify_folds_substituted_constants() {
        let e = crate::parse::parse_expression("2*x/(1+x*0)").unwrap().substitute(Var::X, &Expr::int(1));
        assert_eq!(simplify(&e), Expr::int(2));
    }

    #[test]
    fn signs() {
        let a = Expr::var(Var::A);
        assert_eq!(sign(&add(Expr::int(1), a.clone())), Sign::Positive);
        assert_eq!(sign(&neg(add(Expr::int(1), a.clone()))), Sign::Negative);
        assert_eq!(sign(&sub(Expr::Pivot, x())), Sign::Unknown);
        assert_eq!(sign(&Expr::pow(sub(a, x()), 2)), Sign::NonNegative);
    }

    #[test]
    fn affine_decomposition_evaluates_back() {
        let a = Expr::var(Var::A);
        let e = sub(mul(a.clone(), sub(Expr::Pivot, x())), mul(Expr::int(2), x()));
        let (alpha, beta) = affine_in_pivot(&e).unwrap();
        assert!(!alpha.contains_pivot() && !beta.contains_pivot());
        let env = Binding::new().with(Var::A, 0.7).with(Var::X, 1.9).with_pivot(3.1);
        let whole = evaluate(&e, &env, &NoUnknown).unwrap();
        let al = evaluate(&alpha, &env, &NoUnknown).unwrap();
        let be = evaluate(&beta, &env, &NoUnknown).unwrap();
        assert!((whole - (al * 3.1 + be)).abs() < 1e-12);
        assert!(affine_in_pivot(&mul(Expr::Pivot, Expr::Pivot)).is_none());
        assert!(affine_in_pivot(&Expr::apply(Expr::Pivot)).is_none());
    }
}
