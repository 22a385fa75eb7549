//! Expression trees for functional equations.
//!
//! A single unknown `f` is supported. `f'` denotes its derivative and only
//! shows up in differential relations. [`Expr::Pivot`] is an internal
//! placeholder for the occurrence of `f(x)` that a solver isolates; the
//! parser never produces it.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::number::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Var {
    X,
    Y,
    Z,
    /// Lower envelope coefficient / first recurrence state.
    A,
    /// Upper envelope coefficient / second recurrence state.
    B,
    /// Candidate parameter.
    C,
    /// Candidate parameter.
    D,
}

impl Var {
    pub const ALL: [Var; 7] = [Var::X, Var::Y, Var::Z, Var::A, Var::B, Var::C, Var::D];

    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::Z => "z",
            Var::A => "a",
            Var::B => "b",
            Var::C => "c",
            Var::D => "d",
        }
    }

    pub fn from_name(name: &str) -> Option<Var> {
        Var::ALL.into_iter().find(|v| v.name() == name)
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => PREC_SUM,
            BinOp::Mul | BinOp::Div => PREC_PRODUCT,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(Scalar),
    Var(Var),
    /// `f(arg)`
    Apply(Box<Expr>),
    /// `f'(arg)`
    Deriv(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Neg(Box<Expr>),
    Ln(Box<Expr>),
    Exp(Box<Expr>),
    Pivot,
}

impl Expr {
    pub fn int(value: i64) -> Expr {
        Expr::Const(Scalar::int(value))
    }

    pub fn constant(value: Scalar) -> Expr {
        Expr::Const(value)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn apply(arg: Expr) -> Expr {
        Expr::Apply(Box::new(arg))
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn pow(base: Expr, exp: i32) -> Expr {
        Expr::Pow(Box::new(base), exp)
    }

    pub fn negate(inner: Expr) -> Expr {
        Expr::Neg(Box::new(inner))
    }

    /// `f(x)`, the pivot shape used by the solvers.
    pub fn f_of_x() -> Expr {
        Expr::apply(Expr::Var(Var::X))
    }

    pub fn is_f_of_x(&self) -> bool {
        matches!(self, Expr::Apply(arg) if **arg == Expr::Var(Var::X))
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Pivot => Vec::new(),
            Expr::Apply(e) | Expr::Deriv(e) | Expr::Neg(e) | Expr::Ln(e) | Expr::Exp(e) => {
                vec![e]
            }
            Expr::Pow(e, _) => vec![e],
            Expr::Binary(_, l, r) => vec![l, r],
        }
    }

    /// Rebuilds the node with every direct child passed through `f`.
    pub fn map_children(&self, mut f: impl FnMut(&Expr) -> Expr) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Pivot => self.clone(),
            Expr::Apply(e) => Expr::Apply(Box::new(f(e))),
            Expr::Deriv(e) => Expr::Deriv(Box::new(f(e))),
            Expr::Neg(e) => Expr::Neg(Box::new(f(e))),
            Expr::Ln(e) => Expr::Ln(Box::new(f(e))),
            Expr::Exp(e) => Expr::Exp(Box::new(f(e))),
            Expr::Pow(e, n) => Expr::Pow(Box::new(f(e)), *n),
            Expr::Binary(op, l, r) => Expr::Binary(*op, Box::new(f(l)), Box::new(f(r))),
        }
    }

    fn any(&self, pred: &dyn Fn(&Expr) -> bool) -> bool {
        pred(self) || self.children().into_iter().any(|c| c.any(pred))
    }

    pub fn free_variables(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        if let Expr::Var(v) = self {
            out.insert(*v);
        }
        for c in self.children() {
            c.collect_vars(out);
        }
    }

    /// True when the tree applies `f` or `f'` anywhere.
    pub fn mentions_unknown(&self) -> bool {
        self.any(&|e| matches!(e, Expr::Apply(_) | Expr::Deriv(_)))
    }

    pub fn mentions_derivative(&self) -> bool {
        self.any(&|e| matches!(e, Expr::Deriv(_)))
    }

    pub fn contains_pivot(&self) -> bool {
        self.any(&|e| matches!(e, Expr::Pivot))
    }

    pub fn contains(&self, needle: &Expr) -> bool {
        self.any(&|e| e == needle)
    }

    /// Replaces every occurrence of `var` with `with`.
    pub fn substitute(&self, var: Var, with: &Expr) -> Expr {
        match self {
            Expr::Var(v) if *v == var => with.clone(),
            _ => self.map_children(|c| c.substitute(var, with)),
        }
    }

    /// Replaces every subtree structurally equal to `target`.
    pub fn replace(&self, target: &Expr, with: &Expr) -> Expr {
        if self == target {
            with.clone()
        } else {
            self.map_children(|c| c.replace(target, with))
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().into_iter().map(Expr::node_count).sum::<usize>()
    }

    /// Symbolic derivative with respect to `var` for expressions free of `f`.
    /// Other variables are treated as constants.
    pub fn differentiate(&self, var: Var) -> Option<Expr> {
        let d = |e: &Expr| e.differentiate(var);
        Some(match self {
            Expr::Const(_) => Expr::int(0),
            Expr::Var(v) => Expr::int(i64::from(*v == var)),
            Expr::Apply(_) | Expr::Deriv(_) | Expr::Pivot => return None,
            Expr::Neg(e) => Expr::negate(d(e)?),
            Expr::Binary(op, l, r) => {
                let (dl, dr) = (d(l)?, d(r)?);
                let (l, r) = ((**l).clone(), (**r).clone());
                match op {
                    BinOp::Add | BinOp::Sub => Expr::binary(*op, dl, dr),
                    BinOp::Mul => Expr::binary(
                        BinOp::Add,
                        Expr::binary(BinOp::Mul, dl, r),
                        Expr::binary(BinOp::Mul, l, dr),
                    ),
                    BinOp::Div => Expr::binary(
                        BinOp::Div,
                        Expr::binary(
                            BinOp::Sub,
                            Expr::binary(BinOp::Mul, dl, r.clone()),
                            Expr::binary(BinOp::Mul, l, dr),
                        ),
                        Expr::pow(r, 2),
                    ),
                }
            }
            Expr::Pow(e, n) => Expr::binary(
                BinOp::Mul,
                Expr::binary(BinOp::Mul, Expr::int(i64::from(*n)), Expr::pow((**e).clone(), n - 1)),
                d(e)?,
            ),
            Expr::Ln(e) => Expr::binary(BinOp::Div, d(e)?, (**e).clone()),
            Expr::Exp(e) => Expr::binary(BinOp::Mul, self.clone(), d(e)?),
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            Expr::Pow(_, _) => PREC_POWER,
            Expr::Const(c) if c.signum() < 0 || c.terminating_decimal().is_none() => PREC_SUM,
            _ => PREC_BASE,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            f.write_str("(")?;
            self.write_bare(f)?;
            f.write_str(")")
        } else {
            self.write_bare(f)
        }
    }

    fn write_bare(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => match c {
                Scalar::Exact(_) => match c.terminating_decimal() {
                    Some(s) => f.write_str(&s),
                    None => write!(f, "{c}"),
                },
                Scalar::Approx(v) => write!(f, "{v:?}"),
            },
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Pivot => f.write_str("<f(x)>"),
            Expr::Apply(e) => write!(f, "f({e})"),
            Expr::Deriv(e) => write!(f, "f'({e})"),
            Expr::Ln(e) => write!(f, "ln({e})"),
            Expr::Exp(e) => write!(f, "exp({e})"),
            Expr::Neg(e) => {
                f.write_str("-")?;
                e.write_at(f, PREC_BASE)
            }
            Expr::Pow(e, n) => {
                e.write_at(f, PREC_BASE)?;
                write!(f, "^{n}")
            }
            Expr::Binary(op, l, r) => {
                let prec = op.precedence();
                l.write_at(f, prec)?;
                write!(f, " {} ", op.symbol())?;
                r.write_at(f, prec + 1)
            }
        }
    }
}

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_POWER: u8 = 3;
const PREC_BASE: u8 = 4;

/// Unparses with the minimal parentheses that re-parse to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}

impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub fn free_variables(expr: &Expr) -> BTreeSet<Var> {
    expr.free_variables()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Domain {
    #[serde(rename = "R+")]
    PositiveReals,
    #[serde(rename = "R")]
    Reals,
    #[serde(rename = "R0+")]
    NonNegReals,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::PositiveReals => "R+",
            Domain::Reals => "R",
            Domain::NonNegReals => "R0+",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Domain> {
        match tag {
            "R+" => Some(Domain::PositiveReals),
            "R" => Some(Domain::Reals),
            "R0+" => Some(Domain::NonNegReals),
            _ => None,
        }
    }

    pub fn contains(self, v: f64) -> bool {
        match self {
            Domain::PositiveReals => v > 0.0 && v.is_finite(),
            Domain::NonNegReals => v >= 0.0 && v.is_finite(),
            Domain::Reals => v.is_finite(),
        }
    }

    /// Whether every argument of `f` is known to be nonnegative.
    pub fn is_half_line(self) -> bool {
        !matches!(self, Domain::Reals)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationKind {
    Equality,
    /// `lhs >= rhs`
    GreaterEqual,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalRelation {
    pub lhs: Expr,
    pub rhs: Expr,
    pub kind: RelationKind,
    pub variables: BTreeSet<Var>,
    pub domain: Domain,
}

impl FunctionalRelation {
    pub fn new(lhs: Expr, rhs: Expr, kind: RelationKind, domain: Domain) -> Self {
        let mut variables = lhs.free_variables();
        variables.extend(rhs.free_variables());
        FunctionalRelation { lhs, rhs, kind, variables, domain }
    }

    pub fn equality(lhs: Expr, rhs: Expr, domain: Domain) -> Self {
        Self::new(lhs, rhs, RelationKind::Equality, domain)
    }

    /// Same relation with sides exchanged (only meaningful for equalities).
    pub fn swapped(&self) -> Self {
        Self::new(self.rhs.clone(), self.lhs.clone(), self.kind, self.domain)
    }

    pub fn mentions_derivative(&self) -> bool {
        self.lhs.mentions_derivative() || self.rhs.mentions_derivative()
    }
}

impl fmt::Display for FunctionalRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.kind {
            RelationKind::Equality => "=",
            RelationKind::GreaterEqual => ">=",
        };
        write!(f, "{} {op} {}", self.lhs, self.rhs)
    }
}
