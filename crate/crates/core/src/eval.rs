//! Evaluation of expressions and relation residuals.

use thiserror::Error;

use crate::ast::{BinOp, Domain, Expr, FunctionalRelation, RelationKind, Var};
use crate::number::Scalar;
use crate::parse::{parse_with, Dialect, ParseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("argument {arg} lies outside the domain of the interpretation")]
    Domain { arg: f64 },
    #[error("non-finite intermediate value")]
    NonFinite,
    #[error("variable `{0}` is unbound")]
    Unbound(Var),
    #[error("expression applies f but no interpretation of f is available")]
    NoInterpretation,
    #[error("pivot placeholder has no value")]
    UnboundPivot,
}

/// Values for the free variables of an expression.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Binding {
    slots: [Option<f64>; 7],
    pivot: Option<f64>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.set(var, value);
        self
    }

    pub fn set(&mut self, var: Var, value: f64) {
        self.slots[var.index()] = Some(value);
    }

    pub fn get(&self, var: Var) -> Option<f64> {
        self.slots[var.index()]
    }

    pub fn with_pivot(mut self, value: f64) -> Self {
        self.pivot = Some(value);
        self
    }

    pub fn from_pairs(pairs: &[(Var, f64)]) -> Self {
        pairs.iter().fold(Binding::new(), |b, &(v, x)| b.with(v, x))
    }

    /// Every bound variable lies in `domain`.
    pub fn within(&self, domain: Domain) -> bool {
        self.slots.iter().flatten().all(|&v| domain.contains(v))
    }
}

/// An interpretation of the unknown `f`.
pub trait Interpretation {
    fn apply(&self, t: f64) -> Result<f64, EvalError>;
    fn derivative(&self, t: f64) -> Result<f64, EvalError>;
}

/// Interpretation for expressions that must not apply `f`.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoUnknown;

impl Interpretation for NoUnknown {
    fn apply(&self, _t: f64) -> Result<f64, EvalError> {
        Err(EvalError::NoInterpretation)
    }

    fn derivative(&self, _t: f64) -> Result<f64, EvalError> {
        Err(EvalError::NoInterpretation)
    }
}

impl<T: Interpretation + ?Sized> Interpretation for &T {
    fn apply(&self, t: f64) -> Result<f64, EvalError> {
        (**self).apply(t)
    }

    fn derivative(&self, t: f64) -> Result<f64, EvalError> {
        (**self).derivative(t)
    }
}

fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

pub fn evaluate(expr: &Expr, env: &Binding, interp: &dyn Interpretation) -> Result<f64, EvalError> {
    let eval = |e: &Expr| evaluate(e, env, interp);
    let v = match expr {
        Expr::Const(c) => c.to_f64(),
        Expr::Var(v) => env.get(*v).ok_or(EvalError::Unbound(*v))?,
        Expr::Pivot => env.pivot.ok_or(EvalError::UnboundPivot)?,
        Expr::Apply(arg) => interp.apply(eval(arg)?)?,
        Expr::Deriv(arg) => interp.derivative(eval(arg)?)?,
        Expr::Neg(e) => -eval(e)?,
        Expr::Binary(op, l, r) => {
            let (l, r) = (eval(l)?, eval(r)?);
            match op {
                BinOp::Add => l + r,
                BinOp::Sub => l - r,
                BinOp::Mul => l * r,
                BinOp::Div => {
                    if r == 0.0 {
                        return Err(EvalError::NonFinite);
                    }
                    l / r
                }
            }
        }
        Expr::Pow(e, n) => {
            let b = eval(e)?;
            if b == 0.0 && *n < 0 {
                return Err(EvalError::NonFinite);
            }
            b.powi(*n)
        }
        Expr::Ln(e) => {
            let a = eval(e)?;
            if a <= 0.0 {
                return Err(EvalError::Domain { arg: a });
            }
            a.ln()
        }
        Expr::Exp(e) => eval(e)?.exp(),
    };
    finite(v)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualParts {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

impl ResidualParts {
    /// Residual relative to `1 + |lhs| + |rhs|`.
    pub fn scaled(&self) -> f64 {
        self.residual.abs() / (1.0 + self.lhs.abs() + self.rhs.abs())
    }
}

pub fn residual_parts(
    rel: &FunctionalRelation,
    env: &Binding,
    interp: &dyn Interpretation,
) -> Result<ResidualParts, EvalError> {
    let lhs = evaluate(&rel.lhs, env, interp)?;
    let rhs = evaluate(&rel.rhs, env, interp)?;
    let residual = match rel.kind {
        RelationKind::Equality => lhs - rhs,
        RelationKind::GreaterEqual => (rhs - lhs).max(0.0),
    };
    Ok(ResidualParts { lhs, rhs, residual })
}

/// `lhs - rhs` for equalities, `max(0, rhs - lhs)` for `lhs >= rhs`.
pub fn residual(
    rel: &FunctionalRelation,
    env: &Binding,
    interp: &dyn Interpretation,
) -> Result<f64, EvalError> {
    residual_parts(rel, env, interp).map(|p| p.residual)
}

/// A closed-form candidate for `f`, written in `x` with parameters `c, d`.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateFunction {
    expr: Expr,
    derivative: Expr,
    params: Binding,
    domain: Domain,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CandidateError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("candidate must be a closed form in x without f")]
    NotClosedForm,
    #[error("parameter `{0}` has no value")]
    MissingParameter(Var),
}

impl CandidateFunction {
    pub fn new(expr: Expr, params: &[(Var, f64)], domain: Domain) -> Result<Self, CandidateError> {
        if expr.mentions_unknown() || expr.contains_pivot() {
            return Err(CandidateError::NotClosedForm);
        }
        let params = Binding::from_pairs(params);
        for v in expr.free_variables() {
            match v {
                Var::X => {}
                Var::C | Var::D if params.get(v).is_some() => {}
                Var::C | Var::D => return Err(CandidateError::MissingParameter(v)),
                _ => return Err(CandidateError::NotClosedForm),
            }
        }
        let derivative = expr.differentiate(Var::X).ok_or(CandidateError::NotClosedForm)?;
        Ok(CandidateFunction { expr, derivative, params, domain })
    }

    pub fn parse(text: &str, domain: Domain) -> Result<Self, CandidateError> {
        Self::new(parse_with(text, &Dialect::CANDIDATE)?, &[], domain)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn parameter(&self, v: Var) -> Option<f64> {
        self.params.get(v)
    }

    fn bind(&self, t: f64) -> Result<Binding, EvalError> {
        if !self.domain.contains(t) {
            return Err(EvalError::Domain { arg: t });
        }
        let mut env = self.params.clone();
        env.set(Var::X, t);
        Ok(env)
    }

    pub fn value(&self, t: f64) -> Result<f64, EvalError> {
        evaluate(&self.expr, &self.bind(t)?, &NoUnknown)
    }
}

impl Interpretation for CandidateFunction {
    fn apply(&self, t: f64) -> Result<f64, EvalError> {
        self.value(t)
    }

    fn derivative(&self, t: f64) -> Result<f64, EvalError> {
        evaluate(&self.derivative, &self.bind(t)?, &NoUnknown)
    }
}

/// Values for `a, b` (or any variable) in exact evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalarBinding {
    slots: [Option<Scalar>; 7],
}

impl ScalarBinding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: Var, value: Scalar) -> Self {
        self.slots[var.index()] = Some(value);
        self
    }

    pub fn get(&self, var: Var) -> Option<&Scalar> {
        self.slots[var.index()].as_ref()
    }
}

/// Evaluates an `f`-free expression, exactly while only `+ - * /` and integer
/// powers of exact values are involved.
pub fn evaluate_scalar(expr: &Expr, env: &ScalarBinding) -> Result<Scalar, EvalError> {
    let eval = |e: &Expr| evaluate_scalar(e, env);
    let out = match expr {
        Expr::Const(c) => c.clone(),
        Expr::Var(v) => env.get(*v).cloned().ok_or(EvalError::Unbound(*v))?,
        Expr::Pivot => return Err(EvalError::UnboundPivot),
        Expr::Apply(_) | Expr::Deriv(_) => return Err(EvalError::NoInterpretation),
        Expr::Neg(e) => eval(e)?.neg(),
        Expr::Binary(op, l, r) => {
            let (l, r) = (eval(l)?, eval(r)?);
            match op {
                BinOp::Add => l.add(&r),
                BinOp::Sub => l.sub(&r),
                BinOp::Mul => l.mul(&r),
                BinOp::Div => l.div(&r).ok_or(EvalError::NonFinite)?,
            }
        }
        Expr::Pow(e, n) => eval(e)?.powi(*n).ok_or(EvalError::NonFinite)?,
        Expr::Ln(e) => {
            let a = eval(e)?.to_f64();
            if a <= 0.0 {
                return Err(EvalError::Domain { arg: a });
            }
            Scalar::Approx(a.ln())
        }
        Expr::Exp(e) => Scalar::Approx(eval(e)?.to_f64().exp()),
    };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(EvalError::NonFinite)
    }
}
