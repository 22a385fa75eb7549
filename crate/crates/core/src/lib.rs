//! Numerical toolbox for functional equations on the positive reals.
//!
//! The crate mechanizes the usual olympiad analysis of an unknown `f`:
//!
//! * [`parse`] and [`ast`] read equations such as `f(x)+f(f(x)) = 2*x`,
//! * [`eval`] evaluates them under a candidate or sampled interpretation of `f`,
//! * [`sequences`] iterates bounding recurrences, classifies their convergence
//!   and applies the squeeze theorem,
//! * [`envelope`] derives and tightens linear envelopes `a*x <= f(x) <= b*x`,
//! * [`gridfn`] solves the equation on a log-spaced grid and estimates
//!   suprema, one-sided limits, derivatives and differential residuals,
//! * [`corpus`] bundles worked problems and drives batch verification.

pub mod ast;
pub mod cli;
pub mod corpus;
pub mod envelope;
pub mod eval;
pub mod gridfn;
mod isolate;
pub mod number;
pub mod parse;
mod plot;
pub mod problem;
pub mod sequences;

pub use ast::{BinOp, Domain, Expr, FunctionalRelation, RelationKind, Var};
pub use eval::{evaluate, residual, Binding, CandidateFunction, EvalError, Interpretation};
pub use gridfn::{Grid, GridFunction, Spacing};
pub use number::Scalar;
pub use parse::{parse_expression, parse_relation, ParseError};
pub use problem::{parse_problem, ProblemSpec};
