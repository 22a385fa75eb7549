//! Problem files: one `key = value` per line, `#` starts a comment.
//!
//! | key | value |
//! |-----|-------|
//! | `name` | required |
//! | `domain` | `R+` (default), `R` or `R0+` |
//! | `relation` | required, repeatable; `=`, `>=` or `<=` |
//! | `known_solution` | expression in `x` with parameters `c`, `d` |
//! | `solution_params` | repeatable, e.g. `c = 1/2, d = 0`; one candidate each |
//! | `envelope_lower_map`, `envelope_upper_map` | expressions in `a`, `b`, given together |
//! | `envelope_init` | `a, b` |
//! | `oracle_init` | expression in `x` seeding the grid solver |
//! | `substitution` | repeatable, e.g. `y = x` |
//! | `damping` | number in `(0, 1]` |
//! | `grid` | `min, max, points` |
//! | `ordering` | e.g. `x < y < z`, imposed on sampled bindings |
//! | `source`, `notes` | free text |

use std::sync::Arc;

use crate::ast::{Domain, Expr, FunctionalRelation, Var};
use crate::envelope::EnvelopeRecurrence;
use crate::eval::CandidateFunction;
use crate::gridfn::{Grid, GridFunction, Substitution};
use crate::number::Scalar;
use crate::parse::{parse_relation, parse_scalar_list, parse_with, Dialect, ParseError};

/// A closed form with zero or more parameter assignments.
#[derive(Clone, Debug, PartialEq)]
pub struct KnownSolution {
    pub expr: Expr,
    /// Each entry assigns `c` and/or `d`; empty when the form has no parameters.
    pub params: Vec<Vec<(Var, Scalar)>>,
}

impl KnownSolution {
    /// One candidate per parameter assignment (a single one without parameters).
    pub fn candidates(&self, domain: Domain) -> Vec<CandidateFunction> {
        let assignments: Vec<Vec<(Var, Scalar)>> =
            if self.params.is_empty() { vec![Vec::new()] } else { self.params.clone() };
        assignments
            .iter()
            .map(|a| {
                let p: Vec<(Var, f64)> = a.iter().map(|(v, s)| (*v, s.to_f64())).collect();
                CandidateFunction::new(self.expr.clone(), &p, domain).expect("validated at parse time")
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverHints {
    pub substitution: Option<Substitution>,
    pub damping: Option<f64>,
    pub grid: Option<(f64, f64, usize)>,
    pub oracle_init: Option<Expr>,
    pub envelope_init: Option<(Scalar, Scalar)>,
    /// Variables in ascending order.
    pub ordering: Option<Vec<Var>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: Domain,
    pub relations: Vec<FunctionalRelation>,
    pub known_solution: Option<KnownSolution>,
    pub envelope_maps: Option<(Expr, Expr)>,
    pub hints: SolverHints,
    pub source: Option<String>,
    pub notes: Option<String>,
}

impl ProblemSpec {
    /// The hinted grid, or the default grid for the domain.
    pub fn grid(&self) -> Grid {
        match self.hints.grid {
            Some((min, max, n)) => {
                let spacing = match self.domain {
                    Domain::Reals => crate::gridfn::Spacing::Linear,
                    _ => crate::gridfn::Spacing::Log,
                };
                Grid::new(spacing, min, max, n).expect("validated at parse time")
            }
            None => Grid::default_for(self.domain),
        }
    }

    pub fn candidates(&self) -> Vec<CandidateFunction> {
        self.known_solution.as_ref().map(|k| k.candidates(self.domain)).unwrap_or_default()
    }

    /// User-supplied envelope maps, if any.
    pub fn user_envelope(&self) -> Option<EnvelopeRecurrence> {
        let (lo, hi) = self.envelope_maps.clone()?;
        EnvelopeRecurrence::user(lo, hi).ok()
    }

    /// `oracle_init` sampled on `grid`.
    pub fn oracle_init(&self, grid: Arc<Grid>) -> Option<GridFunction> {
        let expr = self.hints.oracle_init.clone()?;
        let f = CandidateFunction::new(expr, &[], self.domain).ok()?;
        GridFunction::sample(grid, &f).ok()
    }
}

fn invalid(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::InvalidValue { line, message: message.into() }
}

fn parse_assignments(text: &str, line: usize) -> Result<Vec<(Var, Scalar)>, ParseError> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let (name, value) = part.split_once('=').ok_or_else(|| invalid(line, format!("expected `name = value` in `{part}`")))?;
        let var = match name.trim() {
            "c" => Var::C,
            "d" => Var::D,
            other => return Err(invalid(line, format!("unknown parameter `{other}`"))),
        };
        let value = parse_scalar_list(value).map_err(|e| e.at_line(line))?;
        match value.as_slice() {
            [v] => out.push((var, v.clone())),
            _ => return Err(invalid(line, "one value per parameter")),
        }
    }
    Ok(out)
}

fn parse_number(text: &str, line: usize) -> Result<f64, ParseError> {
    text.trim().parse::<f64>().map_err(|_| invalid(line, format!("`{}` is not a number", text.trim())))
}

fn parse_ordering(text: &str, line: usize) -> Result<Vec<Var>, ParseError> {
    let vars: Option<Vec<Var>> = text
        .split('<')
        .map(|t| Var::from_name(t.trim()).filter(|v| matches!(v, Var::X | Var::Y | Var::Z)))
        .collect();
    match vars {
        Some(v) if v.len() >= 2 => Ok(v),
        _ => Err(invalid(line, format!("expected e.g. `x < y < z`, got `{text}`"))),
    }
}

/// Parses a problem file.
pub fn parse_problem(text: &str) -> Result<ProblemSpec, ParseError> {
    let mut entries: Vec<(usize, &str, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| invalid(line, format!("expected `key = value`, got `{content}`")))?;
        entries.push((line, key.trim(), value.trim()));
    }
    let single = |key: &str| -> Result<Option<(usize, &str)>, ParseError> {
        let mut found = entries.iter().filter(|(_, k, _)| *k == key);
        let first = found.next().map(|(l, _, v)| (*l, *v));
        if let Some((line, _, _)) = found.next() {
            return Err(invalid(*line, format!("`{key}` given twice")));
        }
        Ok(first)
    };

    const KNOWN: [&str; 15] = [
        "name",
        "domain",
        "relation",
        "known_solution",
        "solution_params",
        "envelope_lower_map",
        "envelope_upper_map",
        "envelope_init",
        "oracle_init",
        "substitution",
        "damping",
        "grid",
        "ordering",
        "source",
        "notes",
    ];
    if let Some((line, key, _)) = entries.iter().find(|(_, k, _)| !KNOWN.contains(k)) {
        return Err(invalid(*line, format!("unknown key `{key}`")));
    }

    let name = single("name")?.ok_or_else(|| ParseError::MissingKey("name".into()))?.1.to_string();
    let domain = match single("domain")? {
        None => Domain::PositiveReals,
        Some((line, tag)) => Domain::from_tag(tag).ok_or_else(|| invalid(line, format!("unknown domain `{tag}`")))?,
    };
    let relations = entries
        .iter()
        .filter(|(_, k, _)| *k == "relation")
        .map(|(line, _, v)| parse_relation(v, domain).map_err(|e| e.at_line(*line)))
        .collect::<Result<Vec<_>, _>>()?;
    if relations.is_empty() {
        return Err(ParseError::MissingKey("relation".into()));
    }

    let params = entries
        .iter()
        .filter(|(_, k, _)| *k == "solution_params")
        .map(|(line, _, v)| parse_assignments(v, *line))
        .collect::<Result<Vec<_>, _>>()?;
    let known_solution = match single("known_solution")? {
        None if !params.is_empty() => return Err(ParseError::MissingKey("known_solution".into())),
        None => None,
        Some((line, text)) => {
            let expr = parse_with(text, &Dialect::CANDIDATE).map_err(|e| e.at_line(line))?;
            let solution = KnownSolution { expr, params };
            for assignment in solution.params.iter().map(Some).chain(solution.params.is_empty().then_some(None)) {
                let p: Vec<(Var, f64)> =
                    assignment.map(|a| a.iter().map(|(v, s)| (*v, s.to_f64())).collect()).unwrap_or_default();
                CandidateFunction::new(solution.expr.clone(), &p, domain)
                    .map_err(|e| invalid(line, e.to_string()))?;
            }
            Some(solution)
        }
    };

    let envelope_maps = match (single("envelope_lower_map")?, single("envelope_upper_map")?) {
        (None, None) => None,
        (Some((l1, lo)), Some((l2, hi))) => {
            let lo = parse_with(lo, &Dialect::MAP).map_err(|e| e.at_line(l1))?;
            let hi = parse_with(hi, &Dialect::MAP).map_err(|e| e.at_line(l2))?;
            Some((lo, hi))
        }
        (Some((line, _)), None) | (None, Some((line, _))) => {
            return Err(invalid(line, "envelope maps must be given together"))
        }
    };

    let mut hints = SolverHints::default();
    let subs = entries
        .iter()
        .filter(|(_, k, _)| *k == "substitution")
        .map(|(line, _, v)| {
            let (var, expr) = v.split_once('=').ok_or_else(|| invalid(*line, "expected e.g. `y = x`"))?;
            let var = match var.trim() {
                "y" => Var::Y,
                "z" => Var::Z,
                other => return Err(invalid(*line, format!("cannot substitute for `{other}`"))),
            };
            let expr = parse_with(expr, &Dialect::RELATION).map_err(|e| e.at_line(*line))?;
            if expr.mentions_unknown() || expr.free_variables().iter().any(|v| *v != Var::X) {
                return Err(invalid(*line, "substitutions are f-free expressions in x"));
            }
            Ok((var, expr))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if !subs.is_empty() {
        hints.substitution = Some(Substitution::new(subs));
    }
    if let Some((line, v)) = single("damping")? {
        let w = parse_number(v, line)?;
        if !(w > 0.0 && w <= 1.0) {
            return Err(invalid(line, "damping must lie in (0, 1]"));
        }
        hints.damping = Some(w);
    }
    if let Some((line, v)) = single("grid")? {
        let parts: Vec<&str> = v.split(',').collect();
        let [min, max, n] = parts.as_slice() else {
            return Err(invalid(line, "expected `min, max, points`"));
        };
        let (min, max) = (parse_number(min, line)?, parse_number(max, line)?);
        let n: usize = n.trim().parse().map_err(|_| invalid(line, "point count must be an integer"))?;
        let spacing = if domain == Domain::Reals { crate::gridfn::Spacing::Linear } else { crate::gridfn::Spacing::Log };
        Grid::new(spacing, min, max, n).map_err(|e| invalid(line, e.to_string()))?;
        hints.grid = Some((min, max, n));
    }
    if let Some((line, v)) = single("oracle_init")? {
        let expr = parse_with(v, &Dialect::CANDIDATE).map_err(|e| e.at_line(line))?;
        CandidateFunction::new(expr.clone(), &[], domain).map_err(|e| invalid(line, e.to_string()))?;
        hints.oracle_init = Some(expr);
    }
    if let Some((line, v)) = single("envelope_init")? {
        let values = parse_scalar_list(v).map_err(|e| e.at_line(line))?;
        let [a, b] = values.as_slice() else {
            return Err(invalid(line, "expected `a, b`"));
        };
        crate::envelope::LinearEnvelope::new(a.clone(), b.clone()).map_err(|e| invalid(line, e.to_string()))?;
        hints.envelope_init = Some((a.clone(), b.clone()));
    }
    if let Some((line, v)) = single("ordering")? {
        hints.ordering = Some(parse_ordering(v, line)?);
    }

    Ok(ProblemSpec {
        name,
        domain,
        relations,
        known_solution,
        envelope_maps,
        hints,
        source: single("source")?.map(|(_, v)| v.to_string()),
        notes: single("notes")?.map(|(_, v)| v.to_string()),
    })
}
