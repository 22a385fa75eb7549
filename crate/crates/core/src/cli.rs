//! Command-line frontend.
//!
//! Exit status is 0 on success, 1 when a check fails and 2 on usage or
//! input errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::{self, LimitsReport, RunConfig};
use crate::envelope::{refine, LinearEnvelope, RefinementStatus};
use crate::eval::CandidateFunction;
use crate::gridfn::{
    limit_at_zero, one_sided_limit, ratio_limit_at_zero, solve_fixed_point, tail_ratio, Grid, GridFunction, Side,
    SolveOptions, Spacing,
};
use crate::plot;
use crate::problem::{parse_problem, ProblemSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fesqueeze", version, about = "Squeeze, envelope and limit tools for functional equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a problem file and print its relations.
    Parse(Common),
    /// Check a candidate (or the bundled solutions) by sampled residuals.
    Verify(Common),
    /// Iterate the linear envelope recurrence until it collapses.
    Refine(Common),
    /// Solve the discretised equation by damped fixed-point iteration.
    Solve(Common),
    /// Estimate limits at 0+ and infinity.
    Limits(Common),
    /// Run every problem in the corpus directory.
    Corpus(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Problem file, or the name of a corpus entry.
    #[arg(long, value_name = "PATH")]
    pub problem: Option<PathBuf>,
    /// Closed-form candidate in x.
    #[arg(long, value_name = "EXPR")]
    pub candidate: Option<String>,
    #[arg(long, value_name = "F")]
    pub grid_min: Option<f64>,
    #[arg(long, value_name = "F")]
    pub grid_max: Option<f64>,
    #[arg(long, value_name = "N")]
    pub points: Option<usize>,
    #[arg(long, value_name = "F")]
    pub tol: Option<f64>,
    #[arg(long, value_name = "F")]
    pub damping: Option<f64>,
    #[arg(long, value_name = "N", default_value_t = corpus::DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeJson {
    pub trace_length: usize,
    pub collapsed: bool,
    pub c: Option<f64>,
    pub lower_map: String,
    pub upper_map: String,
    pub final_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleJson {
    pub converged: bool,
    pub iterations: usize,
    pub update_norm: f64,
    pub clamps: usize,
    pub extrapolations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_relative_deviation: Option<f64>,
}

/// One report per problem and stage; absent stages are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JsonReport {
    pub problem: String,
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limits: Option<LimitsReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub passed: bool,
}

impl JsonReport {
    fn new(problem: &str, stage: &str) -> Self {
        JsonReport {
            problem: problem.to_string(),
            stage: stage.to_string(),
            residual_max: None,
            residual_samples: None,
            envelope: None,
            oracle: None,
            limits: None,
            notes: Vec::new(),
            passed: true,
        }
    }
}

/// A usage or input error, reported with exit status 2.
#[derive(Debug)]
struct Usage(String);

impl<E: std::fmt::Display> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage(e.to_string())
    }
}

type Outcome = Result<i32, Usage>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(&cli.command, out) {
        Ok(code) => code,
        Err(Usage(message)) => {
            let _ = writeln!(err, "error: {message}");
            let _ = writeln!(err, "usage: fesqueeze <parse|verify|refine|solve|limits|corpus> [--problem PATH] [options]");
            EXIT_USAGE
        }
    }
}

fn dispatch(command: &Command, out: &mut dyn Write) -> Outcome {
    match command {
        Command::Parse(c) => cmd_parse(c, out),
        Command::Verify(c) => cmd_verify(c, out),
        Command::Refine(c) => cmd_refine(c, out),
        Command::Solve(c) => cmd_solve(c, out),
        Command::Limits(c) => cmd_limits(c, out),
        Command::Corpus(c) => cmd_corpus(c, out),
    }
}

fn validate(c: &Common) -> Result<(), Usage> {
    if c.tol.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
        return Err(Usage("--tol must be positive".into()));
    }
    if c.damping.is_some_and(|w| !(w > 0.0 && w <= 1.0)) {
        return Err(Usage("--damping must lie in (0, 1]".into()));
    }
    if c.samples == 0 {
        return Err(Usage("--samples must be at least 1".into()));
    }
    Ok(())
}

/// A path as given, or a corpus entry by name with or without extension.
fn resolve_problem(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    let dir = corpus::corpus_dir();
    let direct = dir.join(path);
    if direct.exists() {
        return direct;
    }
    dir.join(path).with_extension(corpus::FILE_EXTENSION)
}

fn load(c: &Common) -> Result<ProblemSpec, Usage> {
    validate(c)?;
    let path = c.problem.as_deref().ok_or_else(|| Usage("--problem is required".into()))?;
    let path = resolve_problem(path);
    let text = fs::read_to_string(&path).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    let mut spec = parse_problem(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    if c.grid_min.is_some() || c.grid_max.is_some() || c.points.is_some() {
        let base = spec.grid();
        let (min, max, n) =
            (c.grid_min.unwrap_or(base.min()), c.grid_max.unwrap_or(base.max()), c.points.unwrap_or(base.len()));
        Grid::new(base.spacing(), min, max, n)?;
        spec.hints.grid = Some((min, max, n));
    }
    if let Some(w) = c.damping {
        spec.hints.damping = Some(w);
    }
    Ok(spec)
}

fn candidate(c: &Common, spec: &ProblemSpec) -> Result<Option<CandidateFunction>, Usage> {
    c.candidate.as_deref().map(|text| CandidateFunction::parse(text, spec.domain).map_err(Usage::from)).transpose()
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), Usage> {
    if let Some(path) = path {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn emit_text(path: Option<&Path>, text: &str) -> Result<(), Usage> {
    if let Some(path) = path {
        fs::write(path, text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn emit_csv(path: Option<&Path>, write: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> Result<(), Usage> {
    if let Some(path) = path {
        let mut buf = Vec::new();
        write(&mut buf).map_err(Usage)?;
        fs::write(path, buf).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_parse(c: &Common, out: &mut dyn Write) -> Outcome {
    let spec = load(c)?;
    writeln!(out, "problem {}", spec.name)?;
    writeln!(out, "domain  {}", spec.domain.tag())?;
    for rel in &spec.relations {
        let op = match rel.kind {
            crate::ast::RelationKind::Equality => "=",
            crate::ast::RelationKind::GreaterEqual => ">=",
        };
        writeln!(out, "relation {} {op} {}", rel.lhs, rel.rhs)?;
    }
    for cand in spec.candidates() {
        writeln!(out, "solution {}", cand.expr())?;
    }
    if let Ok(rec) = corpus::envelope_for(&spec) {
        writeln!(out, "envelope a' = {}, b' = {}", rec.lower, rec.upper)?;
    }
    emit_json(c.json.as_deref(), &JsonReport::new(&spec.name, "parse"))?;
    Ok(EXIT_OK)
}

fn cmd_verify(c: &Common, out: &mut dyn Write) -> Outcome {
    let spec = load(c)?;
    let tol = c.tol.unwrap_or(corpus::RESIDUAL_TOLERANCE);
    let checks: Vec<corpus::CandidateCheck> = match candidate(c, &spec)? {
        Some(cand) => {
            vec![corpus::verify_candidate(&spec, &cand, c.candidate.as_deref().unwrap_or(""), c.samples, c.seed, tol)]
        }
        None => {
            let candidates = spec.candidates();
            if candidates.is_empty() {
                return Err(Usage(format!("{} has no bundled solution; pass --candidate", spec.name)));
            }
            candidates
                .iter()
                .map(|cand| corpus::verify_candidate(&spec, cand, &cand.expr().to_string(), c.samples, c.seed, tol))
                .collect()
        }
    };
    let mut report = JsonReport::new(&spec.name, "verify");
    report.residual_max = Some(checks.iter().map(|k| k.residual_max).fold(0.0, f64::max));
    report.residual_samples = Some(checks.iter().map(|k| k.samples).sum());
    report.passed = checks.iter().all(|k| k.passed);
    for k in &checks {
        let status = if k.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status} {} max scaled residual {:.3e} over {} samples", k.candidate, k.residual_max, k.samples)?;
        if !k.passed {
            let at: Vec<String> = k.worst.iter().map(|(v, t)| format!("{v} = {t}")).collect();
            report.notes.push(format!("{}: worst at {}, {} evaluation errors", k.candidate, at.join(", "), k.errors));
        }
    }
    emit_csv(c.csv.as_deref(), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["candidate", "residual_max", "samples", "errors", "passed"]).map_err(|e| e.to_string())?;
        for k in &checks {
            w.write_record([
                k.candidate.clone(),
                crate::sequences::format_f64(k.residual_max),
                k.samples.to_string(),
                k.errors.to_string(),
                k.passed.to_string(),
            ])
            .map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())
    })?;
    emit_json(c.json.as_deref(), &report)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILED })
}

fn cmd_refine(c: &Common, out: &mut dyn Write) -> Outcome {
    let spec = load(c)?;
    let rec = corpus::envelope_for(&spec).map_err(Usage)?;
    let (a, b) = spec.hints.envelope_init.clone().ok_or_else(|| Usage(format!("{} has no envelope_init", spec.name)))?;
    let env0 = LinearEnvelope::new(a, b)?;
    let tol = c.tol.unwrap_or(RunConfig::default().refine_tol);
    let trace = refine(&rec, &env0, tol, RunConfig::default().refine_max_iter)?;
    writeln!(out, "a' = {}", rec.lower)?;
    writeln!(out, "b' = {}", rec.upper)?;
    for (n, s) in trace.states.iter().take(4).enumerate() {
        writeln!(out, "n = {} a = {} b = {}", n + 1, s.a, s.b)?;
    }
    let c_value = trace.c.as_ref().map(|v| v.to_f64());
    match c_value {
        Some(v) => writeln!(out, "collapsed to c = {v} after {} steps", trace.states.len())?,
        None => writeln!(out, "{:?} at width {:.3e}", trace.status, trace.last().width())?,
    }
    let mut report = JsonReport::new(&spec.name, "refine");
    report.envelope = Some(EnvelopeJson {
        trace_length: trace.states.len(),
        collapsed: trace.collapsed(),
        c: c_value,
        lower_map: rec.lower.to_string(),
        upper_map: rec.upper.to_string(),
        final_width: trace.last().width(),
    });
    report.passed = trace.status == RefinementStatus::Collapsed;
    if !trace.trapping_violations.is_empty() {
        report.notes.push(format!("trapping violated at steps {:?}", trace.trapping_violations));
    }
    emit_csv(c.csv.as_deref(), |buf| trace.write_csv(buf).map_err(|e| e.to_string()))?;
    emit_text(c.svg.as_deref(), &plot::envelope_svg(&trace, &format!("{}: envelope coefficients", spec.name)))?;
    emit_json(c.json.as_deref(), &report)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILED })
}

fn solve_options(c: &Common, spec: &ProblemSpec) -> SolveOptions {
    let mut opts = SolveOptions::default();
    if let Some(t) = c.tol {
        opts.tol = t;
    }
    if let Some(w) = spec.hints.damping {
        opts.damping = w;
    }
    if let Some(s) = &spec.hints.substitution {
        opts.substitution = s.clone();
    }
    opts
}

/// Seeds with `--candidate`, then `oracle_init`, then the first bundled solution.
fn initial_guess(c: &Common, spec: &ProblemSpec, grid: &Arc<Grid>) -> Result<GridFunction, Usage> {
    if let Some(cand) = candidate(c, spec)? {
        return Ok(GridFunction::sample(Arc::clone(grid), &cand)?);
    }
    if let Some(gf) = spec.oracle_init(Arc::clone(grid)) {
        return Ok(gf);
    }
    let first = spec.candidates().into_iter().next().ok_or_else(|| Usage("no initial guess; pass --candidate".into()))?;
    Ok(GridFunction::sample(Arc::clone(grid), &first)?)
}

fn cmd_solve(c: &Common, out: &mut dyn Write) -> Outcome {
    let spec = load(c)?;
    let rel = match spec.relations.as_slice() {
        [rel] => rel,
        _ => return Err(Usage("the solver takes a single relation".into())),
    };
    let grid = Arc::new(spec.grid());
    let init = initial_guess(c, &spec, &grid)?;
    let (oracle, solve) = solve_fixed_point(rel, &init, &solve_options(c, &spec))?;
    let deviation = spec.candidates().first().and_then(|s| corpus::max_relative_deviation(&oracle, s));
    writeln!(out, "update: {}", solve.update)?;
    writeln!(
        out,
        "{} after {} iterations, update norm {:.3e}, damping {}",
        if solve.converged { "converged" } else { "not converged" },
        solve.iterations,
        solve.update_norm,
        solve.damping
    )?;
    if let Some(d) = deviation {
        writeln!(out, "max relative deviation from the known solution: {d:.3e}")?;
    }
    let mut report = JsonReport::new(&spec.name, "solve");
    report.oracle = Some(OracleJson {
        converged: solve.converged,
        iterations: solve.iterations,
        update_norm: solve.update_norm,
        clamps: solve.clamps,
        extrapolations: solve.extrapolations,
        max_relative_deviation: deviation,
    });
    report.passed = solve.converged;
    emit_csv(c.csv.as_deref(), |buf| oracle.write_csv(buf).map_err(|e| e.to_string()))?;
    let overlay = spec.hints.envelope_init.clone().and_then(|(a, b)| LinearEnvelope::new(a, b).ok());
    emit_text(c.svg.as_deref(), &plot::oracle_svg(&oracle, overlay.as_ref(), &format!("{}: grid oracle", spec.name)))?;
    emit_json(c.json.as_deref(), &report)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILED })
}

fn cmd_limits(c: &Common, out: &mut dyn Write) -> Outcome {
    let spec = load(c)?;
    let grid = Arc::new(spec.grid());
    if grid.spacing() != Spacing::Log {
        return Err(Usage(format!("{} is not posed on a half-line", spec.name)));
    }
    let (gf, source) = match candidate(c, &spec)? {
        Some(cand) => (GridFunction::sample(Arc::clone(&grid), &cand)?, "candidate"),
        None => {
            let solved = match spec.relations.as_slice() {
                [rel] => spec
                    .oracle_init(Arc::clone(&grid))
                    .and_then(|init| solve_fixed_point(rel, &init, &solve_options(c, &spec)).ok())
                    .filter(|(_, r)| r.converged),
                _ => None,
            };
            match solved {
                Some((gf, _)) => (gf, "oracle"),
                None => {
                    let first = spec
                        .candidates()
                        .into_iter()
                        .next()
                        .ok_or_else(|| Usage("nothing to take limits of; pass --candidate".into()))?;
                    (GridFunction::sample(Arc::clone(&grid), &first)?, "known_solution")
                }
            }
        }
    };
    let x0 = grid.points()[grid.len() / 2];
    let monotone_consistent =
        [Side::Left, Side::Right].iter().all(|s| one_sided_limit(&gf, x0, *s).is_ok_and(|l| l.monotone_consistent));
    let limits = LimitsReport {
        source: source.to_string(),
        at_zero: limit_at_zero(&gf),
        ratio_at_zero: ratio_limit_at_zero(&gf),
        tail_ratio: tail_ratio(&gf),
        monotone_consistent,
    };
    for (label, l) in [("f(0+)", &limits.at_zero), ("f(x)/x at 0+", &limits.ratio_at_zero), ("x/f(x) at infinity", &limits.tail_ratio)] {
        if l.unbounded {
            writeln!(out, "{label:<20} unbounded")?;
        } else {
            writeln!(out, "{label:<20} {:.9} +/- {:.1e}", l.value, l.uncertainty)?;
        }
    }
    writeln!(out, "{:<20} {}", "monotone consistent", monotone_consistent)?;
    emit_csv(c.csv.as_deref(), |buf| gf.write_csv(buf).map_err(|e| e.to_string()))?;
    emit_text(c.svg.as_deref(), &plot::oracle_svg(&gf, None, &format!("{}: {source}", spec.name)))?;
    let mut report = JsonReport::new(&spec.name, "limits");
    report.limits = Some(limits);
    emit_json(c.json.as_deref(), &report)?;
    Ok(EXIT_OK)
}

fn cmd_corpus(c: &Common, out: &mut dyn Write) -> Outcome {
    validate(c)?;
    let dir = c.problem.clone().unwrap_or_else(corpus::corpus_dir);
    let loaded = corpus::load_corpus(&dir).map_err(|e| Usage(format!("{}: {e}", dir.display())))?;
    let mut config = RunConfig { samples: c.samples, seed: c.seed, points: c.points, ..RunConfig::default() };
    if let Some(t) = c.tol {
        config.residual_tol = t;
    }
    if let Some(w) = c.damping {
        config.solve.damping = w;
    }
    let report = corpus::run_all(&loaded, &config);
    out.write_all(report.table().as_bytes())?;
    writeln!(out, "{}", if report.passed { "corpus PASS" } else { "corpus FAIL" })?;
    let rows: Vec<JsonReport> = report
        .problems
        .iter()
        .map(|p| JsonReport {
            problem: p.problem.clone(),
            stage: "corpus".into(),
            residual_max: p.verify.as_ref().map(|v| v.residual_max),
            residual_samples: p.verify.as_ref().map(|v| v.residual_samples),
            envelope: p.envelope.as_ref().map(|e| EnvelopeJson {
                trace_length: e.trace_length,
                collapsed: e.collapsed,
                c: e.c,
                lower_map: e.lower_map.clone(),
                upper_map: e.upper_map.clone(),
                final_width: e.final_width,
            }),
            oracle: p.oracle.as_ref().map(|o| OracleJson {
                converged: o.converged,
                iterations: o.iterations,
                update_norm: o.update_norm,
                clamps: o.clamps,
                extrapolations: o.extrapolations,
                max_relative_deviation: o.max_relative_deviation,
            }),
            limits: p.limits.clone(),
            notes: p.notes.clone(),
            passed: p.passed,
        })
        .collect();
    emit_json(c.json.as_deref(), &rows)?;
    emit_csv(c.csv.as_deref(), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["problem", "residual_max", "envelope_c", "oracle_converged", "passed"]).map_err(|e| e.to_string())?;
        for r in &rows {
            w.write_record([
                r.problem.clone(),
                r.residual_max.map(crate::sequences::format_f64).unwrap_or_default(),
                r.envelope.as_ref().and_then(|e| e.c).map(crate::sequences::format_f64).unwrap_or_default(),
                r.oracle.as_ref().map(|o| o.converged.to_string()).unwrap_or_default(),
                r.passed.to_string(),
            ])
            .map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())
    })?;
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILED })
}
