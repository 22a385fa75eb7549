//! Loading problem files and running them in batch.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ast::{Domain, RelationKind, Var};
use crate::envelope::{derive_envelope_recurrence, refine, EnvelopeRecurrence, LinearEnvelope, Origin, RefinementStatus};
use crate::eval::{residual_parts, Binding, CandidateFunction, Interpretation};
use crate::gridfn::{
    limit_at_zero, one_sided_limit, ratio_limit_at_zero, solve_fixed_point, sup_inf, tail_ratio, Functional, Grid,
    GridFunction, LimitEstimate, Side, SolveOptions, Spacing,
};
use crate::number::Scalar;
use crate::problem::{parse_problem, ProblemSpec};

pub const FILE_EXTENSION: &str = "feq";
pub const CORPUS_ENV: &str = "FESQUEEZE_CORPUS";
pub const DEFAULT_SAMPLES: usize = 1000;
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;
pub const AGREEMENT_TOLERANCE: f64 = 1e-4;
/// Oracles farther than this from the known solution are not used for limits.
pub const ORACLE_MATCH_TOLERANCE: f64 = 1e-6;
/// Fraction of grid points at each end excluded from oracle comparisons.
pub const EDGE_FRACTION: f64 = 0.05;

/// The bundled corpus, unless [`CORPUS_ENV`] names another directory.
pub fn corpus_dir() -> PathBuf {
    std::env::var_os(CORPUS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoadError {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    /// Sorted by file name.
    pub problems: Vec<ProblemSpec>,
    pub errors: Vec<LoadError>,
}

/// Parses every `.feq` file in `dir`; a bad file is recorded and skipped.
pub fn load_corpus(dir: &Path) -> io::Result<Corpus> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == FILE_EXTENSION))
        .collect();
    paths.sort();
    let mut corpus = Corpus::default();
    for path in paths {
        match fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|t| parse_problem(&t).map_err(|e| e.to_string())) {
            Ok(spec) => corpus.problems.push(spec),
            Err(message) => corpus.errors.push(LoadError { path, message }),
        }
    }
    Ok(corpus)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Verify,
    Refine,
    Solve,
    Limits,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Verify, Stage::Refine, Stage::Solve, Stage::Limits];
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub stages: Vec<Stage>,
    pub samples: usize,
    pub seed: u64,
    pub residual_tol: f64,
    pub refine_tol: f64,
    pub refine_max_iter: usize,
    pub solve: SolveOptions,
    /// Overrides the problem's grid size.
    pub points: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stages: Stage::ALL.to_vec(),
            samples: DEFAULT_SAMPLES,
            seed: 0,
            residual_tol: RESIDUAL_TOLERANCE,
            refine_tol: 1e-8,
            refine_max_iter: 1000,
            solve: SolveOptions { max_iter: 2000, ..SolveOptions::default() },
            points: None,
        }
    }
}

impl RunConfig {
    fn runs(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }
}

/// 64-bit FNV-1a.
fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// The sampling seed for one problem.
pub fn problem_seed(seed: u64, name: &str) -> u64 {
    seed ^ fnv1a(name)
}

/// Draws one binding: log-uniform on half-lines, uniform on `R`, sorted
/// into the problem's ordering when it has one.
fn draw(spec: &ProblemSpec, vars: &[Var], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Binding {
    let mut sample = |_: &Var| match spec.domain {
        Domain::Reals => rng.gen_range(lo..=hi),
        _ => (rng.gen_range(lo.ln()..=hi.ln())).exp(),
    };
    let mut env = Binding::new();
    let values: Vec<(Var, f64)> = vars.iter().map(|v| (*v, sample(v))).collect();
    for (v, t) in &values {
        env.set(*v, *t);
    }
    if let Some(order) = &spec.hints.ordering {
        let mut sorted: Vec<f64> = order.iter().filter_map(|v| env.get(*v)).collect();
        sorted.sort_by(f64::total_cmp);
        for (v, t) in order.iter().zip(sorted) {
            env.set(*v, t);
        }
    }
    env
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateCheck {
    pub candidate: String,
    /// Largest scaled residual over all samples and relations.
    pub residual_max: f64,
    pub samples: usize,
    /// Samples where evaluation failed.
    pub errors: usize,
    pub worst: Vec<(String, f64)>,
    pub passed: bool,
}

/// Samples `samples` bindings over the problem grid's range and checks
/// every relation under `interp`.
pub fn verify_candidate(
    spec: &ProblemSpec,
    interp: &dyn Interpretation,
    label: &str,
    samples: usize,
    seed: u64,
    tol: f64,
) -> CandidateCheck {
    let grid = spec.grid();
    let vars: Vec<Var> = {
        let mut all: Vec<Var> = spec.relations.iter().flat_map(|r| r.variables.iter().copied()).collect();
        all.sort_by_key(|v| v.index());
        all.dedup();
        all
    };
    let mut rng = ChaCha8Rng::seed_from_u64(problem_seed(seed, &spec.name));
    let (mut worst_value, mut worst, mut errors) = (0.0f64, Vec::new(), 0);
    for _ in 0..samples {
        let env = draw(spec, &vars, grid.min(), grid.max(), &mut rng);
        for rel in &spec.relations {
            match residual_parts(rel, &env, interp) {
                Ok(parts) => {
                    let r = parts.scaled();
                    if r > worst_value || r.is_nan() {
                        worst_value = if r.is_nan() { f64::INFINITY } else { r };
                        worst = vars.iter().filter_map(|v| env.get(*v).map(|t| (v.name().to_string(), t))).collect();
                    }
                }
                Err(_) => errors += 1,
            }
        }
    }
    CandidateCheck {
        candidate: label.to_string(),
        residual_max: worst_value,
        samples,
        errors,
        worst,
        passed: errors == 0 && worst_value <= tol,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub residual_max: f64,
    pub residual_samples: usize,
    pub candidates: Vec<CandidateCheck>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub origin: Origin,
    pub lower_map: String,
    pub upper_map: String,
    pub trace_length: usize,
    pub status: RefinementStatus,
    pub collapsed: bool,
    pub c: Option<f64>,
    pub final_width: f64,
    pub trapping_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub converged: bool,
    pub iterations: usize,
    pub update_norm: f64,
    pub damping: f64,
    pub clamps: usize,
    pub extrapolations: usize,
    pub update: String,
    /// Against the first known candidate, away from the grid edges.
    pub max_relative_deviation: Option<f64>,
    /// `sup f(x)/x` away from the grid edges.
    pub sup_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitsReport {
    /// `oracle` or `known_solution`.
    pub source: String,
    pub at_zero: LimitEstimate,
    pub ratio_at_zero: LimitEstimate,
    pub tail_ratio: LimitEstimate,
    /// One-sided limits at the grid's central point respect the monotone bracket.
    pub monotone_consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemReport {
    pub problem: String,
    pub verify: Option<VerifyReport>,
    pub envelope: Option<EnvelopeReport>,
    pub oracle: Option<OracleReport>,
    pub limits: Option<LimitsReport>,
    /// `|c - sup f(x)/x|` when both the envelope collapsed and the oracle converged.
    pub agreement: Option<f64>,
    /// Skipped stages and recorded failures.
    pub notes: Vec<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusReport {
    pub problems: Vec<ProblemReport>,
    pub load_errors: Vec<LoadError>,
    pub passed: bool,
}

impl CorpusReport {
    /// A fixed-width summary, one row per problem.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>12} {:>10} {:>12} {:>8}",
            "problem", "residual", "envelope c", "oracle", "f(0+)", "status"
        );
        for p in &self.problems {
            let residual = p.verify.as_ref().filter(|v| !v.candidates.is_empty()).map_or("-".into(), |v| format!("{:.1e}", v.residual_max));
            let c = p.envelope.as_ref().and_then(|e| e.c).map_or("-".into(), |c| format!("{c:.9}"));
            let oracle = p.oracle.as_ref().map_or("-".into(), |o| {
                if o.converged { format!("{} it", o.iterations) } else { "no conv".into() }
            });
            let zero = p.limits.as_ref().map_or("-".into(), |l| format!("{:.4}", l.at_zero.value));
            let status = if p.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{:<24} {:>10} {:>12} {:>10} {:>12} {:>8}", p.problem, residual, c, oracle, zero, status);
        }
        for e in &self.load_errors {
            let _ = writeln!(out, "{:<24} load error: {}", e.path.display(), e.message);
        }
        out
    }
}

fn grid_for(spec: &ProblemSpec, config: &RunConfig) -> Grid {
    let grid = spec.grid();
    match config.points {
        Some(n) => Grid::new(grid.spacing(), grid.min(), grid.max(), n).unwrap_or(grid),
        None => grid,
    }
}

/// Interior window excluding [`EDGE_FRACTION`] of the points at each end.
pub fn interior_window(grid: &Grid) -> (usize, usize) {
    let n = grid.len();
    let skip = ((n as f64) * EDGE_FRACTION).ceil() as usize;
    (skip, n - 1 - skip)
}

/// Largest `|g - s| / |s|` over the interior window (absolute where `s = 0`).
pub fn max_relative_deviation(oracle: &GridFunction, solution: &CandidateFunction) -> Option<f64> {
    let (lo, hi) = interior_window(oracle.grid());
    let mut worst = 0.0f64;
    for i in lo..=hi {
        let x = oracle.points()[i];
        let s = solution.value(x).ok()?;
        let d = (oracle.values()[i] - s).abs();
        worst = worst.max(if s == 0.0 { d } else { d / s.abs() });
    }
    Some(worst)
}

fn verify_stage(spec: &ProblemSpec, config: &RunConfig, notes: &mut Vec<String>) -> VerifyReport {
    let candidates = spec.candidates();
    if candidates.is_empty() {
        notes.push("verify: no bundled solution".into());
    }
    let checks: Vec<CandidateCheck> = candidates
        .iter()
        .map(|c| {
            let label = candidate_label(c);
            verify_candidate(spec, c, &label, config.samples, config.seed, config.residual_tol)
        })
        .collect();
    for c in checks.iter().filter(|c| !c.passed) {
        notes.push(format!("verify: {} residual {:.3e} with {} evaluation errors", c.candidate, c.residual_max, c.errors));
    }
    VerifyReport {
        residual_max: checks.iter().map(|c| c.residual_max).fold(0.0, f64::max),
        residual_samples: checks.iter().map(|c| c.samples).sum(),
        passed: checks.iter().all(|c| c.passed),
        candidates: checks,
    }
}

fn candidate_label(c: &CandidateFunction) -> String {
    let params: Vec<String> =
        [Var::C, Var::D].iter().filter_map(|v| c.parameter(*v).map(|p| format!("{} = {p}", v.name()))).collect();
    if params.is_empty() { c.expr().to_string() } else { format!("{} with {}", c.expr(), params.join(", ")) }
}

fn refine_stage(spec: &ProblemSpec, config: &RunConfig, notes: &mut Vec<String>) -> Option<EnvelopeReport> {
    let rec = match spec.user_envelope() {
        Some(rec) => rec,
        None => match spec.relations.as_slice() {
            [rel] => match derive_envelope_recurrence(rel) {
                Ok(rec) => rec,
                Err(e) => {
                    notes.push(format!("refine: {e}"));
                    return None;
                }
            },
            _ => {
                notes.push("refine: several relations".into());
                return None;
            }
        },
    };
    let Some((a, b)) = spec.hints.envelope_init.clone() else {
        notes.push("refine: no initial envelope".into());
        return None;
    };
    let env0 = LinearEnvelope::new(a, b).ok()?;
    match refine(&rec, &env0, config.refine_tol, config.refine_max_iter) {
        Ok(trace) => {
            if !trace.collapsed() {
                notes.push(format!("refine: {:?}", trace.status));
            }
            Some(EnvelopeReport {
                origin: rec.origin,
                lower_map: rec.lower.to_string(),
                upper_map: rec.upper.to_string(),
                trace_length: trace.states.len(),
                status: trace.status,
                collapsed: trace.collapsed(),
                c: trace.c.as_ref().map(Scalar::to_f64),
                final_width: trace.last().width(),
                trapping_violations: trace.trapping_violations.len(),
            })
        }
        Err(e) => {
            notes.push(format!("refine: {e}"));
            None
        }
    }
}

fn solve_stage(
    spec: &ProblemSpec,
    config: &RunConfig,
    grid: &Arc<Grid>,
    notes: &mut Vec<String>,
) -> Option<(GridFunction, OracleReport)> {
    let rel = match spec.relations.as_slice() {
        [rel] if rel.kind == RelationKind::Equality && !rel.mentions_derivative() => rel,
        _ => {
            notes.push("solve: only a single equality without f' is solved".into());
            return None;
        }
    };
    let candidates = spec.candidates();
    let init = spec
        .oracle_init(Arc::clone(grid))
        .or_else(|| candidates.first().and_then(|c| GridFunction::sample(Arc::clone(grid), c).ok()));
    let Some(init) = init else {
        notes.push("solve: no initial guess".into());
        return None;
    };
    let mut opts = config.solve.clone();
    if let Some(w) = spec.hints.damping {
        opts.damping = w;
    }
    if let Some(s) = &spec.hints.substitution {
        opts.substitution = s.clone();
    }
    match solve_fixed_point(rel, &init, &opts) {
        Ok((oracle, report)) => {
            if !report.converged {
                notes.push(format!("solve: not converged after {} iterations", report.iterations));
            }
            let (lo, hi) = interior_window(grid);
            let sup_ratio = (grid.spacing() == Spacing::Log)
                .then(|| sup_inf(&oracle, Functional::FOverX, (grid.points()[lo], grid.points()[hi])).ok().map(|r| r.sup))
                .flatten();
            let oracle_report = OracleReport {
                converged: report.converged,
                iterations: report.iterations,
                update_norm: report.update_norm,
                damping: report.damping,
                clamps: report.clamps,
                extrapolations: report.extrapolations,
                update: report.update,
                max_relative_deviation: candidates.first().and_then(|c| max_relative_deviation(&oracle, c)),
                sup_ratio,
            };
            Some((oracle, oracle_report))
        }
        Err(e) => {
            notes.push(format!("solve: {e}"));
            None
        }
    }
}

fn limits_stage(
    spec: &ProblemSpec,
    grid: &Arc<Grid>,
    oracle: Option<&GridFunction>,
    notes: &mut Vec<String>,
) -> Option<LimitsReport> {
    if grid.spacing() != Spacing::Log {
        notes.push("limits: grid does not approach 0+".into());
        return None;
    }
    let sampled;
    let (gf, source) = match (oracle, spec.candidates().first()) {
        (Some(o), _) => (o, "oracle"),
        (None, Some(c)) => {
            sampled = GridFunction::sample(Arc::clone(grid), c).ok()?;
            (&sampled, "known_solution")
        }
        (None, None) => {
            notes.push("limits: no oracle or known solution".into());
            return None;
        }
    };
    let x0 = grid.points()[grid.len() / 2];
    let monotone_consistent = [Side::Left, Side::Right]
        .iter()
        .all(|s| one_sided_limit(gf, x0, *s).is_ok_and(|l| l.monotone_consistent));
    Some(LimitsReport {
        source: source.to_string(),
        at_zero: limit_at_zero(gf),
        ratio_at_zero: ratio_limit_at_zero(gf),
        tail_ratio: tail_ratio(gf),
        monotone_consistent,
    })
}

/// Runs the configured stages on one problem. Failures are recorded, never raised.
pub fn run_problem(spec: &ProblemSpec, config: &RunConfig) -> ProblemReport {
    let mut notes = Vec::new();
    let grid = Arc::new(grid_for(spec, config));
    let verify = config.runs(Stage::Verify).then(|| verify_stage(spec, config, &mut notes));
    let envelope = if config.runs(Stage::Refine) { refine_stage(spec, config, &mut notes) } else { None };
    let solved = if config.runs(Stage::Solve) { solve_stage(spec, config, &grid, &mut notes) } else { None };
    if let Some(d) = solved.as_ref().and_then(|(_, r)| r.converged.then_some(r.max_relative_deviation).flatten()) {
        if d > ORACLE_MATCH_TOLERANCE {
            notes.push(format!("solve: converged to another fixed point of the reduced equation (deviation {d:.3e})"));
        }
    }
    let converged = solved
        .as_ref()
        .filter(|(_, r)| r.converged && r.max_relative_deviation.is_none_or(|d| d <= ORACLE_MATCH_TOLERANCE))
        .map(|(g, _)| g);
    let limits = if config.runs(Stage::Limits) { limits_stage(spec, &grid, converged, &mut notes) } else { None };

    let agreement = match (envelope.as_ref().and_then(|e| e.c), solved.as_ref()) {
        (Some(c), Some((_, r))) if r.converged => r.sup_ratio.map(|s| (c - s).abs()),
        _ => None,
    };
    if let Some(d) = agreement.filter(|d| *d > AGREEMENT_TOLERANCE) {
        notes.push(format!("envelope and oracle disagree by {d:.3e}"));
    }
    let passed = verify.as_ref().is_none_or(|v| v.passed) && agreement.is_none_or(|d| d <= AGREEMENT_TOLERANCE);
    ProblemReport {
        problem: spec.name.clone(),
        verify,
        envelope,
        oracle: solved.map(|(_, r)| r),
        limits,
        agreement,
        notes,
        passed,
    }
}

/// Runs every problem in parallel; the report keeps the corpus order.
pub fn run_all(corpus: &Corpus, config: &RunConfig) -> CorpusReport {
    let problems: Vec<ProblemReport> = corpus.problems.par_iter().map(|p| run_problem(p, config)).collect();
    CorpusReport {
        passed: corpus.errors.is_empty() && problems.iter().all(|p| p.passed),
        problems,
        load_errors: corpus.errors.clone(),
    }
}

/// The user envelope for `spec`, or one derived from its only relation.
pub fn envelope_for(spec: &ProblemSpec) -> Result<EnvelopeRecurrence, String> {
    if let Some(rec) = spec.user_envelope() {
        return Ok(rec);
    }
    match spec.relations.as_slice() {
        [rel] => derive_envelope_recurrence(rel).map_err(|e| e.to_string()),
        _ => Err("envelope derivation needs a single relation".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        assert!(corpus.problems.is_empty() && corpus.errors.is_empty());
        assert!(run_all(&corpus, &RunConfig::default()).passed);
    }

    #[test]
    fn bad_file_is_isolated() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.feq"), "name = a\nrelation = f(x) = x\nknown_solution = x\n").unwrap();
        fs::write(dir.path().join("b.feq"), "name = b\nrelation = f(x = x\n").unwrap();
        fs::write(dir.path().join("c.txt"), "ignored").unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        assert_eq!(corpus.problems.len(), 1);
        assert_eq!(corpus.errors.len(), 1);
        assert!(corpus.errors[0].path.ends_with("b.feq"));
    }

    #[test]
    fn wrong_candidate_fails() {
        let spec = parse_problem("name = w\nrelation = f(x) + f(f(x)) = 2*x\n").unwrap();
        let c = CandidateFunction::parse("2*x", Domain::PositiveReals).unwrap();
        let check = verify_candidate(&spec, &c, "2x", 100, 0, RESIDUAL_TOLERANCE);
        assert!(!check.passed);
        assert!(check.residual_max > 0.1);
        assert_eq!(check.worst.len(), 1);
    }

    #[test]
    fn ordering_is_respected() {
        let spec = parse_problem("name = o\ndomain = R\nrelation = f(z) >= f(y) + f(x)*0\nordering = x < y < z\n").unwrap();
        let c = CandidateFunction::parse("x", Domain::Reals).unwrap();
        assert!(verify_candidate(&spec, &c, "x", 500, 3, 0.0).passed);
    }
}
