//! Sampled interpretations of `f` and the numerical operations on them.
//!
//! A [`GridFunction`] stores one value per grid point and interpolates
//! linearly in log-log coordinates on a [`Spacing::Log`] grid, or linearly on
//! a [`Spacing::Linear`] grid. Evaluations outside the grid either fail or
//! extrapolate along the boundary segment; extrapolations are counted.

mod analysis;
mod solver;

use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

pub use analysis::{
    derivative, differential_residual, limit_at_zero, one_sided_limit, ratio_limit_at_zero, sup_inf,
    sup_witness_sequence, tail_ratio, AnalysisError, DifferentialResidual, Functional, LimitEstimate,
    LimitLocation, Side, SupInfReport, WitnessSequence,
};
pub use solver::{solve_fixed_point, SolveError, SolveOptions, SolveReport, Substitution};

use crate::ast::Domain;
use crate::eval::{EvalError, Interpretation};

pub const MIN_POINTS: usize = 16;
pub const DEFAULT_POINTS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("a grid needs at least {MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid grid range [{min}, {max}]")]
    BadRange { min: f64, max: f64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("value at x = {x} is {value}; log grids need finite positive values")]
    BadValue { x: f64, value: f64 },
    #[error("values are not strictly increasing, so the function has no grid inverse")]
    NotInvertible,
    #[error("csv: {0}")]
    Csv(String),
    #[error("csv abscissae are neither log- nor linearly spaced")]
    UnknownSpacing,
}

impl From<csv::Error> for GridError {
    fn from(e: csv::Error) -> Self {
        GridError::Csv(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Log,
    Linear,
}

/// Strictly increasing sample points, uniformly spaced in `ln x` or in `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    spacing: Spacing,
    points: Vec<f64>,
}

impl Grid {
    pub fn new(spacing: Spacing, min: f64, max: f64, n: usize) -> Result<Grid, GridError> {
        if n < MIN_POINTS {
            return Err(GridError::TooFewPoints(n));
        }
        let bad = !(min.is_finite() && max.is_finite() && min < max)
            || (spacing == Spacing::Log && min <= 0.0);
        if bad {
            return Err(GridError::BadRange { min, max });
        }
        let last = n - 1;
        let points = match spacing {
            Spacing::Log => {
                let (u0, u1) = (min.ln(), max.ln());
                (0..n)
                    .map(|i| match i {
                        0 => min,
                        i if i == last => max,
                        i => (u0 + (u1 - u0) * i as f64 / last as f64).exp(),
                    })
                    .collect()
            }
            Spacing::Linear => (0..n)
                .map(|i| match i {
                    0 => min,
                    i if i == last => max,
                    i => min + (max - min) * i as f64 / last as f64,
                })
                .collect(),
        };
        Ok(Grid { spacing, points })
    }

    pub fn log(min: f64, max: f64, n: usize) -> Result<Grid, GridError> {
        Self::new(Spacing::Log, min, max, n)
    }

    pub fn linear(min: f64, max: f64, n: usize) -> Result<Grid, GridError> {
        Self::new(Spacing::Linear, min, max, n)
    }

    /// `[1e-3, 1e3]` with 512 log-spaced points on half lines, `[-10, 10]`
    /// with 513 linear points on the real line.
    pub fn default_for(domain: Domain) -> Grid {
        match domain {
            Domain::Reals => Grid::linear(-10.0, 10.0, DEFAULT_POINTS + 1),
            _ => Grid::log(1e-3, 1e3, DEFAULT_POINTS),
        }
        .expect("default grids are valid")
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Interpolation coordinate of an abscissa.
    pub(crate) fn coord(&self, x: f64) -> f64 {
        match self.spacing {
            Spacing::Log => x.ln(),
            Spacing::Linear => x,
        }
    }

    /// Index `i` of the cell `[x_i, x_{i+1}]` holding `x`, clamped to the
    /// boundary cells.
    pub(crate) fn cell(&self, x: f64) -> usize {
        let n = self.points.len();
        let (c0, c1) = (self.coord(self.min()), self.coord(self.max()));
        let guess = ((self.coord(x) - c0) / (c1 - c0) * (n - 1) as f64).floor();
        let mut i = if guess.is_nan() { 0 } else { guess.clamp(0.0, (n - 2) as f64) as usize };
        while i > 0 && x < self.points[i] {
            i -= 1;
        }
        while i + 2 < n && x >= self.points[i + 1] {
            i += 1;
        }
        i
    }

    /// Index of the grid point nearest to `x` in the interpolation coordinate.
    pub fn nearest(&self, x: f64) -> usize {
        let i = self.cell(x);
        let (ci, cj, cx) = (self.coord(self.points[i]), self.coord(self.points[i + 1]), self.coord(x));
        if (cx - ci).abs() <= (cj - cx).abs() {
            i
        } else {
            i + 1
        }
    }

    /// Whether `x` lies in the grid's abscissa range.
    pub fn covers(&self, x: f64) -> bool {
        x >= self.min() && x <= self.max()
    }
}

/// Values of `f` on a grid.
#[derive(Debug)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
    extrapolate: bool,
    extrapolations: AtomicUsize,
}

impl Clone for GridFunction {
    fn clone(&self) -> Self {
        GridFunction {
            grid: Arc::clone(&self.grid),
            values: self.values.clone(),
            extrapolate: self.extrapolate,
            extrapolations: AtomicUsize::new(self.extrapolation_count()),
        }
    }
}

impl PartialEq for GridFunction {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values && self.extrapolate == other.extrapolate
    }
}

impl GridFunction {
    /// Extrapolation is enabled.
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        for (&x, &value) in grid.points().iter().zip(&values) {
            let bad = !value.is_finite() || (grid.spacing() == Spacing::Log && value <= 0.0);
            if bad {
                return Err(GridError::BadValue { x, value });
            }
        }
        Ok(GridFunction { grid, values, extrapolate: true, extrapolations: AtomicUsize::new(0) })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        let values = grid.points().iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    /// Samples an interpretation at every grid point.
    pub fn sample(grid: Arc<Grid>, interp: &dyn Interpretation) -> Result<Self, GridError> {
        let mut values = Vec::with_capacity(grid.len());
        for &x in grid.points() {
            let v = interp.apply(x).map_err(|_| GridError::BadValue { x, value: f64::NAN })?;
            values.push(v);
        }
        Self::new(grid, values)
    }

    pub fn with_extrapolation(mut self, enabled: bool) -> Self {
        self.extrapolate = enabled;
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn points(&self) -> &[f64] {
        self.grid.points()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn extrapolation_count(&self) -> usize {
        self.extrapolations.load(Ordering::Relaxed)
    }

    pub fn reset_extrapolations(&self) {
        self.extrapolations.store(0, Ordering::Relaxed);
    }

    /// Largest absolute value, at least 1.
    pub fn scale(&self) -> f64 {
        self.values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
    }

    fn value_coord(&self, v: f64) -> f64 {
        match self.grid.spacing() {
            Spacing::Log => v.ln(),
            Spacing::Linear => v,
        }
    }

    fn value_from_coord(&self, c: f64) -> f64 {
        match self.grid.spacing() {
            Spacing::Log => c.exp(),
            Spacing::Linear => c,
        }
    }

    fn outside(&self, x: f64) -> Result<(), EvalError> {
        if self.grid.covers(x) {
            return Ok(());
        }
        let representable = match self.grid.spacing() {
            Spacing::Log => x > 0.0 && x.is_finite(),
            Spacing::Linear => x.is_finite(),
        };
        if !self.extrapolate || !representable {
            return Err(EvalError::Domain { arg: x });
        }
        self.extrapolations.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Interpolated (or extrapolated) value at `x`.
    pub fn value_at(&self, x: f64) -> Result<f64, EvalError> {
        self.outside(x)?;
        let i = self.grid.cell(x);
        let p = self.grid.points();
        let (c0, c1) = (self.grid.coord(p[i]), self.grid.coord(p[i + 1]));
        let (v0, v1) = (self.value_coord(self.values[i]), self.value_coord(self.values[i + 1]));
        let t = (self.grid.coord(x) - c0) / (c1 - c0);
        let v = self.value_from_coord(v0 + t * (v1 - v0));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    /// Whether the sampled values are strictly increasing.
    pub fn is_increasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] > w[0])
    }

    /// The abscissa at which the interpolant equals `y`.
    pub fn inverse(&self, y: f64) -> Result<f64, GridError> {
        if !self.is_increasing() {
            return Err(GridError::NotInvertible);
        }
        let v = &self.values;
        let n = v.len();
        let inside = y >= v[0] && y <= v[n - 1];
        let representable = match self.grid.spacing() {
            Spacing::Log => y > 0.0 && y.is_finite(),
            Spacing::Linear => y.is_finite(),
        };
        if !representable || (!inside && !self.extrapolate) {
            return Err(GridError::BadValue { x: f64::NAN, value: y });
        }
        if !inside {
            self.extrapolations.fetch_add(1, Ordering::Relaxed);
        }
        let i = v.partition_point(|&w| w <= y).clamp(1, n - 1) - 1;
        let p = self.grid.points();
        let (c0, c1) = (self.grid.coord(p[i]), self.grid.coord(p[i + 1]));
        let (w0, w1) = (self.value_coord(v[i]), self.value_coord(v[i + 1]));
        let t = (self.value_coord(y) - w0) / (w1 - w0);
        let c = c0 + t * (c1 - c0);
        Ok(match self.grid.spacing() {
            Spacing::Log => c.exp(),
            Spacing::Linear => c,
        })
    }

    /// Central-difference derivative at grid point `i` (interior only).
    pub(crate) fn node_derivative(&self, i: usize) -> Option<f64> {
        if i == 0 || i + 1 >= self.len() {
            return None;
        }
        let p = self.grid.points();
        let (v0, v1) = (self.values[i - 1], self.values[i + 1]);
        Some(match self.grid.spacing() {
            Spacing::Log => {
                let slope = (v1.ln() - v0.ln()) / (p[i + 1].ln() - p[i - 1].ln());
                slope * self.values[i] / p[i]
            }
            Spacing::Linear => (v1 - v0) / (p[i + 1] - p[i - 1]),
        })
    }

    /// CSV with header `x,f` in round-trip precision.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), GridError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "f"])?;
        for (x, v) in self.points().iter().zip(&self.values) {
            w.write_record([format!("{x:?}"), format!("{v:?}")])?;
        }
        w.flush().map_err(|e| GridError::Csv(e.to_string()))
    }

    /// Reads a CSV written by [`GridFunction::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self, GridError> {
        #[derive(serde::Deserialize)]
        struct Row {
            x: f64,
            f: f64,
        }
        let mut xs = Vec::new();
        let mut values = Vec::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: Row = row?;
            xs.push(row.x);
            values.push(row.f);
        }
        if xs.len() < MIN_POINTS {
            return Err(GridError::TooFewPoints(xs.len()));
        }
        let (min, max) = (xs[0], xs[xs.len() - 1]);
        for spacing in [Spacing::Log, Spacing::Linear] {
            if let Ok(grid) = Grid::new(spacing, min, max, xs.len()) {
                let matches = grid
                    .points()
                    .iter()
                    .zip(&xs)
                    .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300));
                if matches {
                    return Self::new(Arc::new(grid), values);
                }
            }
        }
        Err(GridError::UnknownSpacing)
    }
}

impl Interpretation for GridFunction {
    fn apply(&self, t: f64) -> Result<f64, EvalError> {
        self.value_at(t)
    }

    /// Node derivatives, interpolated linearly between the two neighbouring
    /// interior nodes.
    fn derivative(&self, t: f64) -> Result<f64, EvalError> {
        if !self.grid.covers(t) {
            return Err(EvalError::Domain { arg: t });
        }
        let p = self.grid.points();
        let i = self.grid.cell(t);
        let (c0, c1, ct) = (self.grid.coord(p[i]), self.grid.coord(p[i + 1]), self.grid.coord(t));
        let s = (ct - c0) / (c1 - c0);
        let tol = 1e-9;
        let node = |j: usize| self.node_derivative(j).ok_or(EvalError::Domain { arg: t });
        if s <= tol {
            node(i)
        } else if s >= 1.0 - tol {
            node(i + 1)
        } else {
            Ok((1.0 - s) * node(i)? + s * node(i + 1)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_grid() -> Arc<Grid> {
        Arc::new(Grid::log(1e-3, 1e3, 512).unwrap())
    }

    #[test]
    fn grid_shape() {
        let g = Grid::log(1e-3, 1e3, 512).unwrap();
        assert_eq!(g.len(), 512);
        assert_eq!(g.min(), 1e-3);
        assert_eq!(g.max(), 1e3);
        assert!(g.points().windows(2).all(|w| w[1] > w[0]));
        assert_eq!(Grid::log(1.0, 2.0, 15), Err(GridError::TooFewPoints(15)));
        assert!(Grid::log(0.0, 2.0, 16).is_err());
        let r = Grid::default_for(Domain::Reals);
        assert_eq!((r.min(), r.max(), r.spacing()), (-10.0, 10.0, Spacing::Linear));
        assert_eq!(r.points()[256], 0.0);
    }

    #[test]
    fn power_functions_interpolate_exactly() {
        let f = GridFunction::from_fn(log_grid(), |x| 3.0 * x * x).unwrap();
        for t in [1.7e-3, 0.42, 5.0, 999.0] {
            let v = f.value_at(t).unwrap();
            assert!((v / (3.0 * t * t) - 1.0).abs() < 1e-12);
        }
        assert_eq!(f.extrapolation_count(), 0);
        let v = f.value_at(2e3).unwrap();
        assert!((v / 1.2e7 - 1.0).abs() < 1e-10);
        assert_eq!(f.extrapolation_count(), 1);
        let strict = f.clone().with_extrapolation(false);
        assert_eq!(strict.value_at(2e3), Err(EvalError::Domain { arg: 2e3 }));
        assert!(f.value_at(-1.0).is_err());
    }

    #[test]
    fn log_grids_reject_nonpositive_values() {
        assert!(matches!(
            GridFunction::from_fn(log_grid(), |x| x - 1.0),
            Err(GridError::BadValue { .. })
        ));
        let lin = Arc::new(Grid::linear(-1.0, 1.0, 17).unwrap());
        assert!(GridFunction::from_fn(lin, |x| x - 1.0).is_ok());
    }

    #[test]
    fn inverse_of_linear_map() {
        let f = GridFunction::from_fn(log_grid(), |x| 2.0 * x).unwrap();
        assert!((f.inverse(8.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((f.inverse(4e3).unwrap() - 2e3).abs() < 1e-8);
        let bump = GridFunction::from_fn(log_grid(), |x| 1.0 + (x.ln()).powi(2)).unwrap();
        assert_eq!(bump.inverse(2.0), Err(GridError::NotInvertible));
    }

    #[test]
    fn derivatives_of_powers() {
        let f = GridFunction::from_fn(log_grid(), |x| x * x).unwrap();
        for t in [0.01, 1.0, 37.5] {
            assert!((f.derivative(t).unwrap() / (2.0 * t) - 1.0).abs() < 1e-4);
        }
        assert!(f.derivative(1e-3).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let f = GridFunction::from_fn(log_grid(), |x| x + x.sqrt()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x,f\n"));
        let g = GridFunction::read_csv(buf.as_slice()).unwrap();
        assert_eq!(f, g);
        let lin = GridFunction::from_fn(Arc::new(Grid::linear(-2.0, 2.0, 33).unwrap()), |x| x).unwrap();
        let mut buf = Vec::new();
        lin.write_csv(&mut buf).unwrap();
        assert_eq!(GridFunction::read_csv(buf.as_slice()).unwrap(), lin);
    }
}
