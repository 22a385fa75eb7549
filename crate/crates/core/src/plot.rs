//! Static SVG plots.

use std::fmt::Write as _;

use crate::envelope::{LinearEnvelope, RefinementTrace};
use crate::gridfn::{GridFunction, Spacing};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
    log_x: bool,
}

impl Axes {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone, log_x: bool) -> Axes {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let tx = |v: f64| if log_x { v.log10() } else { v };
        let mut x = range(&mut xs.map(tx));
        let mut y = range(&mut ys.clone());
        for r in [&mut x, &mut y] {
            if !(r.0.is_finite() && r.1.is_finite()) {
                *r = (0.0, 1.0);
            }
            if r.1 - r.0 <= f64::EPSILON * r.0.abs().max(1.0) {
                *r = (r.0 - 0.5, r.1 + 0.5);
            }
        }
        Axes { x, y, log_x }
    }

    fn px(&self, x: f64) -> f64 {
        let x = if self.log_x { x.log10() } else { x };
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn polyline(&self, out: &mut String, pts: impl Iterator<Item = (f64, f64)>, colour: &str, dashed: bool) {
        let coords: Vec<String> = pts
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_x || *x > 0.0))
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y.clamp(self.y.0, self.y.1))))
            .collect();
        let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            out,
            "  <polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>",
            coords.join(" ")
        );
    }
}

fn open(title: &str, axes: &Axes, x_label: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(out, "  <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>", WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(out, "  <path d=\"M{l},{t} L{l},{b} L{r},{b}\" fill=\"none\" stroke=\"black\"/>");
    let fmt = |v: f64| format!("{v:.3}");
    let x_lo = if axes.log_x { format!("1e{:.1}", axes.x.0) } else { fmt(axes.x.0) };
    let x_hi = if axes.log_x { format!("1e{:.1}", axes.x.1) } else { fmt(axes.x.1) };
    let label = |x: f64, y: f64, anchor: &str, text: &str| {
        format!("  <text x=\"{x:.1}\" y=\"{y:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"{anchor}\">{}</text>\n", escape(text))
    };
    out.push_str(&label(l, b + 16.0, "start", &x_lo));
    out.push_str(&label(r, b + 16.0, "end", &x_hi));
    out.push_str(&label((l + r) / 2.0, b + 32.0, "middle", x_label));
    out.push_str(&label(l - 4.0, b, "end", &fmt(axes.y.0)));
    out.push_str(&label(l - 4.0, t + 4.0, "end", &fmt(axes.y.1)));
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Lower and upper coefficients against the step index.
pub(crate) fn envelope_svg(trace: &RefinementTrace, title: &str) -> String {
    let a: Vec<f64> = trace.states.iter().map(|s| s.a.to_f64()).collect();
    let b: Vec<f64> = trace.states.iter().map(|s| s.b.to_f64()).collect();
    let n = a.len();
    let axes = Axes::new((1..=n).map(|i| i as f64), a.iter().chain(&b).copied(), false);
    let mut out = open(title, &axes, "n");
    axes.polyline(&mut out, a.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)), "#1f77b4", false);
    axes.polyline(&mut out, b.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)), "#d62728", false);
    out.push_str("</svg>\n");
    out
}

/// The sampled function, with `a x` and `b x` dashed when an envelope is given.
pub(crate) fn oracle_svg(gf: &GridFunction, envelope: Option<&LinearEnvelope>, title: &str) -> String {
    let xs = gf.points();
    let log_x = gf.grid().spacing() == Spacing::Log;
    let mut ys: Vec<f64> = gf.values().to_vec();
    if let Some(env) = envelope {
        for x in [xs[0], xs[xs.len() - 1]] {
            ys.push(env.a.to_f64() * x);
            ys.push(env.b.to_f64() * x);
        }
    }
    let axes = Axes::new(xs.iter().copied(), ys.iter().copied(), log_x);
    let mut out = open(title, &axes, "x");
    if let Some(env) = envelope {
        for c in [env.a.to_f64(), env.b.to_f64()] {
            axes.polyline(&mut out, xs.iter().map(|&x| (x, c * x)), "#7f7f7f", true);
        }
    }
    axes.polyline(&mut out, xs.iter().copied().zip(gf.values().iter().copied()), "#1f77b4", false);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridfn::Grid;
    use crate::number::Scalar;
    use std::sync::Arc;

    #[test]
    fn oracle_plot_is_well_formed() {
        let gf = GridFunction::from_fn(Arc::new(Grid::log(1e-3, 1e3, 64).unwrap()), |x| x).unwrap();
        let env = LinearEnvelope::new(Scalar::ratio(1, 2), Scalar::int(2)).unwrap();
        let svg = oracle_svg(&gf, Some(&env), "f <x>");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("f &lt;x&gt;"));
        assert!(!svg.contains("NaN") && !svg.contains("script"));
    }
}
