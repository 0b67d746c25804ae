//! Hand-rendered SVG line charts: train and test error against CPU time.

use std::fmt::Write as _;

pub struct Series {
    pub name: String,
    /// `(cpu_seconds, train_error, test_error)`.
    pub points: Vec<(f64, f64, f64)>,
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 80.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn map(&self, v: f64, len: f64) -> f64 {
        let (a, b, v) = if self.log {
            (self.lo.log10(), self.hi.log10(), v.log10())
        } else {
            (self.lo, self.hi, v)
        };
        if b > a {
            (v - a) / (b - a) * len
        } else {
            0.5 * len
        }
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (
                self.lo.log10().floor() as i32,
                self.hi.log10().ceil() as i32,
            );
            (a..=b)
                .map(|j| 10f64.powi(j))
                .filter(|t| *t >= self.lo * 0.999 && *t <= self.hi * 1.001)
                .collect()
        } else {
            (0..=4)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0)
                .collect()
        }
    }
}

fn x_axis(series: &[Series], log_x: bool) -> Axis {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    if log_x {
        let pos: Vec<f64> = xs.filter(|x| *x > 0.0 && x.is_finite()).collect();
        let lo = pos.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pos.iter().copied().fold(0.0, f64::max);
        if lo.is_finite() && hi > lo {
            return Axis { lo, hi, log: true };
        }
        return Axis {
            lo: 1e-3,
            hi: 1.0,
            log: true,
        };
    }
    let hi = xs.filter(|x| x.is_finite()).fold(0.0, f64::max);
    Axis {
        lo: 0.0,
        hi: if hi > 0.0 { hi } else { 1.0 },
        log: false,
    }
}

fn y_axis(series: &[Series], pick: fn(&(f64, f64, f64)) -> f64) -> Axis {
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(pick))
        .filter(|v| v.is_finite())
        .collect();
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Axis {
            lo: 0.0,
            hi: 1.0,
            log: false,
        };
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    Axis {
        lo: (lo - pad).max(0.0),
        hi: (hi + pad).min(1.0),
        log: false,
    }
}

fn panel(
    out: &mut String,
    series: &[Series],
    x0: f64,
    title: &str,
    xa: &Axis,
    pick: fn(&(f64, f64, f64)) -> f64,
) {
    let ya = y_axis(series, pick);
    let y0 = MARGIN_T;
    let _ = writeln!(
        out,
        r##"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{title}</text>"#,
        x0 + PANEL_W / 2.0,
        y0 - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">cpu time (s)</text>"#,
        x0 + PANEL_W / 2.0,
        y0 + PANEL_H + 36.0
    );
    for t in xa.ticks() {
        let px = x0 + xa.map(t, PANEL_W);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="#333"/><text x="{px:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"##,
            y0 + PANEL_H,
            y0 + PANEL_H + 5.0,
            y0 + PANEL_H + 18.0,
            tick_label(t)
        );
    }
    for t in ya.ticks() {
        let py = y0 + PANEL_H - ya.map(t, PANEL_H);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"##,
            x0 - 5.0,
            x0 - 8.0,
            py + 3.5,
            tick_label(t)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| pick(p).is_finite() && p.0.is_finite() && (!xa.log || p.0 > 0.0))
            .map(|p| {
                let px = x0 + xa.map(p.0.clamp(xa.lo, xa.hi), PANEL_W);
                let py = y0 + PANEL_H - ya.map(pick(p).clamp(ya.lo, ya.hi), PANEL_H);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            pts.join(" ")
        );
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-2 && v.abs() < 1e4 {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.0e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Two panels (train and test error) sharing the CPU-time axis, with a
/// legend below. The output depends only on the input values.
pub fn render(series: &[Series], log_x: bool) -> String {
    let xa = x_axis(series, log_x);
    let legend_rows = series.len().div_ceil(3).max(1);
    let width = MARGIN_L + 2.0 * PANEL_W + GAP + 20.0;
    let height = MARGIN_T + PANEL_H + 60.0 + 18.0 * legend_rows as f64 + 10.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(&mut out, series, MARGIN_L, "training error", &xa, |p| p.1);
    panel(
        &mut out,
        series,
        MARGIN_L + PANEL_W + GAP,
        "testing error",
        &xa,
        |p| p.2,
    );
    let ly = MARGIN_T + PANEL_H + 56.0;
    for (i, s) in series.iter().enumerate() {
        let lx = MARGIN_L + (i % 3) as f64 * 300.0;
        let y = ly + 18.0 * (i / 3) as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="3"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            y + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Series> {
        vec![
            Series {
                name: "a<b".into(),
                points: vec![(0.0, 0.5, 0.5), (0.1, 0.3, 0.35), (0.4, 0.2, 0.25)],
            },
            Series {
                name: "c".into(),
                points: vec![(0.0, 0.5, 0.5), (0.2, 0.25, f64::NAN)],
            },
        ]
    }

    #[test]
    fn deterministic_and_wellformed() {
        let a = render(&sample(), false);
        assert_eq!(a, render(&sample(), false));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 4);
        assert!(a.contains("a&lt;b"));
    }

    #[test]
    fn log_axis_drops_zero_time() {
        let s = render(&sample(), true);
        assert!(!s.contains("NaN") && !s.contains("inf"));
    }
}
