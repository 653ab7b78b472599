//! Minimal static SVG log-log plots: axes, markers and line overlays.

use std::fmt::Write;

#[derive(Clone, Debug)]
pub enum Style {
    Markers,
    Line,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub style: Style,
    /// (x, y) in data units; non-positive or non-finite points are dropped.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct LogLogPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Free-form comment written into the document, e.g. provenance.
    pub comment: String,
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn log_points(s: &Series) -> Vec<(f64, f64)> {
    s.points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite() && *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace("--", "- -")
}

/// Integer decades covering [lo, hi], widened to at least one decade.
fn decade_range(lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (lo.floor(), hi.ceil());
    if b > a {
        (a, b)
    } else {
        (a - 0.5, a + 0.5)
    }
}

impl LogLogPlot {
    /// Axes are log₁₀ of the data; ticks at integer decades.
    pub fn render(&self) -> String {
        let pts: Vec<Vec<(f64, f64)>> = self.series.iter().map(log_points).collect();
        let all: Vec<&(f64, f64)> = pts.iter().flatten().collect();
        let (x0, x1, y0, y1) = if all.is_empty() {
            (-1.0, 0.0, -1.0, 0.0)
        } else {
            let xs = decade_range(
                all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
                all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
            );
            let ys = decade_range(
                all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
                all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
            );
            (xs.0, xs.1, ys.0, ys.1)
        };
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
        let mut o = String::new();
        let _ =
            writeln!(o, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
        let _ = writeln!(o, "<!-- {} -->", escape(&self.comment));
        let _ = writeln!(o, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            o,
            r#"<text x="{:.1}" y="22" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            o,
            r#"<rect x="{LEFT:.1}" y="{TOP:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#
        );
        let mut d = x0;
        while d <= x1 + 1e-9 {
            let x = sx(d);
            let _ = writeln!(
                o,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                TOP + ph,
                TOP + ph + 5.0
            );
            let _ = writeln!(
                o,
                r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{d}</text>"#,
                TOP + ph + 18.0
            );
            d += 1.0;
        }
        let mut d = y0;
        while d <= y1 + 1e-9 {
            let y = sy(d);
            let _ =
                writeln!(o, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
            let _ = writeln!(
                o,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{d}</text>"#,
                LEFT - 8.0,
                y + 4.0
            );
            d += 1.0;
        }
        let _ = writeln!(
            o,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            o,
            r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, (s, p)) in self.series.iter().zip(&pts).enumerate() {
            match s.style {
                Style::Markers => {
                    for (x, y) in p {
                        let _ = writeln!(
                            o,
                            r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
                            sx(*x),
                            sy(*y),
                            s.color
                        );
                    }
                }
                Style::Line => {
                    if p.len() >= 2 {
                        let path: Vec<String> = p.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
                        let _ = writeln!(
                            o,
                            r#"<polyline class="overlay" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                            path.join(" "),
                            s.color
                        );
                    }
                }
            }
            let ly = TOP + 10.0 + 18.0 * k as f64;
            let lx = W - RIGHT + 12.0;
            match s.style {
                Style::Markers => {
                    let _ = writeln!(o, r#"<circle cx="{:.1}" cy="{ly:.1}" r="4" fill="{}"/>"#, lx + 8.0, s.color);
                }
                Style::Line => {
                    let _ = writeln!(
                        o,
                        r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="1.5"/>"#,
                        lx + 16.0,
                        s.color
                    );
                }
            }
            let _ = writeln!(
                o,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
                lx + 22.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        o.push_str("</svg>\n");
        o
    }
}
