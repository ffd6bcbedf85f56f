//! Minimal static SVG charts: polylines and point clouds.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log2_x: bool,
    pub series: Vec<Series>,
}

struct Scale {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, from: f64, to: f64) -> Self {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Self { lo, hi, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    fn finite_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let log = self.log2_x;
        self.series
            .iter()
            .flat_map(|s| s.points.iter())
            .map(move |&(x, y)| (if log { x.log2() } else { x }, y))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    }

    fn render(&self, lines: bool) -> String {
        let xs = Scale::new(self.finite_points().map(|p| p.0), MARGIN, WIDTH - MARGIN);
        let ys = Scale::new(self.finite_points().map(|p| p.1), HEIGHT - MARGIN, MARGIN);
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
        let _ = writeln!(
            out,
            r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
        );
        for (v, anchor, x, y) in [
            (xs.lo, "start", x0, y0 + 16.0),
            (xs.hi, "end", x1, y0 + 16.0),
        ] {
            let label = if self.log2_x { format!("{:.4}", v.exp2()) } else { format!("{v:.4}") };
            let _ = writeln!(out, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{label}</text>"#);
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, x0 - 4.0, y0, ys.lo);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, x0 - 4.0, y1 + 4.0, ys.hi);
        let x_label = if self.log2_x { format!("{} (log2)", self.x_label) } else { self.x_label.clone() };
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0,
            escape(&x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .map(|&(x, y)| (if self.log2_x { x.log2() } else { x }, y))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| (xs.map(x), ys.map(y)))
                .collect();
            if lines {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    path.join(" ")
                );
            }
            for (x, y) in &pts {
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
            }
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                x1 - 120.0,
                y1 + 14.0 * k as f64,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }

    pub fn line_svg(&self) -> String {
        self.render(true)
    }

    pub fn scatter_svg(&self) -> String {
        self.render(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_finite_points_only() {
        let chart = Chart {
            title: "a<b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log2_x: true,
            series: vec![Series {
                name: "s".into(),
                points: vec![(1.0, 1.0), (4.0, 2.0), (8.0, f64::NAN)],
            }],
        };
        let svg = chart.line_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
