//! Static SVG views over the JSON reports: horizontal bars and a
//! one-row-per-feature strip scatter. Output is a pure function of the input
//! values, so identical reports give identical files.

use std::fmt::Write;

const WIDTH: f64 = 760.0;
const ROW: f64 = 26.0;
const TOP: f64 = 48.0;
const LEFT: f64 = 250.0;
const RIGHT: f64 = 40.0;
const BOTTOM: f64 = 44.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Maps `[lo, hi]` onto the plot's x pixels.
struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn covering(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            lo: if lo < 0.0 { lo - pad } else { lo },
            hi: hi + pad,
        }
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.lo) / (self.hi - self.lo) * (WIDTH - LEFT - RIGHT)
    }

    fn draw(&self, out: &mut String, y: f64, label: &str) {
        let _ = writeln!(
            out,
            r#"<line x1="{LEFT:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="black"/>"#,
            WIDTH - RIGHT
        );
        for k in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * f64::from(k) / 4.0;
            let x = self.px(v);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.1}" y1="{y:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                y + 4.0,
                y + 17.0,
                tick(v)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            y + 34.0,
            escape(label)
        );
        let zero = self.px(0.0);
        let _ = writeln!(
            out,
            r##"<line x1="{zero:.1}" y1="{TOP:.1}" x2="{zero:.1}" y2="{y:.1}" stroke="#888" stroke-dasharray="3,3"/>"##
        );
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

/// Horizontal bar chart, one bar per `(label, value)` in the given order.
pub fn bar_chart(title: &str, value_label: &str, bars: &[(String, f64)]) -> String {
    let height = TOP + ROW * bars.len().max(1) as f64 + BOTTOM;
    let mut out = String::new();
    header(&mut out, height, title);
    let axis = Axis::covering(bars.iter().map(|b| b.1));
    let zero = axis.px(0.0);
    for (k, (label, v)) in bars.iter().enumerate() {
        let y = TOP + ROW * k as f64;
        let x = axis.px(*v);
        let (x0, w) = if x >= zero {
            (zero, x - zero)
        } else {
            (x, zero - x)
        };
        let fill = if *v >= 0.0 { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + ROW * 0.65,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.1}" y="{:.1}" width="{w:.1}" height="{:.1}" fill="{fill}"><title>{}</title></rect>"#,
            y + 4.0,
            ROW - 8.0,
            tick(*v)
        );
    }
    axis.draw(&mut out, TOP + ROW * bars.len().max(1) as f64, value_label);
    out.push_str("</svg>\n");
    out
}

/// One point of a strip scatter.
pub struct StripPoint {
    pub row: usize,
    pub x: f64,
    /// Colour position in `[0, 1]`: blue (low) to red (high).
    pub shade: f64,
    /// Any integer; spreads points vertically within a row.
    pub jitter_key: usize,
}

fn shade_colour(t: f64) -> String {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.5
    };
    let r = (31.0 + t * (214.0 - 31.0)).round() as u8;
    let g = (119.0 + t * (39.0 - 119.0)).round() as u8;
    let b = (180.0 + t * (40.0 - 180.0)).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// One row per label; each point sits at its x value, coloured by `shade`.
pub fn strip_scatter(
    title: &str,
    value_label: &str,
    rows: &[String],
    points: &[StripPoint],
) -> String {
    let height = TOP + ROW * rows.len().max(1) as f64 + BOTTOM;
    let mut out = String::new();
    header(&mut out, height, title);
    let axis = Axis::covering(points.iter().map(|p| p.x));
    for (k, label) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            TOP + ROW * k as f64 + ROW * 0.65,
            escape(label)
        );
    }
    for p in points {
        // deterministic spread in (-0.35, 0.35) of a row
        let j = ((p.jitter_key.wrapping_mul(2654435761) % 1000) as f64 / 1000.0 - 0.5) * 0.7;
        let y = TOP + ROW * (p.row as f64 + 0.5 + j);
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{y:.1}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            axis.px(p.x),
            shade_colour(p.shade)
        );
    }
    axis.draw(&mut out, TOP + ROW * rows.len().max(1) as f64, value_label);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_are_deterministic_and_escaped() {
        let bars = vec![("a<b".to_string(), 0.5), ("c".to_string(), -0.25)];
        let a = bar_chart("t", "v", &bars);
        assert_eq!(a, bar_chart("t", "v", &bars));
        assert!(a.contains("a&lt;b"));
        assert_eq!(a.matches("<rect x=").count(), 2);
    }

    #[test]
    fn scatter_has_one_circle_per_point() {
        let pts: Vec<StripPoint> = (0..6)
            .map(|k| StripPoint {
                row: k % 2,
                x: k as f64 - 2.0,
                shade: k as f64 / 5.0,
                jitter_key: k,
            })
            .collect();
        let s = strip_scatter("t", "phi", &["a".into(), "b".into()], &pts);
        assert_eq!(s.matches("<circle").count(), 6);
        assert_eq!(shade_colour(0.0), "#1f77b4");
    }
}
