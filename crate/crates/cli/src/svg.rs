//! Minimal SVG heatmaps and line charts.

use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 56.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Viridis-like ramp on `[0, 1]`.
fn colour(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * (STOPS.len() - 1) as f64;
    let k = (s.floor() as usize).min(STOPS.len() - 2);
    let f = s - k as f64;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    let mix = |x: f64, y: f64| (x + f * (y - x)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Heatmap of `cells` given as `(column, row, value)` on an `nx × ny` lattice;
/// missing cells stay blank. Row 0 is drawn at the bottom.
pub fn heatmap(title: &str, nx: usize, ny: usize, cells: &[(usize, usize, f64)]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let (lo, hi) = cells
        .iter()
        .filter(|c| c.2.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(c.2), h.max(c.2)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let side = (HEIGHT - 2.0 * MARGIN).min(WIDTH - 3.0 * MARGIN);
    let (cw, ch) = (side / nx.max(1) as f64, side / ny.max(1) as f64);
    let x0 = MARGIN;
    let y0 = MARGIN;
    for &(i, j, v) in cells {
        let x = x0 + i as f64 * cw;
        let y = y0 + (ny - 1 - j) as f64 * ch;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            cw + 0.05,
            ch + 0.05,
            colour((v - lo) / span)
        );
    }
    // colour bar
    let bx = x0 + side + 20.0;
    for k in 0..32 {
        let t = k as f64 / 31.0;
        let y = y0 + side * (1.0 - t) - side / 32.0;
        let _ = writeln!(
            out,
            r#"<rect x="{bx:.2}" y="{y:.2}" width="14" height="{:.2}" fill="{}"/>"#,
            side / 32.0 + 0.05,
            colour(t)
        );
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, bx + 18.0, y0 + 8.0, fmt_tick(hi));
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, bx + 18.0, y0 + side, fmt_tick(lo));
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Axes<'a> {
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_x: bool,
    pub log_y: bool,
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-2 && v.abs() < 1e4 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

/// Line chart with markers. Nonpositive values are dropped on log axes.
pub fn line_chart(title: &str, axes: Axes, series: &[Series]) -> String {
    let tx = |v: f64| if axes.log_x { v.log10() } else { v };
    let ty = |v: f64| if axes.log_y { v.log10() } else { v };
    let keep = |p: &&(f64, f64)| {
        p.0.is_finite() && p.1.is_finite() && (!axes.log_x || p.0 > 0.0) && (!axes.log_y || p.1 > 0.0)
    };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.points.iter().filter(keep).map(|&(x, y)| (tx(x), ty(y))).collect())
        .collect();
    let mut bounds = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.iter().flatten() {
        bounds = (bounds.0.min(x), bounds.1.max(x), bounds.2.min(y), bounds.3.max(y));
    }
    if !bounds.0.is_finite() {
        bounds = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        if hi > lo {
            let d = 0.05 * (hi - lo);
            (lo - d, hi + d)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (xlo, xhi) = pad(bounds.0, bounds.1);
    let (ylo, yhi) = pad(bounds.2, bounds.3);
    let pw = WIDTH - 2.0 * MARGIN;
    let ph = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - xlo) / (xhi - xlo) * pw;
    let sy = |y: f64| HEIGHT - MARGIN - (y - ylo) / (yhi - ylo) * ph;

    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (xlo + f * (xhi - xlo), ylo + f * (yhi - ylo));
        let show = |v: f64, log: bool| fmt_tick(if log { 10f64.powf(v) } else { v });
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            HEIGHT - MARGIN + 14.0,
            show(xv, axes.log_x)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            sy(yv) + 4.0,
            show(yv, axes.log_y)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(axes.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(axes.y_label)
    );
    for (k, (s, p)) in series.iter().zip(&pts).enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        if p.len() > 1 {
            let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in p {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#, sx(x), sy(y));
        }
        let ly = MARGIN + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{c}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN - 6.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_draws_one_rect_per_cell_plus_bar() {
        let cells: Vec<_> = (0..3).flat_map(|i| (0..2).map(move |j| (i, j, (i + j) as f64))).collect();
        let s = heatmap("t", 3, 2, &cells);
        assert_eq!(s.matches("<rect").count(), 1 + 6 + 32);
        assert!(s.ends_with("</svg>\n"));
    }

    #[test]
    fn log_chart_skips_nonpositive_points() {
        let s = line_chart(
            "a < b",
            Axes {
                log_y: true,
                ..Default::default()
            },
            &[Series {
                label: "r".into(),
                points: vec![(0.0, 1.0), (1.0, 0.0), (2.0, 0.1)],
            }],
        );
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.contains("a &lt; b"));
    }

    #[test]
    fn colour_ramp_endpoints() {
        assert_eq!(colour(0.0), "#440154");
        assert_eq!(colour(1.0), "#fde725");
        assert_eq!(colour(f64::NAN), "#440154");
    }
}
