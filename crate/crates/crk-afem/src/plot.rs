//! Self-contained log-log SVG convergence plots: data polylines plus dashed
//! reference-slope guide lines. Byte-deterministic for identical inputs.

use std::fmt::Write as _;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const ML: f64 = 70.0;
const MR: f64 = 24.0;
const MT: f64 = 36.0;
const MB: f64 = 56.0;

/// Render a log-log plot. Reference lines are anchored at the last point of
/// the first series and drawn with the given slopes.
pub fn loglog_svg(title: &str, series: &[Series<'_>], ref_slopes: &[(f64, &str)]) -> String {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(x, y)| x > 0.0 && y > 0.0)
        .collect();
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    )
    .unwrap();
    writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>").unwrap();
    writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{title}</text>",
        W / 2.0
    )
    .unwrap();
    if pts.is_empty() {
        writeln!(svg, "</svg>").unwrap();
        return svg;
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    x0 = x0.floor();
    x1 = x1.ceil();
    y0 = y0.floor();
    y1 = y1.ceil();
    if x1 - x0 < 1.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1.0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| ML + (x.log10() - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y.log10() - y0) / (y1 - y0) * (H - MT - MB);

    // frame and decade ticks
    writeln!(
        svg,
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>",
        W - ML - MR,
        H - MT - MB
    )
    .unwrap();
    let mut d = x0 as i64;
    while d <= x1 as i64 {
        let x = sx(10f64.powi(d as i32));
        writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{MT}\" x2=\"{x:.2}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>",
            H - MB
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">1e{d}</text>",
            H - MB + 18.0
        )
        .unwrap();
        d += 1;
    }
    let mut d = y0 as i64;
    while d <= y1 as i64 {
        let y = sy(10f64.powi(d as i32));
        writeln!(
            svg,
            "<line x1=\"{ML}\" y1=\"{y:.2}\" x2=\"{:.1}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            W - MR
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">1e{d}</text>",
            ML - 6.0
        )
        .unwrap();
        d += 1;
    }
    writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">degrees of freedom</text>",
        (ML + W - MR) / 2.0,
        H - 14.0
    )
    .unwrap();

    // reference slope guides anchored at the last point of the first series
    if let Some(anchor) = series
        .first()
        .and_then(|s| s.points.iter().rev().find(|&&(x, y)| x > 0.0 && y > 0.0))
    {
        for &(slope, label) in ref_slopes {
            let (ax, ay) = *anchor;
            // draw across two decades to the left of the anchor
            let xl = ax / 100.0;
            let yl = ay * (xl / ax).powf(slope);
            writeln!(
                svg,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#888888\" stroke-dasharray=\"6 4\"/>",
                sx(xl),
                sy(yl),
                sx(ax),
                sy(ay)
            )
            .unwrap();
            writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#666666\">{label}</text>",
                sx(xl) + 4.0,
                sy(yl) - 4.0
            )
            .unwrap();
        }
    }

    for (i, s) in series.iter().enumerate() {
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|&&(x, y)| x > 0.0 && y > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if path.is_empty() {
            continue;
        }
        writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            s.color,
            path.join(" ")
        )
        .unwrap();
        let ly = MT + 18.0 + 16.0 * i as f64;
        writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            ML + 10.0,
            ML + 34.0,
            s.color
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            ML + 40.0,
            ly + 4.0,
            s.label
        )
        .unwrap();
    }
    writeln!(svg, "</svg>").unwrap();
    svg
}
