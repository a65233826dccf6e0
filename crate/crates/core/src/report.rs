//! Standalone SVG line charts of `mean_ratio` per denoising step.

use std::fmt::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::parse_trace_csv;
use crate::metrics::StepSummary;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub rows: Vec<StepSummary>,
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if c.is_control() => {}
            c => out.push(c),
        }
    }
    out
}

/// Renders one polyline per series. Rows are placed left to right in the
/// order they were logged (first denoising step on the left).
pub fn render_svg(series: &[Series]) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.rows.is_empty()) {
        return Err(Error::MalformedCsv("nothing to plot".into()));
    }
    let longest = series
        .iter()
        .max_by_key(|s| s.rows.len())
        .expect("non-empty");
    let n = longest.rows.len();

    let values = series
        .iter()
        .flat_map(|s| s.rows.iter().map(|r| r.mean_ratio));
    let (mut lo, mut hi) = values.fold((1.0f64, 1.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    lo -= pad;
    hi += pad;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_at = |i: usize| {
        if n == 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y_at = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r##"<?xml version="1.0" encoding="UTF-8"?>"##).unwrap();
    writeln!(
        w,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"##
    )
    .unwrap();
    writeln!(
        w,
        r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"##
    )
    .unwrap();
    writeln!(
        w,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    )
    .unwrap();

    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_at(v);
        writeln!(
            w,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    let first_step = longest.rows[0].step;
    let last_step = longest.rows[n - 1].step;
    let axis_y = TOP + plot_h;
    writeln!(
        w,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="middle">{first_step}</text><text x="{:.2}" y="{:.2}" text-anchor="middle">{last_step}</text>"##,
        x_at(0),
        axis_y + 16.0,
        x_at(n - 1),
        axis_y + 16.0
    )
    .unwrap();
    writeln!(
        w,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="middle">denoising step</text>"##,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    )
    .unwrap();
    writeln!(
        w,
        r##"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">mean e_cfg / e_c</text>"##,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )
    .unwrap();

    // ratio 1: guided energy equals conditional energy
    let one = y_at(1.0);
    writeln!(
        w,
        r##"<line x1="{LEFT}" y1="{one:.2}" x2="{:.2}" y2="{one:.2}" stroke="#999" stroke-dasharray="4 4"/>"##,
        LEFT + plot_w
    )
    .unwrap();

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = s
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{:.2},{:.2}", x_at(i), y_at(r.mean_ratio)))
            .collect();
        writeln!(
            w,
            r##"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"##,
            points.join(" ")
        )
        .unwrap();
        let ly = TOP + 16.0 + 16.0 * k as f64;
        let lx = LEFT + plot_w - 140.0;
        writeln!(
            w,
            r##"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{ly:.2}">{}</text>"##,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0,
            lx + 26.0,
            escape(&s.label)
        )
        .unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok(svg)
}

/// Legend label for a trace file: its parent directory name when the file
/// is the standard `trace.csv`, otherwise the file stem.
pub fn series_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    let parent = path
        .parent()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned());
    match (stem.as_deref(), parent) {
        (Some("trace"), Some(parent)) => parent,
        (Some(stem), _) => stem.to_string(),
        (None, _) => path.display().to_string(),
    }
}

/// Reads each trace CSV and writes one combined chart.
pub fn emit_svg(trace_paths: &[impl AsRef<Path>], out_path: impl AsRef<Path>) -> Result<()> {
    let mut series = Vec::with_capacity(trace_paths.len());
    for path in trace_paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let rows = parse_trace_csv(&bytes).map_err(|e| match e {
            Error::MalformedCsv(m) => Error::MalformedCsv(format!("{}: {m}", path.display())),
            other => other,
        })?;
        series.push(Series {
            label: series_label(path),
            rows,
        });
    }
    let svg = render_svg(&series)?;
    let out = out_path.as_ref();
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}
