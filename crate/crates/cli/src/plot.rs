//! Deterministic SVG line charts over trace CSVs.
//!
//! The renderer is intentionally plain: fixed canvas, fixed palette, fixed
//! number formatting. Re-rendering the same inputs produces identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subspace_perturb::Error;

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 560.0;
const MARGIN_L: f64 = 78.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 46.0;
const MARGIN_B: f64 = 54.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Which trace column drives the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XAxis {
    Transmissions,
    Round,
}

impl XAxis {
    fn column(self) -> &'static str {
        match self {
            XAxis::Transmissions => "transmissions",
            XAxis::Round => "round",
        }
    }
}

fn default_column() -> String {
    "primal_err_sq".into()
}
fn default_log_y() -> bool {
    true
}
fn default_x_axis() -> XAxis {
    XAxis::Transmissions
}

/// One line on the chart: a trace file, the column to plot and its label.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    pub file: PathBuf,
    pub label: String,
    #[serde(default = "default_column")]
    pub column: String,
}

/// Figure description read from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    pub series: Vec<SeriesSpec>,
    #[serde(default = "default_x_axis")]
    pub x_axis: XAxis,
    #[serde(default = "default_log_y")]
    pub log_y: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub output: PathBuf,
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

/// Pull `(x, y)` pairs out of a trace CSV, skipping the schema comment line
/// and, in log mode, non-positive values.
fn load_series(spec: &SeriesSpec, x_axis: XAxis, log_y: bool) -> Result<Series, Error> {
    let text = fs::read_to_string(&spec.file)?;
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty());
    let header = lines.next().ok_or_else(|| {
        Error::InvalidConfig(format!("{}: empty trace file", spec.file.display()))
    })?;
    let columns: Vec<&str> = header.split(',').collect();
    let find = |name: &str| -> Result<usize, Error> {
        columns.iter().position(|c| *c == name).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "{}: column {name:?} not present (have {columns:?})",
                spec.file.display()
            ))
        })
    };
    let xi = find(x_axis.column())?;
    let yi = find(&spec.column)?;
    let mut points = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::InvalidConfig(format!(
                "{}: malformed row {line:?}",
                spec.file.display()
            )));
        }
        if fields[yi].is_empty() {
            continue;
        }
        let x: f64 = fields[xi]
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad number {:?}", fields[xi])))?;
        let y: f64 = fields[yi]
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad number {:?}", fields[yi])))?;
        if log_y && y <= 0.0 {
            continue;
        }
        points.push((x, y));
    }
    if points.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{}: no plottable rows in column {:?}",
            spec.file.display(),
            spec.column
        )));
    }
    Ok(Series {
        label: spec.label.clone(),
        points,
    })
}

/// Render the figure; returns the output path written.
pub fn render(spec: &PlotSpec, output_override: Option<&Path>) -> Result<PathBuf, Error> {
    if spec.series.is_empty() {
        return Err(Error::InvalidConfig(
            "plot needs at least one series".into(),
        ));
    }
    let series: Vec<Series> = spec
        .series
        .iter()
        .map(|s| load_series(s, spec.x_axis, spec.log_y))
        .collect::<Result<_, _>>()?;

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &series {
        for &(x, y) in &s.points {
            let y = if spec.log_y { y.log10() } else { y };
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_T + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"Helvetica,Arial,sans-serif\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    if let Some(title) = &spec.title {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
            MARGIN_L + plot_w / 2.0,
            escape(title)
        );
    }

    // Axes frame.
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_L:.1}\" y=\"{MARGIN_T:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>"
    );

    // X ticks: five evenly spaced.
    for i in 0..=4 {
        let x = x_min + (x_max - x_min) * i as f64 / 4.0;
        let px = sx(x);
        let _ = writeln!(
            svg,
            "<line x1=\"{px:.2}\" y1=\"{:.1}\" x2=\"{px:.2}\" y2=\"{:.1}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{px:.2}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            MARGIN_T + plot_h + 20.0,
            format_tick(x)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0,
        spec.x_axis.column()
    );

    // Y ticks: decades in log mode, five splits otherwise.
    let y_ticks: Vec<f64> = if spec.log_y {
        let lo = y_min.floor() as i64;
        let hi = y_max.ceil() as i64;
        let span = (hi - lo).max(1);
        let step = ((span as f64) / 8.0).ceil() as i64;
        (lo..=hi)
            .step_by(step.max(1) as usize)
            .map(|e| e as f64)
            .collect()
    } else {
        (0..=4)
            .map(|i| y_min + (y_max - y_min) * i as f64 / 4.0)
            .collect()
    };
    for &y in &y_ticks {
        let py = sy(y);
        if !(MARGIN_T - 1.0..=MARGIN_T + plot_h + 1.0).contains(&py) {
            continue;
        }
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{py:.2}\" x2=\"{:.1}\" y2=\"{py:.2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
            MARGIN_L,
            MARGIN_L + plot_w
        );
        let label = if spec.log_y {
            format!("1e{}", y as i64)
        } else {
            format_tick(y)
        };
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{label}</text>",
            MARGIN_L - 8.0,
            py + 4.0
        );
    }

    // Series polylines.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        for &(x, y) in &s.points {
            let y = if spec.log_y { y.log10() } else { y };
            let _ = write!(path, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>",
            path.trim_end()
        );
    }

    // Legend, top right inside the frame.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_T + 16.0 + 18.0 * i as f64;
        let x = MARGIN_L + plot_w - 180.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            x + 22.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>",
            x + 28.0,
            y + 4.0,
            escape(&s.label)
        );
    }
    let _ = writeln!(svg, "</svg>");

    let output = output_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| spec.output.clone());
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&output, svg)?;
    Ok(output)
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e5 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
