//! Result persistence: tidy CSV measurements, a JSON summary, and standalone
//! SVG log-log plots.  All writes go through a temp file plus rename so a
//! crash never leaves a partially written artifact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::{HomogError, Result};

/// One measured number with its full parameter context.  Optional columns
/// print as empty cells so the CSV schema is fixed across experiment kinds.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MeasurementRow {
    pub experiment: String,
    pub quantity: String,
    pub d: usize,
    pub alpha: f64,
    pub k: Option<u32>,
    pub m: Option<u32>,
    pub r: Option<f64>,
    pub seed: Option<u64>,
    pub t: Option<f64>,
    pub value: f64,
}

pub const CSV_HEADER: &str = "experiment,quantity,d,alpha,k,m,R,seed,t,value";

fn push_opt<T: std::fmt::Display>(line: &mut String, v: &Option<T>) {
    line.push(',');
    if let Some(v) = v {
        let _ = write!(line, "{v}");
    }
}

impl MeasurementRow {
    pub fn to_csv_line(&self) -> String {
        let mut line = format!("{},{},{},{}", self.experiment, self.quantity, self.d, self.alpha);
        push_opt(&mut line, &self.k);
        push_opt(&mut line, &self.m);
        push_opt(&mut line, &self.r);
        push_opt(&mut line, &self.seed);
        push_opt(&mut line, &self.t);
        let _ = write!(line, ",{}", self.value);
        line
    }
}

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| HomogError::Io(std::io::Error::new(e.kind(), format!("cannot create {}: {e}", dir.display()))))?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
    ));
    std::fs::write(&tmp, bytes)
        .map_err(|e| HomogError::Io(std::io::Error::new(e.kind(), format!("cannot write {}: {e}", tmp.display()))))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| HomogError::Io(std::io::Error::new(e.kind(), format!("cannot rename to {}: {e}", path.display()))))?;
    Ok(())
}

pub fn write_csv(path: &Path, rows: &[MeasurementRow]) -> Result<()> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

// ---------------------------------------------------------------------------
// SVG log-log plots

/// One plotted curve: positive (x, y) points plus an optional fitted power
/// law drawn as a straight line in log-log coordinates.
pub struct PlotSeries<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
    /// (slope, intercept) of ln y = slope ln x + intercept
    pub fit: Option<(f64, f64)>,
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Renders a log-log scatter with fitted lines into a standalone SVG string.
pub fn loglog_svg(title: &str, series: &[PlotSeries]) -> Result<String> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for &(x, y) in s.points {
            if x > 0.0 && y > 0.0 {
                xs.push(x.ln());
                ys.push(y.ln());
            }
        }
    }
    if xs.is_empty() {
        return Err(HomogError::Argument("plot needs at least one positive point".into()));
    }
    let pad = |lo: f64, hi: f64| {
        let span = (hi - lo).max(1e-12);
        (lo - 0.08 * span, hi + 0.08 * span)
    };
    let (x0, x1) = pad(xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = pad(ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let px = |lx: f64| MARGIN + (lx - x0) / (x1 - x0) * (PLOT_W - 2.0 * MARGIN);
    let py = |ly: f64| PLOT_H - MARGIN - (ly - y0) / (y1 - y0) * (PLOT_H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         viewBox=\"0 0 {PLOT_W} {PLOT_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"14\">{}</text>\n",
        PLOT_W / 2.0,
        xml_escape(title)
    );
    // axes
    let _ = write!(
        svg,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        PLOT_W - 2.0 * MARGIN,
        PLOT_H - 2.0 * MARGIN
    );
    // decade tick labels on both axes (natural-log grid shown as e^k)
    for k in (x0.ceil() as i64)..=(x1.floor() as i64) {
        let x = px(k as f64);
        let _ = write!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{MARGIN}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"10\">e^{k}</text>\n",
            PLOT_H - MARGIN,
            PLOT_H - MARGIN + 16.0
        );
    }
    for k in (y0.ceil() as i64)..=(y1.floor() as i64) {
        let y = py(k as f64);
        let _ = write!(
            svg,
            "<line x1=\"{MARGIN}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"10\">e^{k}</text>\n",
            PLOT_W - MARGIN,
            MARGIN - 6.0,
            y + 3.0
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if let Some((slope, intercept)) = s.fit {
            let _ = write!(
                svg,
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-dasharray=\"4 3\"/>\n",
                px(x0),
                py(slope * x0 + intercept),
                px(x1),
                py(slope * x1 + intercept)
            );
        }
        for &(x, y) in s.points {
            if x > 0.0 && y > 0.0 {
                let _ = write!(
                    svg,
                    "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"{color}\"/>\n",
                    px(x.ln()),
                    py(y.ln())
                );
            }
        }
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            MARGIN + 8.0,
            MARGIN + 16.0 + 14.0 * i as f64,
            xml_escape(s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_loglog_svg(path: &Path, title: &str, series: &[PlotSeries]) -> Result<()> {
    write_atomic(path, loglog_svg(title, series)?.as_bytes())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
