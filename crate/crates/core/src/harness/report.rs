use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::metrics::{read_metrics, MetricsRecord};
use crate::harness::train::METRICS_FILE;

pub fn trajectories_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("update,accuracy,mean_response_length,mean_token_entropy,mean_u_t,mean_prune_index\n");
    for r in records {
        let prune = r.mean_prune_index.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.update, r.accuracy, r.mean_response_length, r.mean_token_entropy, r.mean_u_t, prune
        );
    }
    out
}

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 48.0;

fn panel(svg: &mut String, x0: f64, title: &str, values: &[f64], color: &str) {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let last = values.len().saturating_sub(1).max(1) as f64;
    let plot_w = PANEL_W - 2.0 * MARGIN;
    let plot_h = PANEL_H - 2.0 * MARGIN;
    let _ = writeln!(
        svg,
        r##"<g transform="translate({x0},0)"><text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"##,
        PANEL_W / 2.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#999"/>"##
    );
    let _ = writeln!(
        svg,
        r##"<text x="{}" y="{}" text-anchor="end" font-size="10">{hi:.3}</text><text x="{}" y="{}" text-anchor="end" font-size="10">{lo:.3}</text>"##,
        MARGIN - 4.0,
        MARGIN + 4.0,
        MARGIN - 4.0,
        MARGIN + plot_h
    );
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let x = MARGIN + plot_w * i as f64 / last;
            let y = MARGIN + plot_h * (1.0 - (v - lo) / span);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/></g>"##,
        points.join(" ")
    );
}

/// Two-panel line chart of entropy and response length against update.
pub fn trajectories_svg(records: &[MetricsRecord]) -> String {
    let mut svg = format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{PANEL_H}" font-family="sans-serif">"##,
        2.0 * PANEL_W
    );
    svg.push('\n');
    let entropy: Vec<f64> = records.iter().map(|r| r.mean_token_entropy).collect();
    let length: Vec<f64> = records.iter().map(|r| r.mean_response_length).collect();
    panel(&mut svg, 0.0, "mean token entropy (nats)", &entropy, "#1f77b4");
    panel(&mut svg, PANEL_W, "mean response length (tokens)", &length, "#d62728");
    svg.push_str("</svg>\n");
    svg
}

/// Writes `trajectories.csv` and `trajectories.svg` into the run directory.
pub fn write_report(run_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let records = read_metrics(&run_dir.join(METRICS_FILE))?;
    if records.is_empty() {
        return Err(Error::EmptyInput("metrics series"));
    }
    let csv = run_dir.join("trajectories.csv");
    let svg = run_dir.join("trajectories.svg");
    fs::write(&csv, trajectories_csv(&records))?;
    fs::write(&svg, trajectories_svg(&records))?;
    Ok((csv, svg))
}
