use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::metrics::{read_metrics, MetricsRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub updates: usize,
    /// Mean over the last `tail` aligned updates.
    pub final_accuracy: f64,
    pub final_mean_length: f64,
    pub final_entropy: f64,
}

/// Run A is the first series, run B the second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
    pub aligned_updates: usize,
    /// Series had different lengths and were cut to the common prefix.
    pub truncated: bool,
    pub tail: usize,
    /// `1 − len_A / len_B`.
    pub compression: f64,
    pub accuracy_gap: f64,
    /// Fraction of aligned updates with entropy strictly lower in A than in B.
    pub entropy_below_fraction: f64,
    /// Same, over the final third of aligned updates.
    pub entropy_below_fraction_final_third: f64,
}

fn fraction_below(a: &[MetricsRecord], b: &[MetricsRecord]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let below = a.iter().zip(b).filter(|(x, y)| x.mean_token_entropy < y.mean_token_entropy).count();
    below as f64 / a.len() as f64
}

fn tail_mean(records: &[MetricsRecord], tail: usize, f: impl Fn(&MetricsRecord) -> f64) -> f64 {
    let window = &records[records.len() - tail.min(records.len())..];
    window.iter().map(f).sum::<f64>() / window.len() as f64
}

/// Aligns the series on their common prefix and compares the first two.
pub fn compare_series(series: &[(String, Vec<MetricsRecord>)], tail: usize) -> Result<Comparison> {
    if series.len() < 2 {
        return Err(Error::Config(format!("comparison needs at least two runs, got {}", series.len())));
    }
    if tail == 0 {
        return Err(Error::Config("tail window must be at least 1".into()));
    }
    let aligned = series.iter().map(|(_, s)| s.len()).min().unwrap_or(0);
    if aligned == 0 {
        return Err(Error::EmptyInput("metrics series"));
    }
    let truncated = series.iter().any(|(_, s)| s.len() != aligned);
    let runs: Vec<RunSummary> = series
        .iter()
        .map(|(label, s)| {
            let s = &s[..aligned];
            RunSummary {
                label: label.clone(),
                updates: aligned,
                final_accuracy: tail_mean(s, tail, |r| r.accuracy),
                final_mean_length: tail_mean(s, tail, |r| r.mean_response_length),
                final_entropy: tail_mean(s, tail, |r| r.mean_token_entropy),
            }
        })
        .collect();
    let (a, b) = (&series[0].1[..aligned], &series[1].1[..aligned]);
    let third = aligned - aligned.div_ceil(3);
    let compression = if runs[1].final_mean_length > 0.0 {
        1.0 - runs[0].final_mean_length / runs[1].final_mean_length
    } else {
        0.0
    };
    Ok(Comparison {
        aligned_updates: aligned,
        truncated,
        tail,
        compression,
        accuracy_gap: runs[0].final_accuracy - runs[1].final_accuracy,
        entropy_below_fraction: fraction_below(a, b),
        entropy_below_fraction_final_third: fraction_below(&a[third..], &b[third..]),
        runs,
    })
}

/// Per-update accuracy, length and entropy of every run side by side.
pub fn trajectory_csv(series: &[(String, Vec<MetricsRecord>)], aligned: usize) -> String {
    let mut out = String::from("update");
    for (label, _) in series {
        let _ = write!(out, ",{label}_accuracy,{label}_length,{label}_entropy");
    }
    out.push('\n');
    for u in 0..aligned {
        let _ = write!(out, "{u}");
        for (_, s) in series {
            let r = &s[u];
            let _ = write!(out, ",{},{},{}", r.accuracy, r.mean_response_length, r.mean_token_entropy);
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(cmp: &Comparison) -> String {
    let mut out = String::from("run,updates,final_accuracy,final_mean_length,final_entropy\n");
    for r in &cmp.runs {
        let _ = writeln!(out, "{},{},{},{},{}", r.label, r.updates, r.final_accuracy, r.final_mean_length, r.final_entropy);
    }
    out
}

fn label_for(path: &Path, index: usize) -> String {
    let stem = if path.file_name().and_then(|f| f.to_str()) == Some(crate::harness::train::METRICS_FILE) {
        path.parent().and_then(|p| p.file_name())
    } else {
        path.file_stem()
    };
    let clean: String = stem
        .and_then(|s| s.to_str())
        .unwrap_or("")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if clean.is_empty() {
        format!("run{index}")
    } else {
        clean
    }
}

/// Reads metrics JSONL files, writes the per-update table to `out` and the
/// per-run summary next to it as `<stem>_summary.csv`.
/// Each path is a metrics JSONL file or a run directory containing one.
pub fn compare_runs(paths: &[PathBuf], out: &Path, tail: usize) -> Result<Comparison> {
    let mut series = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let file = if p.is_dir() { p.join(crate::harness::train::METRICS_FILE) } else { p.clone() };
        let p = &file;
        let mut label = label_for(p, i);
        if series.iter().any(|(l, _)| *l == label) {
            label = format!("{label}_{i}");
        }
        series.push((label, read_metrics(p)?));
    }
    let cmp = compare_series(&series, tail)?;
    fs::write(out, trajectory_csv(&series, cmp.aligned_updates))?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("comparison");
    fs::write(out.with_file_name(format!("{stem}_summary.csv")), summary_csv(&cmp))?;
    Ok(cmp)
}
