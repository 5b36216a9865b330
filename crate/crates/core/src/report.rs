//! Round metrics, summary statistics and run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Evaluation of the global model after `round` completed rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub client_accuracy: Vec<f64>,
    /// Weighted by client test-set sizes.
    pub mean_accuracy: f64,
    pub worst_accuracy: f64,
    /// Mean local objective over the preceding round; absent before training.
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub top_k: usize,
    pub top_k_mean_accuracy: f64,
    /// Top-k mean of the per-round worst-client accuracy.
    pub top_k_worst_accuracy: f64,
    pub acc_threshold: f64,
    pub rounds_to_threshold: Option<usize>,
    pub final_mean_accuracy: f64,
    pub final_worst_accuracy: f64,
}

impl Summary {
    pub fn from_series(rounds: &[RoundMetrics], top_k: usize, acc_threshold: f64) -> Result<Self> {
        let last = rounds
            .last()
            .ok_or_else(|| Error::Input("no evaluated rounds to summarize".into()))?;
        let mean: Vec<f64> = rounds.iter().map(|r| r.mean_accuracy).collect();
        let worst: Vec<f64> = rounds.iter().map(|r| r.worst_accuracy).collect();
        Ok(Self {
            top_k,
            top_k_mean_accuracy: top_k_mean(&mean, top_k)?,
            top_k_worst_accuracy: top_k_mean(&worst, top_k)?,
            acc_threshold,
            rounds_to_threshold: rounds_to_threshold(rounds, acc_threshold),
            final_mean_accuracy: last.mean_accuracy,
            final_worst_accuracy: last.worst_accuracy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub rounds: Vec<RoundMetrics>,
    pub summary: Summary,
    pub duration_secs: f64,
}

/// Mean of the `k` largest values; `k` is clamped to the series length.
pub fn top_k_mean(series: &[f64], k: usize) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Input("top-k mean of an empty series".into()));
    }
    if k == 0 {
        return Err(Error::Input("top-k mean needs k >= 1".into()));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(sorted.len());
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// First evaluated round whose mean accuracy reaches `threshold`.
pub fn rounds_to_threshold(rounds: &[RoundMetrics], threshold: f64) -> Option<usize> {
    rounds
        .iter()
        .find(|r| r.mean_accuracy >= threshold)
        .map(|r| r.round)
}

/// `baseline / rounds`, absent if either never reached the threshold.
pub fn speedup(baseline: Option<usize>, rounds: Option<usize>) -> Option<f64> {
    match (baseline, rounds) {
        (Some(b), Some(r)) if r > 0 => Some(b as f64 / r as f64),
        (Some(0), Some(0)) => Some(1.0),
        _ => None,
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

pub fn summary_text(report: &RunReport) -> String {
    let s = &report.summary;
    let mut out = String::new();
    let _ = writeln!(out, "algorithm: {}", report.config.algorithm.kind);
    let _ = writeln!(out, "seed: {}", report.config.schedule.seed);
    let _ = writeln!(out, "evaluated rounds: {}", report.rounds.len());
    let _ = writeln!(out, "top-{} mean accuracy: {}", s.top_k, pct(s.top_k_mean_accuracy));
    let _ = writeln!(
        out,
        "top-{} worst-client accuracy: {}",
        s.top_k,
        pct(s.top_k_worst_accuracy)
    );
    let _ = writeln!(
        out,
        "rounds to {}% mean accuracy: {}",
        pct(s.acc_threshold),
        s.rounds_to_threshold.map_or_else(|| "-".to_string(), |r| r.to_string())
    );
    let _ = writeln!(out, "final mean accuracy: {}", pct(s.final_mean_accuracy));
    let _ = writeln!(out, "final worst-client accuracy: {}", pct(s.final_worst_accuracy));
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path.display().to_string(), format!("{other:?}")),
    }
}

/// Writes `metrics.csv`, `report.json`, `summary.txt` and one two-column
/// TSV per accuracy series into `dir` (created if needed).
pub fn export_run(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_metrics_csv(&report.rounds, &dir.join(METRICS_FILE))?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Internal(format!("serializing report: {e}")))?;
    write_file(&dir.join(REPORT_FILE), &json)?;
    write_file(&dir.join(SUMMARY_FILE), &summary_text(report))?;
    for (name, pick) in [
        ("mean_acc.tsv", (|r: &RoundMetrics| r.mean_accuracy) as fn(&RoundMetrics) -> f64),
        ("worst_acc.tsv", |r: &RoundMetrics| r.worst_accuracy),
    ] {
        let mut text = String::from("round\tvalue\n");
        for r in &report.rounds {
            let _ = writeln!(text, "{}\t{}", r.round, pick(r));
        }
        write_file(&dir.join(name), &text)?;
    }
    Ok(())
}

/// Header: `round,mean_acc,worst_acc,client_0..client_{N-1},train_loss`.
pub fn write_metrics_csv(rounds: &[RoundMetrics], path: &Path) -> Result<()> {
    let clients = rounds.first().map_or(0, |r| r.client_accuracy.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["round".to_string(), "mean_acc".into(), "worst_acc".into()];
    header.extend((0..clients).map(|i| format!("client_{i}")));
    header.push("train_loss".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rounds {
        if r.client_accuracy.len() != clients {
            return Err(Error::Input(format!(
                "round {} has {} client accuracies, expected {clients}",
                r.round,
                r.client_accuracy.len()
            )));
        }
        let mut row = vec![
            r.round.to_string(),
            r.mean_accuracy.to_string(),
            r.worst_accuracy.to_string(),
        ];
        row.extend(r.client_accuracy.iter().map(f64::to_string));
        row.push(r.train_loss.map_or_else(String::new, |l| l.to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RoundMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let n = header.len();
    let bad = |line: usize, msg: String| Error::parse(format!("{}:{line}", path.display()), msg);
    if n < 4 || &header[0] != "round" || &header[1] != "mean_acc" || &header[2] != "worst_acc" || &header[n - 1] != "train_loss" {
        return Err(bad(1, "unexpected metrics header".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .map_err(|_| bad(line, format!("column {} is not a number: '{}'", &header[j], &rec[j])))
        };
        let round = rec[0]
            .parse::<usize>()
            .map_err(|_| bad(line, format!("bad round index '{}'", &rec[0])))?;
        out.push(RoundMetrics {
            round,
            mean_accuracy: num(1)?,
            worst_accuracy: num(2)?,
            client_accuracy: (3..n - 1).map(num).collect::<Result<_>>()?,
            train_loss: if rec[n - 1].is_empty() { None } else { Some(num(n - 1)?) },
        });
    }
    Ok(out)
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub top_k_mean_accuracy: f64,
    pub top_k_worst_accuracy: f64,
    pub rounds_to_threshold: Option<usize>,
    pub speedup: Option<f64>,
}

/// Compares several run directories against the one at `baseline`.
pub fn compare_runs(
    dirs: &[PathBuf],
    baseline: usize,
    top_k: usize,
    threshold: f64,
) -> Result<Vec<ComparisonRow>> {
    if dirs.len() < 2 {
        return Err(Error::Comparison(format!("need at least 2 runs, got {}", dirs.len())));
    }
    if baseline >= dirs.len() {
        return Err(Error::Comparison(format!("baseline index {baseline} out of range")));
    }
    let series: Vec<Vec<RoundMetrics>> = dirs
        .iter()
        .map(|d| read_metrics_csv(&d.join(METRICS_FILE)))
        .collect::<Result<_>>()?;
    let cadence = |s: &[RoundMetrics]| s.iter().map(|r| r.round).collect::<Vec<_>>();
    let reference = cadence(&series[baseline]);
    for (d, s) in dirs.iter().zip(&series) {
        if cadence(s) != reference {
            return Err(Error::Comparison(format!(
                "{} was evaluated at different rounds than {}",
                d.display(),
                dirs[baseline].display()
            )));
        }
    }
    let base_rounds = rounds_to_threshold(&series[baseline], threshold);
    dirs.iter()
        .zip(&series)
        .map(|(d, s)| {
            let summary = Summary::from_series(s, top_k, threshold)?;
            Ok(ComparisonRow {
                label: run_label(d),
                top_k_mean_accuracy: summary.top_k_mean_accuracy,
                top_k_worst_accuracy: summary.top_k_worst_accuracy,
                rounds_to_threshold: summary.rounds_to_threshold,
                speedup: speedup(base_rounds, summary.rounds_to_threshold),
            })
        })
        .collect()
}

/// `dir-name (algorithm)` when a report is present, else the directory name.
fn run_label(dir: &Path) -> String {
    let name = dir
        .file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    let kind = fs::read_to_string(dir.join(REPORT_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<RunReport>(&t).ok())
        .map(|r| r.config.algorithm.kind);
    match kind {
        Some(k) => format!("{name} ({k})"),
        None => name,
    }
}

pub fn format_comparison(rows: &[ComparisonRow], top_k: usize, threshold: f64) -> String {
    let headers = [
        "run".to_string(),
        format!("top-{top_k} acc"),
        format!("top-{top_k} worst"),
        format!("rounds@{}", pct(threshold)),
        "speedup".to_string(),
    ];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                pct(r.top_k_mean_accuracy),
                pct(r.top_k_worst_accuracy),
                r.rounds_to_threshold.map_or_else(|| "-".into(), |v| v.to_string()),
                r.speedup.map_or_else(|| "-".into(), |v| format!("{v:.1}X")),
            ]
        })
        .collect();
    let mut width = headers.clone().map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |row: &[String; 5]| {
        let parts: Vec<String> = row
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&headers);
    for row in &cells {
        line(row);
    }
    out
}
