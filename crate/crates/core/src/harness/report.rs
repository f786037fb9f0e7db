//! Aggregation and CSV / JSON / markdown output.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{Method, Metric};
use crate::harness::experiment::{PValueRow, ResultRow, RunReport};

pub const RESULTS_CSV: &str = "results.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const GOF_CSV: &str = "gof.csv";

/// Mean and sample standard deviation of the zero-one error over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub env: String,
    pub mean: f64,
    pub std: f64,
    pub repeats_used: usize,
    pub excluded: usize,
    /// Only one repeat contributed, so `std` is reported as 0.
    pub single_repeat: bool,
}

/// Per-method average over environments; `std` is over per-repeat averages
/// of repeats that succeeded everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub method: Method,
    pub mean: f64,
    pub std: f64,
    pub repeats_used: usize,
    pub single_repeat: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Markdown),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

/// `(mean, std with n - 1 denominator)`; `std = 0` for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

pub fn aggregate(rows: &[ResultRow], methods: &[Method], envs: &[String]) -> (Vec<Aggregate>, Vec<AverageRow>) {
    let mut aggs = Vec::new();
    let mut avgs = Vec::new();
    for &method in methods {
        for env in envs {
            let cell: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method && &r.env == env).collect();
            let errors: Vec<f64> = cell.iter().filter_map(|r| r.error).collect();
            let (mean, std) = mean_std(&errors);
            aggs.push(Aggregate {
                method,
                env: env.clone(),
                mean,
                std,
                repeats_used: errors.len(),
                excluded: cell.len() - errors.len(),
                single_repeat: errors.len() == 1,
            });
        }
        let repeats: std::collections::BTreeSet<usize> =
            rows.iter().filter(|r| r.method == method).map(|r| r.repeat).collect();
        let per_repeat: Vec<f64> = repeats
            .into_iter()
            .filter_map(|rep| {
                let errs: Option<Vec<f64>> = envs
                    .iter()
                    .map(|env| {
                        rows.iter()
                            .find(|r| r.method == method && &r.env == env && r.repeat == rep)
                            .and_then(|r| r.error)
                    })
                    .collect();
                errs.map(|e| e.iter().sum::<f64>() / e.len() as f64)
            })
            .collect();
        let env_means: Vec<f64> = aggs.iter().filter(|a| a.method == method).map(|a| a.mean).collect();
        let (_, std) = mean_std(&per_repeat);
        avgs.push(AverageRow {
            method,
            mean: env_means.iter().sum::<f64>() / env_means.len() as f64,
            std,
            repeats_used: per_repeat.len(),
            single_repeat: per_repeat.len() == 1,
        });
    }
    (aggs, avgs)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Raw rows, one per (method, environment, repeat).
pub fn rows_to_csv(rows: &[ResultRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn rows_from_csv(r: impl std::io::Read) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

/// Columns `step, feature, env, class, p, repeat`.
pub fn pvalues_to_csv(rows: &[PValueRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(["step", "feature", "env", "class", "p", "repeat"])
            .map_err(csv_err)?;
    }
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn to_json(report: &RunReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn from_json(s: &str) -> Result<RunReport> {
    Ok(serde_json::from_str(s)?)
}

fn cell(metric: Metric, mean: f64, std: f64, single: bool) -> String {
    if mean.is_nan() {
        return "n/a".into();
    }
    let flag = if single { " (R=1)" } else { "" };
    match metric {
        Metric::Error => format!("{mean:.2} ± {std:.2}{flag}"),
        Metric::Accuracy => format!("{:.1} ± {:.1}{flag}", 100.0 * (1.0 - mean), 100.0 * std),
    }
}

/// Methods × environments table of `mean ± std` plus an `Avg` column.
pub fn to_markdown(report: &RunReport) -> String {
    let mut s = String::new();
    let what = match report.metric {
        Metric::Error => "test error",
        Metric::Accuracy => "test accuracy (%)",
    };
    let _ = writeln!(s, "### {} ({what})\n", report.experiment_id);
    let _ = write!(s, "| Method |");
    for e in &report.envs {
        let _ = write!(s, " {e} |");
    }
    let _ = writeln!(s, " Avg |");
    let _ = writeln!(s, "|---|{}---|", "---|".repeat(report.envs.len()));
    for &m in &report.methods {
        let _ = write!(s, "| {m} |");
        for e in &report.envs {
            match report.aggregates.iter().find(|a| a.method == m && &a.env == e) {
                Some(a) => {
                    let _ = write!(s, " {} |", cell(report.metric, a.mean, a.std, a.single_repeat));
                }
                None => s.push_str(" n/a |"),
            }
        }
        match report.averages.iter().find(|a| a.method == m) {
            Some(a) => {
                let _ = writeln!(s, " {} |", cell(report.metric, a.mean, a.std, a.single_repeat));
            }
            None => s.push_str(" n/a |\n"),
        }
    }
    let excluded: usize = report.aggregates.iter().map(|a| a.excluded).sum();
    if excluded > 0 {
        let _ = writeln!(s, "\n{excluded} failed run(s) excluded from the aggregates.");
    }
    let _ = writeln!(s, "\nconfig sha256 `{}`", report.provenance.config_hash);
    s
}

/// Render `report` in `format`.
pub fn render(report: &RunReport, format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(report),
        Format::Markdown => Ok(to_markdown(report)),
        Format::Csv => {
            let mut buf = Vec::new();
            rows_to_csv(&report.rows, &mut buf)?;
            String::from_utf8(buf).map_err(|e| Error::Io(std::io::Error::other(e)))
        }
    }
}

pub fn emit_report(report: &RunReport, format: Format, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render(report, format)?)?;
    Ok(())
}

/// Write all artefacts of a run into `dir`.
pub fn write_run_dir(report: &RunReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    emit_report(report, Format::Csv, dir.join(RESULTS_CSV))?;
    emit_report(report, Format::Json, dir.join(REPORT_JSON))?;
    emit_report(report, Format::Markdown, dir.join(REPORT_MD))?;
    if !report.gof.is_empty() {
        pvalues_to_csv(&report.gof, std::fs::File::create(dir.join(GOF_CSV))?)?;
    }
    Ok(())
}

pub fn read_run_dir(dir: impl AsRef<Path>) -> Result<RunReport> {
    from_json(&std::fs::read_to_string(dir.as_ref().join(REPORT_JSON))?)
}
