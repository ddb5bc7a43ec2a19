use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cv::CvResult;
use super::simulation::{EffectSummary, RankSummary};
use crate::error::{Error, Result};
use crate::explain::Technique;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub cv_results: Vec<CvResult>,
    #[serde(default)]
    pub effects: BTreeMap<Technique, EffectSummary>,
    #[serde(default)]
    pub rankings: BTreeMap<Technique, RankSummary>,
}

impl Default for Report {
    fn default() -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            cv_results: Vec::new(),
            effects: BTreeMap::new(),
            rankings: BTreeMap::new(),
        }
    }
}

impl Report {
    /// CV results are ordered by scenario, detector, threshold, then hyperparameters.
    pub fn new(
        mut cv_results: Vec<CvResult>,
        effects: BTreeMap<Technique, EffectSummary>,
        rankings: BTreeMap<Technique, RankSummary>,
    ) -> Self {
        cv_results.sort_by_cached_key(|r| {
            (
                r.scenario.clone(),
                r.detector_kind.clone(),
                r.threshold_policy.to_string(),
                r.hyperparameters.to_string(),
            )
        });
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            cv_results,
            effects,
            rankings,
        }
    }
}

/// A fraction as a percentage cell: `0.921, 0.01` → `92.1±1.0`.
pub fn percent_cell(mean: f64, std: f64) -> String {
    format!("{:.1}±{:.1}", mean * 100.0, std * 100.0)
}

/// `key=value` pairs of a hyperparameter object, leaving out `kind` and `seed`.
fn hyperparameter_cell(v: &serde_json::Value) -> String {
    match v.as_object() {
        Some(map) => map
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "kind" | "seed"))
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" "),
        None if v.is_null() => String::new(),
        None => v.to_string(),
    }
}

pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    if !report.cv_results.is_empty() {
        let rows: Vec<[String; 5]> = report
            .cv_results
            .iter()
            .map(|r| {
                [
                    r.scenario.clone(),
                    r.detector_kind.clone(),
                    hyperparameter_cell(&r.hyperparameters),
                    r.threshold_policy.to_string(),
                    percent_cell(r.mean, r.std),
                ]
            })
            .collect();
        push_table(
            &mut out,
            [
                "scenario",
                "detector",
                "hyperparameters",
                "threshold",
                "F1 (%)",
            ],
            &rows,
        );
    }
    if !report.effects.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        let rows: Vec<[String; 5]> = report
            .effects
            .iter()
            .map(|(t, e)| {
                [
                    t.to_string(),
                    e.n.to_string(),
                    percent_cell(e.pre_mean, e.pre_std),
                    percent_cell(e.post_mean, e.post_std),
                    percent_cell(e.effect_mean, e.effect_std),
                ]
            })
            .collect();
        push_table(
            &mut out,
            ["technique", "n", "pre (%)", "post (%)", "effect"],
            &rows,
        );
    }
    if !report.rankings.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        let rows: Vec<[String; 3]> = report
            .rankings
            .iter()
            .map(|(t, r)| {
                [
                    t.to_string(),
                    r.n.to_string(),
                    format!("{:.1}±{:.1}", r.mean, r.std),
                ]
            })
            .collect();
        push_table(&mut out, ["technique", "n", "rank"], &rows);
    }
    out
}

fn push_table<const N: usize>(out: &mut String, header: [&str; N], rows: &[[String; N]]) {
    let mut widths: [usize; N] = header.map(|h| h.chars().count());
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(out, &mut header.iter().copied());
    let _ = writeln!(out, "{}", widths.map(|w| "-".repeat(w)).join("  "));
    for row in rows {
        line(out, &mut row.iter().map(String::as_str));
    }
}

/// Writes the JSON report to `path` and the table next to it with a `.txt`
/// extension, creating missing parent directories. Returns the table path.
pub fn emit_report(report: &Report, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    let table = path.with_extension("txt");
    std::fs::write(&table, render_table(report))?;
    Ok(table)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<Report> {
    let report: Report = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "report schema version {} (supported: {REPORT_SCHEMA_VERSION})",
            report.schema_version
        )));
    }
    Ok(report)
}
