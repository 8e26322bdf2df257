//! Comparison tables across run and sweep directories.
//!
//! Test rows are collected from each directory's `selected.csv` (sweeps) or
//! `metrics.csv` (runs); directories holding `seed-N` subdirectories are
//! searched one level down. Rows sharing a dataset and model are averaged.
//! Each dataset gets one table: a row per model, the best value of every
//! column marked with `*`, and, when both SASRec and BSARec are present, a
//! gain row `100 · (BSARec − SASRec) / SASRec`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use seqlab_core::data::Phase;
use seqlab_core::eval::{EvalReport, MetricBundle};
use seqlab_core::models::ModelKind;

use crate::run::METRICS_FILE;
use crate::sweep::{alpha_footer, ALPHA_GRID, SELECTED_FILE};

/// Averaged test metrics for one model on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelRow {
    pub model: String,
    pub runs: usize,
    pub metrics: MetricBundle,
    /// Per column: whether this row holds the best value.
    pub best: [bool; 5],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetTable {
    pub dataset: String,
    pub rows: Vec<ModelRow>,
    /// BSARec over SASRec, per column; `None` where SASRec scores 0.
    pub gains: Option<[Option<f64>; 5]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub tables: Vec<DatasetTable>,
}

/// `100 · (b − s) / s`, absent when `s` is zero.
pub fn gain_pct(b: f64, s: f64) -> Option<f64> {
    if s == 0.0 {
        None
    } else {
        Some(100.0 * (b - s) / s)
    }
}

/// Display label and the metric rows collected for one model.
type Group = (String, Vec<[f64; 5]>);

fn model_order(label: &str) -> (usize, String) {
    match label.parse::<ModelKind>() {
        Ok(ModelKind::SasRec) => (0, String::new()),
        Ok(ModelKind::BsaRec) => (1, String::new()),
        Err(_) => (2, label.to_string()),
    }
}

impl ComparisonReport {
    /// Builds the report from test rows; non-test rows are ignored. The
    /// result does not depend on the order of `reports`.
    pub fn from_reports(reports: &[EvalReport]) -> Result<Self> {
        let mut groups: BTreeMap<String, BTreeMap<(usize, String), Group>> = BTreeMap::new();
        for r in reports.iter().filter(|r| r.phase == Phase::Test) {
            groups
                .entry(r.dataset.clone())
                .or_default()
                .entry(model_order(&r.model))
                .or_insert_with(|| (r.model.clone(), Vec::new()))
                .1
                .push(r.metrics.values());
        }
        if groups.is_empty() {
            bail!("no test metrics found");
        }
        let tables = groups
            .into_iter()
            .map(|(dataset, models)| {
                let mut rows: Vec<ModelRow> = models
                    .into_values()
                    .map(|(model, mut vals)| {
                        // summation order fixed so averaging is order independent
                        vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                        let mut mean = [0.0; 5];
                        for v in &vals {
                            for (m, x) in mean.iter_mut().zip(v) {
                                *m += x;
                            }
                        }
                        for m in &mut mean {
                            *m /= vals.len() as f64;
                        }
                        ModelRow {
                            model,
                            runs: vals.len(),
                            metrics: MetricBundle::from_values(mean),
                            best: [false; 5],
                        }
                    })
                    .collect();
                for col in 0..5 {
                    let top = rows
                        .iter()
                        .map(|r| r.metrics.values()[col])
                        .fold(f64::NEG_INFINITY, f64::max);
                    for r in &mut rows {
                        r.best[col] = r.metrics.values()[col] == top;
                    }
                }
                let find = |k: ModelKind| {
                    rows.iter()
                        .find(|r| r.model.parse::<ModelKind>().ok() == Some(k))
                        .map(|r| r.metrics.values())
                };
                let gains = match (find(ModelKind::SasRec), find(ModelKind::BsaRec)) {
                    (Some(s), Some(b)) => Some(std::array::from_fn(|i| gain_pct(b[i], s[i]))),
                    _ => None,
                };
                DatasetTable {
                    dataset,
                    rows,
                    gains,
                }
            })
            .collect();
        Ok(ComparisonReport { tables })
    }

    /// Aligned plain-text tables; gains rounded to one decimal.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut header = vec!["Dataset".to_string(), "Model".to_string()];
        header.extend(MetricBundle::NAMES.iter().map(|n| n.to_string()));
        let mut body: Vec<Vec<String>> = Vec::new();
        for t in &self.tables {
            for r in &t.rows {
                let mut line = vec![t.dataset.clone(), r.model.clone()];
                for (v, best) in r.metrics.values().iter().zip(r.best) {
                    line.push(format!("{v:.4}{}", if best { "*" } else { " " }));
                }
                body.push(line);
            }
            if let Some(g) = &t.gains {
                let mut line = vec![t.dataset.clone(), "gain %".to_string()];
                for v in g {
                    line.push(match v {
                        Some(x) => format!("{x:.1} "),
                        None => "- ".to_string(),
                    });
                }
                body.push(line);
            }
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                body.iter()
                    .map(|l| l[c].chars().count())
                    .chain([header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let render = |cells: &[String]| -> String {
            cells
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c < 2 {
                        format!("{v:<w$}", w = widths[c])
                    } else {
                        format!("{v:>w$}", w = widths[c])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let _ = writeln!(s, "{}", render(&header));
        let _ = writeln!(
            s,
            "{}",
            "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
        );
        for line in &body {
            let _ = writeln!(s, "{}", render(line));
        }
        let _ = writeln!(
            s,
            "* best value per dataset and column; gain % is BSARec over SASRec"
        );
        for t in &self.tables {
            if let Some(f) = alpha_footer(&t.dataset, &ALPHA_GRID) {
                let _ = writeln!(s, "{f}");
            }
        }
        s
    }

    /// CSV with full-precision values; gain cells are empty when absent.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "dataset,row,runs,ndcg_at_5,ndcg_at_10,ndcg_at_20,precision_at_10,recall_at_10,best\n",
        );
        for t in &self.tables {
            for r in &t.rows {
                let vals: Vec<String> = r
                    .metrics
                    .values()
                    .iter()
                    .map(|v| format!("{v:?}"))
                    .collect();
                let best: Vec<&str> = MetricBundle::NAMES
                    .iter()
                    .zip(r.best)
                    .filter(|(_, b)| *b)
                    .map(|(n, _)| *n)
                    .collect();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    t.dataset,
                    r.model,
                    r.runs,
                    vals.join(","),
                    best.join(";")
                );
            }
            if let Some(g) = &t.gains {
                let vals: Vec<String> = g
                    .iter()
                    .map(|v| v.map(|x| format!("{x:?}")).unwrap_or_default())
                    .collect();
                let _ = writeln!(s, "{},gain_pct,,{},", t.dataset, vals.join(","));
            }
        }
        s
    }
}

fn report_files(dir: &Path) -> Result<Vec<PathBuf>> {
    for name in [SELECTED_FILE, METRICS_FILE] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(vec![p]);
        }
    }
    let mut nested: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed-"))
        })
        .collect();
    nested.sort();
    let mut files = Vec::new();
    for d in nested {
        for name in [SELECTED_FILE, METRICS_FILE] {
            let p = d.join(name);
            if p.is_file() {
                files.push(p);
                break;
            }
        }
    }
    if files.is_empty() {
        bail!(
            "{} holds no {SELECTED_FILE} or {METRICS_FILE}",
            dir.display()
        );
    }
    Ok(files)
}

/// Reads every test row from the given run or sweep directories.
pub fn collect(dirs: &[PathBuf]) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for d in dirs {
        for f in report_files(d)? {
            let text = fs::read_to_string(&f)?;
            reports.extend(
                EvalReport::parse_csv(&text).with_context(|| format!("parsing {}", f.display()))?,
            );
        }
    }
    Ok(reports)
}

pub fn compare(dirs: &[PathBuf]) -> Result<ComparisonReport> {
    ComparisonReport::from_reports(&collect(dirs)?)
}
