//! Grid sweeps over `alpha`, `cutoff` and `dropout`.
//!
//! Every grid point is trained into `members/NNN-<model>/` and scored on the
//! validation split only. For each model the point with the highest
//! validation NDCG@10 is selected (earliest point on ties) and only that
//! checkpoint is evaluated on the test split.
//!
//! Outputs next to `members/`:
//!
//! - `grid.csv`: one row per point with its validation metrics.
//! - `selected.csv`: test metrics of the selected points, in the same
//!   layout as a run's `metrics.csv`.
//! - `summary.txt`: the selections in words.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use seqlab_core::data::{Phase, SequenceDataset};
use seqlab_core::eval::{EvalReport, MetricBundle};
use seqlab_core::models::ModelKind;

use crate::config::ExperimentConfig;
use crate::run::{execute, prepare_dir, seed_dir};

pub const GRID_FILE: &str = "grid.csv";
pub const SELECTED_FILE: &str = "selected.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// The standard α tuning grid.
pub const ALPHA_GRID: [f64; 4] = [0.1, 0.5, 0.7, 0.9];

/// Best α reported for fs-nyc elsewhere; not a member of [`ALPHA_GRID`].
const FS_NYC_REFERENCE_ALPHA: f64 = 0.3;

/// One grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub kind: ModelKind,
    pub alpha: f64,
    pub cutoff: usize,
    pub dropout: f64,
}

impl GridPoint {
    pub fn label(&self) -> String {
        match self.kind {
            ModelKind::SasRec => format!("{} dropout={}", self.kind.label(), self.dropout),
            ModelKind::BsaRec => format!(
                "{} alpha={} c={} dropout={}",
                self.kind.label(),
                self.alpha,
                self.cutoff,
                self.dropout
            ),
        }
    }

    fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.sweep = Default::default();
        cfg.model.kind = self.kind.name().to_string();
        cfg.model.alpha = self.alpha;
        cfg.model.cutoff = self.cutoff;
        cfg.model.dropout = self.dropout;
        cfg
    }
}

fn or_base<T: Clone>(grid: &[T], base: T) -> Vec<T> {
    if grid.is_empty() {
        vec![base]
    } else {
        grid.to_vec()
    }
}

/// Cartesian product of the grids in config order: models, then α, then
/// c, then dropout. SASRec has no α or c, so it only varies dropout.
pub fn grid(cfg: &ExperimentConfig) -> Result<Vec<GridPoint>> {
    let models = if cfg.sweep.models.is_empty() {
        vec![cfg.model.kind()?]
    } else {
        cfg.sweep
            .models
            .iter()
            .map(|m| m.parse().map_err(|e| anyhow::anyhow!("sweep.models: {e}")))
            .collect::<Result<Vec<ModelKind>>>()?
    };
    let alphas = or_base(&cfg.sweep.alpha, cfg.model.alpha);
    let cutoffs = or_base(&cfg.sweep.cutoff, cfg.model.cutoff);
    let dropouts = or_base(&cfg.sweep.dropout, cfg.model.dropout);
    let mut points = Vec::new();
    for kind in models {
        match kind {
            ModelKind::SasRec => {
                for &dropout in &dropouts {
                    points.push(GridPoint {
                        kind,
                        alpha: cfg.model.alpha,
                        cutoff: cfg.model.cutoff,
                        dropout,
                    });
                }
            }
            ModelKind::BsaRec => {
                for &alpha in &alphas {
                    for &cutoff in &cutoffs {
                        for &dropout in &dropouts {
                            points.push(GridPoint {
                                kind,
                                alpha,
                                cutoff,
                                dropout,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(points)
}

/// A trained grid point.
#[derive(Clone, Debug)]
pub struct Member {
    pub point: GridPoint,
    pub dir: PathBuf,
    pub valid: EvalReport,
    pub best_epoch: usize,
}

/// Outcome of a sweep for one seed.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub members: Vec<Member>,
    /// Index into `members` and the test report, one per model kind.
    pub selected: Vec<(usize, EvalReport)>,
}

/// Index of the best member of `kind` by validation NDCG@10; the earliest
/// wins ties.
pub fn select(members: &[Member], kind: ModelKind) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.point.kind == kind)
    {
        let v = m.valid.metrics.ndcg_at_10;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn member_dir(root: &Path, index: usize, p: &GridPoint) -> PathBuf {
    root.join("members")
        .join(format!("{:03}-{}", index + 1, p.kind.name()))
}

fn sweep_one(
    cfg: &ExperimentConfig,
    data: &SequenceDataset,
    dir: &Path,
    pool: &rayon::ThreadPool,
    quiet: bool,
) -> Result<SweepOutcome> {
    let points = grid(cfg)?;
    let configs: Vec<ExperimentConfig> = points.iter().map(|p| p.apply(cfg)).collect();
    let dirs: Vec<PathBuf> = points
        .iter()
        .enumerate()
        .map(|(i, p)| member_dir(dir, i, p))
        .collect();
    for d in &dirs {
        fs::create_dir_all(d)?;
    }
    let results: Vec<Result<Member>> = pool.install(|| {
        points
            .par_iter()
            .zip(&configs)
            .zip(&dirs)
            .map(|((p, c), d)| {
                let s = execute(c, data, d, false, quiet).with_context(|| p.label())?;
                Ok(Member {
                    point: p.clone(),
                    dir: d.clone(),
                    valid: s.valid,
                    best_epoch: s.best_epoch,
                })
            })
            .collect()
    });
    let members = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut selected = Vec::new();
    for kind in [ModelKind::SasRec, ModelKind::BsaRec] {
        if let Some(i) = select(&members, kind) {
            let report = pool.install(|| {
                crate::run::evaluate_checkpoint(&configs[i], data, &members[i].dir, Phase::Test)
            })?;
            selected.push((i, report));
        }
    }
    let outcome = SweepOutcome {
        dir: dir.to_path_buf(),
        members,
        selected,
    };
    write_outputs(cfg, &outcome)?;
    Ok(outcome)
}

pub const GRID_CSV_HEADER: &str =
    "index,model,alpha,cutoff,dropout,best_epoch,valid_ndcg_at_5,valid_ndcg_at_10,valid_ndcg_at_20,valid_precision_at_10,valid_recall_at_10,fingerprint";

pub fn grid_csv(members: &[Member]) -> String {
    let mut s = String::from(GRID_CSV_HEADER);
    s.push('\n');
    for (i, m) in members.iter().enumerate() {
        let v = m.valid.metrics.values();
        let _ = writeln!(
            s,
            "{},{},{:?},{},{:?},{},{:?},{:?},{:?},{:?},{:?},{}",
            i + 1,
            m.point.kind.label(),
            m.point.alpha,
            m.point.cutoff,
            m.point.dropout,
            m.best_epoch,
            v[0],
            v[1],
            v[2],
            v[3],
            v[4],
            m.valid.fingerprint
        );
    }
    s
}

fn fmt_metrics(m: &MetricBundle) -> String {
    MetricBundle::NAMES
        .iter()
        .zip(m.values())
        .map(|(n, v)| format!("{n} {v:.4}"))
        .collect::<Vec<_>>()
        .join("  ")
}

/// Footer noting a reference α that the declared grid cannot reach.
pub fn alpha_footer(dataset: &str, alphas: &[f64]) -> Option<String> {
    let fs_nyc = dataset == "fs-nyc" || dataset == "foursquare-nyc";
    if fs_nyc && !alphas.contains(&FS_NYC_REFERENCE_ALPHA) {
        Some(format!(
            "note: the reference best alpha for fs-nyc is {FS_NYC_REFERENCE_ALPHA}, which lies outside the \
             declared alpha grid {alphas:?}; the grid was used as declared."
        ))
    } else {
        None
    }
}

pub fn summary_text(cfg: &ExperimentConfig, outcome: &SweepOutcome) -> String {
    let mut s = String::new();
    let dataset = outcome
        .members
        .first()
        .map(|m| m.valid.dataset.clone())
        .unwrap_or_default();
    let _ = writeln!(
        s,
        "sweep {} on {dataset}: {} grid points",
        cfg.name,
        outcome.members.len()
    );
    for (i, report) in &outcome.selected {
        let m = &outcome.members[*i];
        let _ = writeln!(s);
        let _ = writeln!(s, "selected {} (point {})", m.point.label(), i + 1);
        let _ = writeln!(s, "  valid  {}", fmt_metrics(&m.valid.metrics));
        let _ = writeln!(s, "  test   {}", fmt_metrics(&report.metrics));
    }
    let alphas = or_base(&cfg.sweep.alpha, cfg.model.alpha);
    if let Some(f) = alpha_footer(&dataset, &alphas) {
        let _ = writeln!(s);
        let _ = writeln!(s, "{f}");
    }
    s
}

fn write_outputs(cfg: &ExperimentConfig, outcome: &SweepOutcome) -> Result<()> {
    let dir = &outcome.dir;
    fs::write(dir.join(GRID_FILE), grid_csv(&outcome.members))?;
    let selected: Vec<EvalReport> = outcome.selected.iter().map(|(_, r)| r.clone()).collect();
    fs::write(dir.join(SELECTED_FILE), EvalReport::to_csv(&selected)?)?;
    fs::write(dir.join(SUMMARY_FILE), summary_text(cfg, outcome))?;
    Ok(())
}

/// `sweep`: one sweep directory per seed, grid points trained on a pool of
/// `workers` threads.
pub fn sweep(
    cfg: &ExperimentConfig,
    data: &SequenceDataset,
    out: &Path,
    workers: usize,
    force: bool,
    quiet: bool,
) -> Result<Vec<SweepOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("building worker pool")?;
    let dirs: Vec<PathBuf> = cfg
        .seeds
        .iter()
        .map(|&s| seed_dir(out, s, cfg.seeds.len()))
        .collect();
    for d in &dirs {
        prepare_dir(d, force)?;
    }
    cfg.seeds
        .iter()
        .zip(&dirs)
        .map(|(&seed, dir)| sweep_one(&cfg.single_seed(seed), data, dir, &pool, quiet))
        .collect()
}
