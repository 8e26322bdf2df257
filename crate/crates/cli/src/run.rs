//! Single training runs and their output directories.
//!
//! A run directory holds:
//!
//! - `config.resolved.toml`: the config with every default filled in;
//!   running it again reproduces the run bit for bit.
//! - `checkpoint.txt`: the best-validation model.
//! - `metrics.csv`: one `valid` and one `test` row.
//! - `curve.csv`: validation NDCG@10 and mean training loss per epoch.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use seqlab_core::data::{Phase, SequenceDataset};
use seqlab_core::eval::{evaluate, EvalOptions, EvalReport};
use seqlab_core::models::{checkpoint, ModelKind, SeqRecModel};
use seqlab_core::train::{curve_to_csv, fit_model, CurvePoint};
use seqlab_core::Scalar;

use crate::config::ExperimentConfig;

pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVE_FILE: &str = "curve.csv";

/// What a finished run reports back.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub kind: ModelKind,
    pub valid: EvalReport,
    pub test: Option<EvalReport>,
    pub curve: Vec<CurvePoint>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Creates `dir`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            bail!("{} exists and is not a directory", dir.display());
        }
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            bail!(
                "{} already contains results; pass --force to overwrite",
                dir.display()
            );
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// Directory for `seed`: `out` itself for a single seed, else `out/seed-N`.
pub fn seed_dir(out: &Path, seed: u64, seeds: usize) -> PathBuf {
    if seeds == 1 {
        out.to_path_buf()
    } else {
        out.join(format!("seed-{seed}"))
    }
}

fn eval_opts(cfg: &ExperimentConfig) -> EvalOptions {
    EvalOptions {
        exclude_seen: cfg.train.exclude_seen,
        ..Default::default()
    }
}

fn labelled(mut r: EvalReport, kind: ModelKind, fingerprint: &str) -> EvalReport {
    r.model = kind.label().to_string();
    r.fingerprint = fingerprint.to_string();
    r
}

fn train_in<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &SequenceDataset,
    dir: &Path,
    with_test: bool,
    quiet: bool,
) -> Result<RunSummary> {
    let seed = cfg.seeds[0];
    let kind = cfg.model.kind()?;
    let model_cfg = cfg.model.to_model_config(data.num_items)?;
    let train_cfg = cfg.train.to_train_config(seed)?;
    let fingerprint = cfg.fingerprint();
    let model = SeqRecModel::<T>::new(kind, model_cfg, seed)?;
    let tag = format!("{} {} seed {seed}", kind.label(), cfg.name);
    let outcome = fit_model(model, data, &train_cfg, |p| {
        if !quiet {
            eprintln!(
                "[{tag}] epoch {:>4}  loss {:.5}  valid NDCG@10 {:.5}",
                p.epoch, p.loss, p.ndcg_at_10
            );
        }
    })
    .with_context(|| format!("training {tag}"))?;
    checkpoint::save(&outcome.model, &dir.join(CHECKPOINT_FILE))?;

    let opts = eval_opts(cfg);
    let valid = labelled(
        evaluate(&outcome.model, data, Phase::Valid, &opts)?,
        kind,
        &fingerprint,
    );
    let test = if with_test {
        Some(labelled(
            evaluate(&outcome.model, data, Phase::Test, &opts)?,
            kind,
            &fingerprint,
        ))
    } else {
        None
    };
    let mut rows = vec![valid.clone()];
    rows.extend(test.clone());
    fs::write(dir.join(METRICS_FILE), EvalReport::to_csv(&rows)?)?;
    fs::write(dir.join(CURVE_FILE), curve_to_csv(&outcome.curve))?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        kind,
        valid,
        test,
        curve: outcome.curve,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
    })
}

/// Trains one configuration (`cfg.seeds[0]`) into an already prepared
/// directory. Test metrics are computed only when `with_test` is set.
pub fn execute(
    cfg: &ExperimentConfig,
    data: &SequenceDataset,
    dir: &Path,
    with_test: bool,
    quiet: bool,
) -> Result<RunSummary> {
    let cfg = cfg.single_run(cfg.seeds[0]);
    let mut snapshot = cfg.clone();
    snapshot.out = dir.to_string_lossy().into_owned();
    fs::write(dir.join(CONFIG_FILE), snapshot.to_toml())?;
    if cfg.precision_is_f32()? {
        train_in::<f32>(&cfg, data, dir, with_test, quiet)
    } else {
        train_in::<f64>(&cfg, data, dir, with_test, quiet)
    }
}

fn eval_checkpoint_in<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &SequenceDataset,
    dir: &Path,
    phase: Phase,
) -> Result<EvalReport> {
    let model: SeqRecModel<T> = checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    let r = evaluate(&model, data, phase, &eval_opts(cfg))?;
    Ok(labelled(r, model.kind(), &cfg.fingerprint()))
}

/// Evaluates the checkpoint stored in a run directory.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    data: &SequenceDataset,
    dir: &Path,
    phase: Phase,
) -> Result<EvalReport> {
    if cfg.precision_is_f32()? {
        eval_checkpoint_in::<f32>(cfg, data, dir, phase)
    } else {
        eval_checkpoint_in::<f64>(cfg, data, dir, phase)
    }
}

/// `run`: one directory per seed, each with test metrics.
pub fn run(
    cfg: &ExperimentConfig,
    data: &SequenceDataset,
    out: &Path,
    force: bool,
    quiet: bool,
) -> Result<Vec<RunSummary>> {
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
        .map(|(&seed, dir)| execute(&cfg.single_run(seed), data, dir, true, quiet))
        .collect()
}
