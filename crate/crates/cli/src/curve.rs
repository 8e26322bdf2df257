//! Plot-ready training curves.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use seqlab_core::eval::EvalReport;
use seqlab_core::train::curve_from_csv;

use crate::run::{CURVE_FILE, METRICS_FILE};

/// The run's `curve.csv` verbatim, preceded by `# model`, `# dataset` and
/// `# fingerprint` comment lines taken from its `metrics.csv`.
pub fn export_curve(dir: &Path) -> Result<String> {
    let curve_path = dir.join(CURVE_FILE);
    let curve = fs::read_to_string(&curve_path)
        .with_context(|| format!("reading {}", curve_path.display()))?;
    curve_from_csv(&curve).with_context(|| format!("parsing {}", curve_path.display()))?;
    let metrics_path = dir.join(METRICS_FILE);
    let metrics = fs::read_to_string(&metrics_path)
        .with_context(|| format!("reading {}", metrics_path.display()))?;
    let reports = EvalReport::parse_csv(&metrics)
        .with_context(|| format!("parsing {}", metrics_path.display()))?;
    let first = reports
        .first()
        .with_context(|| format!("{} has no rows", metrics_path.display()))?;
    Ok(format!(
        "# model {}\n# dataset {}\n# fingerprint {}\n{curve}",
        first.model, first.dataset, first.fingerprint
    ))
}
