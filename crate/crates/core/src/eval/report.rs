use std::fmt;

use crate::data::Phase;
use crate::error::{Error, Result};

/// Mean metrics over evaluated users, in table column order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricBundle {
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub ndcg_at_20: f64,
    pub precision_at_10: f64,
    pub recall_at_10: f64,
}

impl MetricBundle {
    pub const NAMES: [&'static str; 5] =
        ["NDCG@5", "NDCG@10", "NDCG@20", "Precision@10", "Recall@10"];

    pub fn values(&self) -> [f64; 5] {
        [
            self.ndcg_at_5,
            self.ndcg_at_10,
            self.ndcg_at_20,
            self.precision_at_10,
            self.recall_at_10,
        ]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        MetricBundle {
            ndcg_at_5: v[0],
            ndcg_at_10: v[1],
            ndcg_at_20: v[2],
            precision_at_10: v[3],
            recall_at_10: v[4],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub dataset: String,
    pub phase: Phase,
    pub users: usize,
    pub metrics: MetricBundle,
    pub fingerprint: String,
}

pub const REPORT_CSV_HEADER: &str =
    "model,dataset,phase,users,ndcg_at_5,ndcg_at_10,ndcg_at_20,precision_at_10,recall_at_10,fingerprint";

fn check_field(name: &str, v: &str) -> Result<()> {
    if v.contains([',', '\n', '\r']) {
        return Err(Error::Config(format!(
            "{name} `{v}` may not contain commas or newlines"
        )));
    }
    Ok(())
}

impl EvalReport {
    /// One CSV row; floats use the shortest representation that round-trips.
    pub fn to_csv_row(&self) -> Result<String> {
        check_field("model", &self.model)?;
        check_field("dataset", &self.dataset)?;
        check_field("fingerprint", &self.fingerprint)?;
        let m = self.metrics.values().map(|v| format!("{v:?}"));
        Ok(format!(
            "{},{},{},{},{},{}",
            self.model,
            self.dataset,
            self.phase.name(),
            self.users,
            m.join(","),
            self.fingerprint
        ))
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let f: Vec<&str> = row.trim_end().split(',').collect();
        if f.len() != 10 {
            return Err(Error::Config(format!(
                "report row has {} fields, expected 10",
                f.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad metric value `{s}`")))
        };
        let mut v = [0.0; 5];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = num(f[4 + k])?;
        }
        Ok(EvalReport {
            model: f[0].to_string(),
            dataset: f[1].to_string(),
            phase: f[2].parse()?,
            users: f[3]
                .parse()
                .map_err(|_| Error::Config(format!("bad user count `{}`", f[3])))?,
            metrics: MetricBundle::from_values(v),
            fingerprint: f[9].to_string(),
        })
    }

    /// Header plus rows.
    pub fn to_csv(reports: &[EvalReport]) -> Result<String> {
        let mut s = String::from(REPORT_CSV_HEADER);
        s.push('\n');
        for r in reports {
            s.push_str(&r.to_csv_row()?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn parse_csv(text: &str) -> Result<Vec<EvalReport>> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(REPORT_CSV_HEADER) {
            return Err(Error::Config("metrics CSV is missing its header".into()));
        }
        lines.map(EvalReport::from_csv_row).collect()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} on {} [{}; {} users]:",
            self.model,
            self.dataset,
            self.phase.name(),
            self.users
        )?;
        for (n, v) in MetricBundle::NAMES.iter().zip(self.metrics.values()) {
            write!(f, " {n}={v:.4}")?;
        }
        Ok(())
    }
}
