//! Turns the `[dataset]` section into a [`SequenceDataset`].

use std::path::Path;

use anyhow::{bail, Context, Result};

use seqlab_core::data::{
    dataset_from_log, parse_foursquare_nyc, parse_ml1m, read_canonical, synthetic, BuildOptions,
    ParseMode, ParseReport, SequenceDataset,
};

use crate::config::DatasetSection;

/// A loaded dataset plus the parser's warnings.
pub struct Loaded {
    pub data: SequenceDataset,
    pub raw_records: usize,
    pub skipped: usize,
}

pub fn parse_mode(lenient: bool) -> ParseMode {
    if lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    }
}

/// Parses a raw file of the given kind without building sequences.
pub fn parse_raw(kind: &str, path: &Path, lenient: bool) -> Result<ParseReport> {
    let mode = parse_mode(lenient);
    let report = match kind {
        "ml-1m" => parse_ml1m(path, mode),
        "fs-nyc" | "foursquare-nyc" => parse_foursquare_nyc(path, mode),
        other => bail!("dataset.kind: `{other}` is not a raw format"),
    };
    report.with_context(|| format!("parsing {}", path.display()))
}

pub fn short_name(kind: &str) -> &str {
    match kind {
        "foursquare-nyc" => "fs-nyc",
        k => k,
    }
}

pub fn load(section: &DatasetSection) -> Result<Loaded> {
    let (mut data, raw_records, skipped) = match section.kind.as_str() {
        "ml-1m" | "fs-nyc" | "foursquare-nyc" => {
            let report = parse_raw(&section.kind, Path::new(&section.path), section.lenient)?;
            let opts = BuildOptions {
                min_user: section.min_user,
                min_item: section.min_item,
                dedup_consecutive: section.dedup_consecutive,
            };
            let (data, _) = dataset_from_log(short_name(&section.kind), &report.log, &opts)?;
            (data, report.log.len(), report.skipped.len())
        }
        "canonical" => {
            let data = read_canonical(Path::new(&section.path))
                .with_context(|| format!("reading {}", section.path))?;
            let n = data.total_interactions();
            (data, n, 0)
        }
        "synthetic-periodic" => {
            let data = synthetic::periodic(&section.synthetic.periodic_spec());
            let n = data.total_interactions();
            (data, n, 0)
        }
        "synthetic-random" => {
            let s = &section.synthetic;
            let data = synthetic::random_sequences(s.users, s.items, s.min_len, s.max_len, s.seed);
            let n = data.total_interactions();
            (data, n, 0)
        }
        other => bail!("dataset.kind: unknown kind `{other}`"),
    };
    if section.max_users > 0 {
        data.truncate_users(section.max_users);
    }
    if data.users() == 0 {
        bail!("dataset `{}` has no users after filtering", data.name);
    }
    Ok(Loaded {
        data,
        raw_records,
        skipped,
    })
}
