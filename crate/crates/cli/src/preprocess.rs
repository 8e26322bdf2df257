//! Raw dataset → canonical sequences file plus summary statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Result;

use seqlab_core::data::{write_canonical, SequenceDataset};

use crate::config::DatasetSection;
use crate::dataset::load;
use crate::run::prepare_dir;

pub const SEQUENCES_FILE: &str = "sequences.txt";
pub const STATS_FILE: &str = "stats.txt";

pub fn stats_text(data: &SequenceDataset, raw_records: usize, skipped: usize) -> String {
    let users = data.users();
    let n = data.total_interactions();
    let lens: Vec<usize> = data.sequences.iter().map(|s| s.items.len()).collect();
    let mut s = String::new();
    let _ = writeln!(s, "dataset {}", data.name);
    let _ = writeln!(s, "raw_records {raw_records}");
    let _ = writeln!(s, "skipped_lines {skipped}");
    let _ = writeln!(s, "users {users}");
    let _ = writeln!(s, "items {}", data.num_items);
    let _ = writeln!(s, "interactions {n}");
    if users > 0 {
        let _ = writeln!(s, "mean_length {:.4}", n as f64 / users as f64);
        let _ = writeln!(s, "min_length {}", lens.iter().min().unwrap_or(&0));
        let _ = writeln!(s, "max_length {}", lens.iter().max().unwrap_or(&0));
        let _ = writeln!(
            s,
            "density {:.6}",
            n as f64 / (users as f64 * data.num_items as f64)
        );
    }
    s
}

/// Writes `sequences.txt` and `stats.txt` into `out`; returns the stats.
pub fn preprocess(section: &DatasetSection, out: &Path, force: bool) -> Result<String> {
    let loaded = load(section)?;
    prepare_dir(out, force)?;
    write_canonical(&loaded.data, &out.join(SEQUENCES_FILE))?;
    let stats = stats_text(&loaded.data, loaded.raw_records, loaded.skipped);
    fs::write(out.join(STATS_FILE), &stats)?;
    Ok(stats)
}
