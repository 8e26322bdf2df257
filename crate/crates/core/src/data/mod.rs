//! Dataset ingestion: raw parsers, per-user sequences, leave-one-out splits,
//! fixed-length windows and the canonical preprocessed file.

mod dataset;
mod ingest;
mod sequences;
pub mod synthetic;

pub use dataset::{
    read_canonical, write_canonical, EvalCase, Phase, SequenceDataset, CANONICAL_HEADER,
};
pub use ingest::{
    parse_foursquare_line, parse_foursquare_nyc, parse_ml1m, parse_ml1m_line, CheckinMeta,
    Interaction, InteractionLog, LineError, ParseMode, ParseReport, SkippedLine,
};
pub use sequences::{
    build_sequences, leave_one_out, window, BuildOptions, ItemVocabulary, Split, UserSequence,
    MIN_SEQUENCE_LEN,
};

use crate::error::Result;

/// Builds a [`SequenceDataset`] from a parsed log.
pub fn dataset_from_log(
    name: &str,
    log: &InteractionLog,
    opts: &BuildOptions,
) -> Result<(SequenceDataset, ItemVocabulary)> {
    let (sequences, vocab) = build_sequences(log, opts)?;
    let ds = SequenceDataset::new(name, vocab.len(), sequences)?;
    Ok((ds, vocab))
}
