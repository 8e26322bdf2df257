//! Per-user chronological sequences, k-core filtering, leave-one-out splits
//! and fixed-length windows.

use std::collections::HashMap;

use super::ingest::InteractionLog;
use crate::error::{Error, Result};

/// Minimum sequence length: one training item plus validation and test.
pub const MIN_SEQUENCE_LEN: usize = 3;

/// Bidirectional map between external item ids and dense indices 1..=n.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ItemVocabulary {
    external: Vec<String>,
    dense: HashMap<String, usize>,
    counts: Vec<usize>,
}

impl ItemVocabulary {
    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    pub fn encode(&self, external: &str) -> Option<usize> {
        self.dense.get(external).copied()
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.external.get(i))
            .map(String::as_str)
    }

    /// Retained interaction count for a dense index.
    pub fn count(&self, index: usize) -> usize {
        index
            .checked_sub(1)
            .and_then(|i| self.counts.get(i))
            .copied()
            .unwrap_or(0)
    }

    fn insert(&mut self, external: &str) -> usize {
        if let Some(&i) = self.dense.get(external) {
            self.counts[i - 1] += 1;
            return i;
        }
        self.external.push(external.to_string());
        self.counts.push(1);
        let i = self.external.len();
        self.dense.insert(external.to_string(), i);
        i
    }
}

/// Time-ordered dense item indices of one user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSequence {
    pub user: usize,
    pub items: Vec<usize>,
}

/// Leave-one-out view of a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Split<'a> {
    pub train: &'a [usize],
    pub valid: usize,
    pub test: usize,
}

impl UserSequence {
    pub fn split(&self) -> Result<Split<'_>> {
        leave_one_out(&self.items)
    }
}

/// Last item → test, second-to-last → validation, the rest → training.
pub fn leave_one_out(items: &[usize]) -> Result<Split<'_>> {
    let n = items.len();
    if n < MIN_SEQUENCE_LEN {
        return Err(Error::Data(format!(
            "sequence of length {n} is too short to split"
        )));
    }
    Ok(Split {
        train: &items[..n - 2],
        valid: items[n - 2],
        test: items[n - 1],
    })
}

/// Most recent `len` items, left-padded with 0 to exactly `len`.
pub fn window(items: &[usize], len: usize) -> Vec<usize> {
    let keep = &items[items.len().saturating_sub(len)..];
    let mut w = vec![0; len - keep.len()];
    w.extend_from_slice(keep);
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildOptions {
    pub min_user: usize,
    pub min_item: usize,
    pub dedup_consecutive: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            min_user: 5,
            min_item: 5,
            dedup_consecutive: false,
        }
    }
}

/// Groups a log into per-user sequences sorted by timestamp (ties keep
/// file order), applies iterative k-core filtering until nothing changes,
/// and re-indexes users (0-based) and items (1-based) by first appearance
/// among the retained records.
pub fn build_sequences(
    log: &InteractionLog,
    opts: &BuildOptions,
) -> Result<(Vec<UserSequence>, ItemVocabulary)> {
    if opts.min_user == 0 || opts.min_item == 0 {
        return Err(Error::Config(
            "min_user and min_item must be at least 1".into(),
        ));
    }
    let min_user = opts.min_user.max(MIN_SEQUENCE_LEN);

    // provisional ids by first appearance
    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut item_ids: HashMap<&str, usize> = HashMap::new();
    let mut item_names: Vec<&str> = Vec::new();
    let mut events: Vec<Vec<(i64, usize)>> = Vec::new();
    for rec in &log.records {
        let u = *user_ids.entry(rec.user.as_str()).or_insert_with(|| {
            events.push(Vec::new());
            events.len() - 1
        });
        let i = *item_ids.entry(rec.item.as_str()).or_insert_with(|| {
            item_names.push(rec.item.as_str());
            item_names.len() - 1
        });
        events[u].push((rec.timestamp, i));
    }

    let mut seqs: Vec<Vec<usize>> = events
        .into_iter()
        .map(|mut ev| {
            ev.sort_by_key(|&(t, _)| t);
            let mut items: Vec<usize> = ev.into_iter().map(|(_, i)| i).collect();
            if opts.dedup_consecutive {
                items.dedup();
            }
            items
        })
        .collect();

    loop {
        let mut counts = vec![0usize; item_names.len()];
        for s in &seqs {
            for &i in s {
                counts[i] += 1;
            }
        }
        let mut changed = false;
        for s in seqs.iter_mut() {
            if s.is_empty() {
                continue;
            }
            let before = s.len();
            s.retain(|&i| counts[i] >= opts.min_item);
            if s.len() < min_user {
                s.clear();
            }
            changed |= s.len() != before;
        }
        if !changed {
            break;
        }
    }

    // Dense ids in order of first appearance among retained records.
    let mut vocab = ItemVocabulary::default();
    let mut out = Vec::new();
    for s in seqs.into_iter().filter(|s| !s.is_empty()) {
        let items = s.iter().map(|&i| vocab.insert(item_names[i])).collect();
        out.push(UserSequence {
            user: out.len(),
            items,
        });
    }
    if out.is_empty() {
        return Err(Error::Data("no users survive filtering".into()));
    }
    Ok((out, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ingest::Interaction;

    fn log(rows: &[(&str, &str, i64)]) -> InteractionLog {
        InteractionLog {
            records: rows
                .iter()
                .map(|&(u, i, t)| Interaction {
                    user: u.into(),
                    item: i.into(),
                    timestamp: t,
                    meta: None,
                })
                .collect(),
        }
    }

    #[test]
    fn loo_examples() {
        let s = leave_one_out(&[1, 2, 3]).unwrap();
        assert_eq!((s.train, s.valid, s.test), (&[1][..], 2, 3));
        let s = leave_one_out(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!((s.train, s.valid, s.test), (&[1, 2, 3][..], 4, 5));
        assert!(leave_one_out(&[1, 2]).is_err());
    }

    #[test]
    fn window_examples() {
        assert_eq!(window(&[7, 8, 9], 5), vec![0, 0, 7, 8, 9]);
        assert_eq!(window(&[1, 2, 3, 4, 5, 6, 7], 5), vec![3, 4, 5, 6, 7]);
        assert_eq!(window(&[], 3), vec![0, 0, 0]);
    }

    #[test]
    fn min_one_keeps_every_user() {
        let l = log(&[
            ("u1", "a", 1),
            ("u1", "b", 2),
            ("u1", "c", 3),
            ("u2", "a", 1),
            ("u2", "d", 5),
            ("u2", "e", 9),
        ]);
        let opts = BuildOptions {
            min_user: 1,
            min_item: 1,
            ..Default::default()
        };
        let (seqs, vocab) = build_sequences(&l, &opts).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(vocab.len(), 5);
        assert_eq!(seqs[1].items, vec![1, 4, 5]);
    }

    #[test]
    fn fixed_point_filter_hand_run() {
        let l = log(&[
            ("u1", "a", 1),
            ("u1", "b", 2),
            ("u1", "c", 3),
            ("u2", "a", 4),
        ]);
        let user_only = BuildOptions {
            min_user: 2,
            min_item: 1,
            ..Default::default()
        };
        let (seqs, vocab) = build_sequences(&l, &user_only).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].items, vec![1, 2, 3]);
        assert_eq!(vocab.count(1), 1);

        let both = BuildOptions {
            min_user: 2,
            min_item: 2,
            ..Default::default()
        };
        assert!(matches!(build_sequences(&l, &both), Err(Error::Data(_))));
    }

    #[test]
    fn sorts_by_time_and_keeps_ties_in_file_order() {
        let l = log(&[
            ("u", "c", 30),
            ("u", "a", 10),
            ("u", "x", 20),
            ("u", "y", 20),
            ("u", "b", 15),
        ]);
        let opts = BuildOptions {
            min_user: 1,
            min_item: 1,
            ..Default::default()
        };
        let (seqs, vocab) = build_sequences(&l, &opts).unwrap();
        let names: Vec<&str> = seqs[0]
            .items
            .iter()
            .map(|&i| vocab.decode(i).unwrap())
            .collect();
        assert_eq!(names, ["a", "b", "x", "y", "c"]);
    }

    #[test]
    fn dedup_consecutive_is_optional() {
        let l = log(&[("u", "a", 1), ("u", "a", 2), ("u", "b", 3), ("u", "c", 4)]);
        let mut opts = BuildOptions {
            min_user: 1,
            min_item: 1,
            ..Default::default()
        };
        assert_eq!(build_sequences(&l, &opts).unwrap().0[0].items.len(), 4);
        opts.dedup_consecutive = true;
        assert_eq!(build_sequences(&l, &opts).unwrap().0[0].items.len(), 3);
    }

    #[test]
    fn vocabulary_round_trip() {
        let l = log(&[("u", "x", 1), ("u", "y", 2), ("u", "z", 3)]);
        let opts = BuildOptions {
            min_user: 1,
            min_item: 1,
            ..Default::default()
        };
        let (_, vocab) = build_sequences(&l, &opts).unwrap();
        for ext in ["x", "y", "z"] {
            assert_eq!(vocab.decode(vocab.encode(ext).unwrap()), Some(ext));
        }
        assert_eq!(vocab.decode(0), None);
    }
}
