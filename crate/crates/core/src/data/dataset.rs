use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::sequences::{leave_one_out, window, UserSequence, MIN_SEQUENCE_LEN};
use crate::error::{Error, Result};

/// Which held-out item a ranking case targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Last training item, predicted from the rest of the training prefix.
    Train,
    /// Validation item, predicted from the training prefix.
    Valid,
    /// Test item, predicted from training prefix plus validation item.
    Test,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Valid => "valid",
            Phase::Test => "test",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "valid" => Ok(Phase::Valid),
            "test" => Ok(Phase::Test),
            other => Err(Error::Config(format!("unknown phase `{other}`"))),
        }
    }
}

/// One user's ranking problem: a context window and the item to find.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub window: Vec<usize>,
    pub target: usize,
    /// Every item in the full context, not just the window.
    pub seen: Vec<usize>,
}

/// Dense sequences ready for training and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub name: String,
    pub num_items: usize,
    pub sequences: Vec<UserSequence>,
}

impl SequenceDataset {
    pub fn new(
        name: impl Into<String>,
        num_items: usize,
        sequences: Vec<UserSequence>,
    ) -> Result<Self> {
        for s in &sequences {
            if s.items.len() < MIN_SEQUENCE_LEN {
                return Err(Error::Data(format!(
                    "user {} has fewer than {MIN_SEQUENCE_LEN} items",
                    s.user
                )));
            }
            if let Some(&bad) = s.items.iter().find(|&&i| i == 0 || i > num_items) {
                return Err(Error::Data(format!(
                    "user {}: item {bad} outside 1..={num_items}",
                    s.user
                )));
            }
        }
        Ok(SequenceDataset {
            name: name.into(),
            num_items,
            sequences,
        })
    }

    pub fn users(&self) -> usize {
        self.sequences.len()
    }

    pub fn total_interactions(&self) -> usize {
        self.sequences.iter().map(|s| s.items.len()).sum()
    }

    /// Keeps the first `max_users` users (by dense index).
    pub fn truncate_users(&mut self, max_users: usize) {
        self.sequences.truncate(max_users);
    }

    /// `(input window, target window)` pairs from each user's training
    /// prefix: position t's target is the item at t+1. Users whose prefix
    /// has a single item yield nothing.
    pub fn training_examples(&self, len: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
        self.sequences
            .iter()
            .filter_map(|s| {
                let split = leave_one_out(&s.items).ok()?;
                let p = split.train;
                (p.len() >= 2).then(|| (window(&p[..p.len() - 1], len), window(&p[1..], len)))
            })
            .collect()
    }

    pub fn eval_cases(&self, phase: Phase, len: usize) -> Vec<EvalCase> {
        self.sequences
            .iter()
            .filter_map(|s| {
                let split = leave_one_out(&s.items).ok()?;
                let n = s.items.len();
                let (context, target) = match phase {
                    Phase::Train => {
                        let p = split.train;
                        if p.len() < 2 {
                            return None;
                        }
                        (&p[..p.len() - 1], p[p.len() - 1])
                    }
                    Phase::Valid => (split.train, split.valid),
                    Phase::Test => (&s.items[..n - 1], split.test),
                };
                Some(EvalCase {
                    user: s.user,
                    window: window(context, len),
                    target,
                    seen: context.to_vec(),
                })
            })
            .collect()
    }
}

pub const CANONICAL_HEADER: &str = "# seqlab-sequences v1";

/// Writes the canonical preprocessed file:
///
/// ```text
/// # seqlab-sequences v1
/// # name <dataset name>
/// # users <n> items <m>
/// <user index> <item> <item> ...
/// ```
pub fn write_canonical(ds: &SequenceDataset, path: &Path) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "{CANONICAL_HEADER}");
    let _ = writeln!(s, "# name {}", ds.name);
    let _ = writeln!(s, "# users {} items {}", ds.users(), ds.num_items);
    for seq in &ds.sequences {
        let _ = write!(s, "{}", seq.user);
        for i in &seq.items {
            let _ = write!(s, " {i}");
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_canonical(path: &Path) -> Result<SequenceDataset> {
    let text = fs::read_to_string(path)?;
    let perr = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, CANONICAL_HEADER)) => {}
        _ => return Err(perr(1, format!("missing `{CANONICAL_HEADER}` header"))),
    }
    let mut name = String::new();
    let mut num_items = None;
    let mut sequences = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if let Some(meta) = line.strip_prefix("# ") {
            if let Some(n) = meta.strip_prefix("name ") {
                name = n.to_string();
            } else if let Some(rest) = meta.strip_prefix("users ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                match parts.as_slice() {
                    [_, "items", m] => {
                        num_items = Some(
                            m.parse()
                                .map_err(|_| perr(line_no, "bad item count".into()))?,
                        )
                    }
                    _ => return Err(perr(line_no, "bad users/items line".into())),
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut nums = line.split_whitespace().map(|t| t.parse::<usize>());
        let user = nums
            .next()
            .and_then(|r| r.ok())
            .ok_or_else(|| perr(line_no, "bad user index".into()))?;
        let items = nums
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| perr(line_no, "bad item index".into()))?;
        sequences.push(UserSequence { user, items });
    }
    let num_items = num_items.ok_or_else(|| perr(1, "missing `# users N items M` line".into()))?;
    SequenceDataset::new(name, num_items, sequences)
}
