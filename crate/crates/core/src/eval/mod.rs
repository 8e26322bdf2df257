//! Full-catalog ranking evaluation under single-target leave-one-out.
//!
//! Each user contributes one rank. With a single relevant item the ideal
//! DCG is 1, recall@k is the hit indicator and precision@k is hit/k, so a
//! report always satisfies `precision@10 == recall@10 / 10`.

mod report;

pub use report::{EvalReport, MetricBundle, REPORT_CSV_HEADER};

use std::collections::HashSet;

use rayon::prelude::*;

use crate::data::{EvalCase, Phase, SequenceDataset};
use crate::error::{Error, Result};
use crate::models::SeqRecModel;
use crate::scalar::Scalar;

/// Anything that can score the whole catalog for a batch of windows.
/// `scores[w][i − 1]` is the score of item `i`.
pub trait Scorer: Sync {
    fn num_items(&self) -> usize;

    fn window_len(&self) -> usize;

    fn score_windows(&self, windows: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

impl<T: Scalar> Scorer for SeqRecModel<T> {
    fn num_items(&self) -> usize {
        self.config().num_items
    }

    fn window_len(&self) -> usize {
        self.config().max_len
    }

    fn score_windows(&self, windows: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let s = SeqRecModel::score_windows(self, windows)?;
        Ok(s.into_iter()
            .map(|row| row.into_iter().map(Scalar::as_f64).collect())
            .collect())
    }
}

/// 1-based rank of `target` among non-excluded items. Items with a higher
/// score rank above it; on equal scores the smaller item index wins.
pub fn rank_of_target<T: PartialOrd + Copy>(
    scores: &[T],
    target: usize,
    exclude: &HashSet<usize>,
) -> Result<usize> {
    if target == 0 || target > scores.len() {
        return Err(Error::Protocol(format!(
            "target {target} outside catalog 1..={}",
            scores.len()
        )));
    }
    if exclude.contains(&target) {
        return Err(Error::Protocol(format!(
            "target {target} is in the exclusion set"
        )));
    }
    let st = scores[target - 1];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| {
            let item = i + 1;
            item != target && !exclude.contains(&item) && (s > st || (s == st && item < target))
        })
        .count();
    Ok(ahead + 1)
}

/// `1 / log2(rank + 1)` inside the cutoff, else 0.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// `(hit / k, hit)` for a single relevant item.
pub fn precision_recall_at_k(rank: usize, k: usize) -> (f64, f64) {
    let hit = if rank >= 1 && rank <= k { 1.0 } else { 0.0 };
    (hit / k as f64, hit)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Drop the user's context items (other than the target) from ranking.
    pub exclude_seen: bool,
    /// Windows scored per parallel work unit.
    pub chunk: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exclude_seen: true,
            chunk: 256,
        }
    }
}

/// Ranks of each case's target, in case order.
pub fn rank_cases<S: Scorer + ?Sized>(
    scorer: &S,
    cases: &[EvalCase],
    opts: &EvalOptions,
) -> Result<Vec<usize>> {
    let per_chunk: Vec<Result<Vec<usize>>> = cases
        .par_chunks(opts.chunk.max(1))
        .map(|chunk| {
            let windows: Vec<Vec<usize>> = chunk.iter().map(|c| c.window.clone()).collect();
            let scores = scorer.score_windows(&windows)?;
            chunk
                .iter()
                .zip(&scores)
                .map(|(case, s)| {
                    let exclude: HashSet<usize> = if opts.exclude_seen {
                        case.seen
                            .iter()
                            .copied()
                            .filter(|&i| i != case.target)
                            .collect()
                    } else {
                        HashSet::new()
                    };
                    rank_of_target(s, case.target, &exclude)
                })
                .collect()
        })
        .collect();
    let mut ranks = Vec::with_capacity(cases.len());
    for r in per_chunk {
        ranks.extend(r?);
    }
    Ok(ranks)
}

/// Mean metrics over ranks. Only ranks ≤ 20 contribute, so the sums are
/// taken over a rank histogram: the result does not depend on the order of
/// `ranks`.
pub fn metrics_from_ranks(ranks: &[usize]) -> MetricBundle {
    const TOP: usize = 20;
    let mut hist = [0usize; TOP + 1];
    for &r in ranks {
        if (1..=TOP).contains(&r) {
            hist[r] += 1;
        }
    }
    let n = ranks.len().max(1) as f64;
    let dcg = |k: usize| -> f64 { (1..=k).map(|r| hist[r] as f64 * ndcg_at_k(r, k)).sum() };
    let hits: usize = hist[1..=10].iter().sum();
    let recall = hits as f64 / n;
    MetricBundle {
        ndcg_at_5: dcg(5) / n,
        ndcg_at_10: dcg(10) / n,
        ndcg_at_20: dcg(20) / n,
        precision_at_10: recall / 10.0,
        recall_at_10: recall,
    }
}

/// Scores every user of `data` for the given phase and averages metrics.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    data: &SequenceDataset,
    phase: Phase,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let cases = data.eval_cases(phase, scorer.window_len());
    if cases.is_empty() {
        return Err(Error::Data(format!(
            "no users to evaluate for phase {}",
            phase.name()
        )));
    }
    let ranks = rank_cases(scorer, &cases, opts)?;
    Ok(EvalReport {
        model: String::new(),
        dataset: data.name.clone(),
        phase,
        users: ranks.len(),
        metrics: metrics_from_ranks(&ranks),
        fingerprint: String::new(),
    })
}

/// Fraction of cases whose target lands in the top `k`.
pub fn hit_rate(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let none = HashSet::new();
        assert_eq!(rank_of_target(&[0.1, 5.0, 0.3], 2, &none).unwrap(), 1);
        assert_eq!(rank_of_target(&[2.0, 1.0, 3.0], 1, &none).unwrap(), 2);
        let ex: HashSet<usize> = [1].into();
        assert_eq!(rank_of_target(&[4.0; 5], 2, &ex).unwrap(), 1);
        assert_eq!(rank_of_target(&[4.0; 5], 4, &none).unwrap(), 4);
        assert!(matches!(
            rank_of_target(&[1.0, 2.0], 1, &ex),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn metric_examples() {
        assert_eq!(ndcg_at_k(1, 10), 1.0);
        assert_eq!(ndcg_at_k(3, 10), 0.5);
        assert_eq!(ndcg_at_k(11, 10), 0.0);
        assert_eq!(precision_recall_at_k(5, 10), (0.1, 1.0));
        assert_eq!(precision_recall_at_k(20, 10), (0.0, 0.0));
    }

    #[test]
    fn all_rank_one_gives_maxima() {
        let m = metrics_from_ranks(&[1, 1, 1]);
        assert_eq!((m.ndcg_at_5, m.ndcg_at_10, m.ndcg_at_20), (1.0, 1.0, 1.0));
        assert_eq!((m.recall_at_10, m.precision_at_10), (1.0, 0.1));
    }
}
