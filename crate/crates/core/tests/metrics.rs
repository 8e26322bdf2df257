//! Ranking metrics against a brute-force sort oracle, and evaluation on
//! toy datasets with a hand-built scorer.

mod common;

use std::collections::HashSet;

use common::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use seqlab_core::data::{Phase, SequenceDataset, UserSequence};
use seqlab_core::eval::{
    evaluate, metrics_from_ranks, ndcg_at_k, precision_recall_at_k, rank_of_target, EvalOptions,
    EvalReport, Scorer,
};
use seqlab_core::{Error, Result};

/// Sorts the non-excluded catalog by (score desc, index asc) and reads off
/// the target's position.
fn oracle_rank(scores: &[f64], target: usize, exclude: &HashSet<usize>) -> usize {
    let mut items: Vec<usize> = (1..=scores.len())
        .filter(|i| !exclude.contains(i))
        .collect();
    items.sort_by(|&a, &b| {
        scores[b - 1]
            .partial_cmp(&scores[a - 1])
            .unwrap()
            .then(a.cmp(&b))
    });
    items.iter().position(|&i| i == target).unwrap() + 1
}

fn oracle_metrics(rank: usize) -> [f64; 5] {
    let dcg = |k: usize| {
        if rank <= k {
            1.0 / (rank as f64 + 1.0).log2()
        } else {
            0.0
        }
    };
    let hit = if rank <= 10 { 1.0 } else { 0.0 };
    [dcg(5), dcg(10), dcg(20), hit / 10.0, hit]
}

fn check_report_structure(m: &seqlab_core::eval::MetricBundle) {
    assert_eq!(m.precision_at_10, m.recall_at_10 / 10.0);
    assert!(m.ndcg_at_5 <= m.ndcg_at_10 && m.ndcg_at_10 <= m.ndcg_at_20);
    for v in m.values() {
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn thousand_random_instances_match_the_oracle_exactly() {
    let mut r = rng(77);
    let mut ranks = Vec::new();
    let mut oracle_sum = [0.0; 5];
    for _ in 0..1000 {
        let n = r.gen_range(1..60);
        // small integer scores force plenty of ties
        let levels = r.gen_range(1..8);
        let scores: Vec<f64> = (0..n)
            .map(|_| r.gen_range(0..levels) as f64 * 0.5)
            .collect();
        let target = r.gen_range(1..=n);
        let exclude: HashSet<usize> = (1..=n)
            .filter(|&i| i != target && r.gen_bool(0.3))
            .collect();

        let rank = rank_of_target(&scores, target, &exclude).unwrap();
        assert_eq!(rank, oracle_rank(&scores, target, &exclude));
        let (p, rc) = precision_recall_at_k(rank, 10);
        let got = [
            ndcg_at_k(rank, 5),
            ndcg_at_k(rank, 10),
            ndcg_at_k(rank, 20),
            p,
            rc,
        ];
        assert_eq!(got, oracle_metrics(rank));

        let shifted: Vec<f64> = scores.iter().map(|s| s + 3.0).collect();
        assert_eq!(rank_of_target(&shifted, target, &exclude).unwrap(), rank);

        ranks.push(rank);
        for (acc, v) in oracle_sum.iter_mut().zip(oracle_metrics(rank)) {
            *acc += v;
        }
    }
    let m = metrics_from_ranks(&ranks);
    check_report_structure(&m);
    for (got, sum) in m.values().iter().zip(oracle_sum) {
        assert!((got - sum / 1000.0).abs() < 1e-12);
    }
    let mut shuffled = ranks.clone();
    shuffled.shuffle(&mut r);
    assert_eq!(metrics_from_ranks(&shuffled), m);
}

#[test]
fn excluded_target_is_a_protocol_error() {
    let ex: HashSet<usize> = [2].into();
    assert!(matches!(
        rank_of_target(&[1.0, 2.0, 3.0], 2, &ex),
        Err(Error::Protocol(_))
    ));
}

/// Scores every item by minus its global popularity, ignoring the window.
struct ReversePopularity {
    scores: Vec<f64>,
    len: usize,
}

impl Scorer for ReversePopularity {
    fn num_items(&self) -> usize {
        self.scores.len()
    }

    fn window_len(&self) -> usize {
        self.len
    }

    fn score_windows(&self, windows: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        Ok(windows.iter().map(|_| self.scores.clone()).collect())
    }
}

fn toy() -> SequenceDataset {
    let seqs = vec![
        vec![1, 2, 3, 4, 5],
        vec![2, 2, 6, 1],
        vec![6, 5, 4, 3, 2, 1],
    ];
    SequenceDataset::new(
        "toy",
        6,
        seqs.into_iter()
            .enumerate()
            .map(|(user, items)| UserSequence { user, items })
            .collect(),
    )
    .unwrap()
}

fn reverse_popularity(data: &SequenceDataset) -> ReversePopularity {
    let mut counts = vec![0.0; data.num_items];
    for s in &data.sequences {
        for &i in &s.items {
            counts[i - 1] += 1.0;
        }
    }
    ReversePopularity {
        scores: counts.iter().map(|c| -c).collect(),
        len: 4,
    }
}

#[test]
fn toy_reverse_popularity_report_matches_brute_force() {
    let data = toy();
    let scorer = reverse_popularity(&data);
    for phase in [Phase::Valid, Phase::Test] {
        for exclude_seen in [true, false] {
            let opts = EvalOptions {
                exclude_seen,
                chunk: 2,
            };
            let report = evaluate(&scorer, &data, phase, &opts).unwrap();
            let mut expect = [0.0; 5];
            for s in &data.sequences {
                let n = s.items.len();
                let (context, target) = match phase {
                    Phase::Valid => (&s.items[..n - 2], s.items[n - 2]),
                    _ => (&s.items[..n - 1], s.items[n - 1]),
                };
                let exclude: HashSet<usize> = if exclude_seen {
                    context.iter().copied().filter(|&i| i != target).collect()
                } else {
                    HashSet::new()
                };
                let rank = oracle_rank(&scorer.scores, target, &exclude);
                for (e, v) in expect.iter_mut().zip(oracle_metrics(rank)) {
                    *e += v / 3.0;
                }
            }
            assert_eq!(report.users, 3);
            for (got, e) in report.metrics.values().iter().zip(expect) {
                assert!((got - e).abs() < 1e-12, "{phase:?} exclude={exclude_seen}");
            }
            check_report_structure(&report.metrics);
        }
    }
}

/// Puts the target first by giving it the only positive score.
struct Oracle {
    target_of: Vec<usize>,
    n: usize,
}

impl Scorer for Oracle {
    fn num_items(&self) -> usize {
        self.n
    }

    fn window_len(&self) -> usize {
        4
    }

    fn score_windows(&self, windows: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        Ok(windows
            .iter()
            .map(|w| {
                let t = self.target_of[w[3]];
                (1..=self.n)
                    .map(|i| if i == t { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect())
    }
}

#[test]
fn perfect_scorer_reaches_the_maxima() {
    let data = toy();
    // last item of each user's test context → the user's test item
    let mut target_of = vec![0; 7];
    for s in &data.sequences {
        let n = s.items.len();
        target_of[s.items[n - 2]] = s.items[n - 1];
    }
    let report = evaluate(
        &Oracle { target_of, n: 6 },
        &data,
        Phase::Test,
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(report.metrics.values(), [1.0, 1.0, 1.0, 0.1, 1.0]);
}

#[test]
fn excluding_everything_but_the_target_gives_rank_one() {
    let mut r = rng(5);
    for _ in 0..50 {
        let n = r.gen_range(1..40);
        let scores: Vec<f64> = (0..n).map(|_| r.gen()).collect();
        let target = r.gen_range(1..=n);
        let exclude: HashSet<usize> = (1..=n).filter(|&i| i != target).collect();
        assert_eq!(rank_of_target(&scores, target, &exclude).unwrap(), 1);
    }
}

#[test]
fn evaluation_ignores_user_order_and_chunking() {
    let data = toy();
    let scorer = reverse_popularity(&data);
    let base = evaluate(&scorer, &data, Phase::Test, &EvalOptions::default()).unwrap();
    let mut reversed = data.clone();
    reversed.sequences.reverse();
    for chunk in [1, 2, 3, 100] {
        let opts = EvalOptions {
            exclude_seen: true,
            chunk,
        };
        assert_eq!(
            evaluate(&scorer, &reversed, Phase::Test, &opts)
                .unwrap()
                .metrics,
            base.metrics
        );
    }
}

#[test]
fn report_csv_round_trips_bit_exactly() {
    let data = toy();
    let mut report = evaluate(
        &reverse_popularity(&data),
        &data,
        Phase::Test,
        &EvalOptions::default(),
    )
    .unwrap();
    report.model = "SASRec".into();
    report.fingerprint = "0123abcd".into();
    let text = EvalReport::to_csv(std::slice::from_ref(&report)).unwrap();
    assert_eq!(EvalReport::parse_csv(&text).unwrap(), vec![report]);
}
