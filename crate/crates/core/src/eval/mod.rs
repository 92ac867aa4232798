//! Scoring, Top-K ranking, Recall/NDCG, inference benchmarking and the
//! loss-landscape probe.

mod bench;
mod landscape;
mod scoring;

pub use bench::{bench_inference, BenchReport};
pub use landscape::{landscape_batch, perturb_landscape, signed_grid, LandscapeGrid};
pub use scoring::{
    int_aggregate, score_all_items, Aggregate, DenseScorer, FloatScorer, IntScorer, Ranker, Scores,
};

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::SplitDataset;
use crate::model::Mode;
use crate::store::QuantizedTable;

/// Cutoffs reported by default.
pub const DEFAULT_KS: [usize; 5] = [20, 40, 60, 80, 100];

/// Score types that can be ranked.
pub trait Score: Copy + Send + Sync {
    /// Orders higher scores first; equal scores compare equal.
    fn rank_cmp(a: Self, b: Self) -> Ordering;
}

impl Score for i32 {
    fn rank_cmp(a: Self, b: Self) -> Ordering {
        b.cmp(&a)
    }
}

macro_rules! float_score {
    ($t:ty) => {
        impl Score for $t {
            fn rank_cmp(a: Self, b: Self) -> Ordering {
                if a == b {
                    Ordering::Equal
                } else {
                    b.total_cmp(&a)
                }
            }
        }
    };
}
float_score!(f32);
float_score!(f64);

/// The `k` best items by descending score, ties broken by ascending index,
/// skipping the sorted `exclude` list.
pub fn topk<S: Score>(scores: &[S], k: usize, exclude: &[u32]) -> Vec<u32> {
    debug_assert!(
        exclude.windows(2).all(|w| w[0] < w[1]),
        "exclude must be sorted"
    );
    let mut candidates: Vec<u32> = Vec::with_capacity(scores.len().saturating_sub(exclude.len()));
    let mut skip = exclude.iter().copied().peekable();
    for i in 0..scores.len() as u32 {
        while skip.next_if(|&e| e < i).is_some() {}
        if skip.next_if_eq(&i).is_none() {
            candidates.push(i);
        }
    }
    let cmp =
        |a: &u32, b: &u32| S::rank_cmp(scores[*a as usize], scores[*b as usize]).then(a.cmp(b));
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(cmp);
    candidates
}

fn hits<'a>(
    ranked: &'a [u32],
    positives: &'a [u32],
    k: usize,
) -> impl Iterator<Item = (usize, bool)> + 'a {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .map(move |(r, i)| (r, positives.binary_search(i).is_ok()))
}

/// Fraction of `positives` (sorted) found in the first `k` of `ranked`.
pub fn recall_at_k(ranked: &[u32], positives: &[u32], k: usize) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::NoEvaluableUsers("user has no held-out positives"));
    }
    let found = hits(ranked, positives, k).filter(|h| h.1).count();
    Ok(found as f64 / positives.len() as f64)
}

/// Binary-relevance NDCG with the ideal list truncated at
/// `min(k, |positives|)`.
pub fn ndcg_at_k(ranked: &[u32], positives: &[u32], k: usize) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::NoEvaluableUsers("user has no held-out positives"));
    }
    let gain = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = hits(ranked, positives, k)
        .filter(|h| h.1)
        .map(|h| gain(h.0))
        .sum();
    let idcg: f64 = (0..k.min(positives.len())).map(gain).sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "K,recall,ndcg,users")?;
        for r in &self.rows {
            writeln!(out, "{},{:.6},{:.6},{}", r.k, r.recall, r.ndcg, r.users)?;
        }
        Ok(())
    }
}

/// Ranks all items for every user with held-out positives, excluding the
/// user's training items, and averages the metrics per cutoff.
pub fn evaluate<R: Ranker>(
    ranker: &R,
    split: &SplitDataset,
    ks: &[usize],
) -> Result<MetricsReport> {
    let train = &split.train;
    if ranker.num_users() != train.num_users() || ranker.num_items() != train.num_items() {
        return Err(Error::Shape(format!(
            "scorer covers {} users x {} items, data has {} x {}",
            ranker.num_users(),
            ranker.num_items(),
            train.num_users(),
            train.num_items()
        )));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(
            "cutoffs must be a non-empty list of positive values".into(),
        ));
    }
    let users: Vec<usize> = split.evaluable_users().collect();
    if users.is_empty() {
        return Err(Error::NoEvaluableUsers("no user has held-out positives"));
    }
    let max_k = *ks.iter().max().expect("non-empty");
    let per_user: Vec<Vec<(f64, f64)>> = users
        .par_iter()
        .map_init(Vec::new, |buf, &u| {
            ranker.score_into(u, buf)?;
            let ranked = topk(buf, max_k, train.user_items(u));
            let positives = &split.test_positives[u];
            ks.iter()
                .map(|&k| {
                    Ok((
                        recall_at_k(&ranked, positives, k)?,
                        ndcg_at_k(&ranked, positives, k)?,
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = users.len() as f64;
    let rows = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let (r, g) = per_user
                .iter()
                .fold((0.0, 0.0), |acc, m| (acc.0 + m[j].0, acc.1 + m[j].1));
            MetricsRow {
                k,
                recall: r / n,
                ndcg: g / n,
                users: users.len(),
            }
        })
        .collect();
    Ok(MetricsReport { rows })
}

/// [`evaluate`] with the integer scorer for plain codes and the float
/// scorer for rescaled ones.
pub fn evaluate_table(
    table: &QuantizedTable,
    split: &SplitDataset,
    ks: &[usize],
) -> Result<MetricsReport> {
    match table.mode() {
        Mode::End => evaluate(&IntScorer::from_table(table)?, split, ks),
        Mode::Anl => evaluate(&FloatScorer::from_table(table)?, split, ks),
    }
}

#[cfg(test)]
mod tests;
