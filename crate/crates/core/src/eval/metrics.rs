//! Rank metrics over a run and graded judgments.

use std::collections::BTreeMap;

use crate::data::{Qrels, RunEntry, RunList};
use crate::num::Real;

pub const NDCG_CUTOFF: usize = 10;
pub const AP_CUTOFF: usize = 100;
pub const DEFAULT_BINARY_THRESHOLD: u32 = 2;

fn gain<T: Real>(grade: u32) -> T {
    T::lit(2.0).powi(grade as i32) - T::one()
}

fn discount<T: Real>(rank: usize) -> T {
    T::from_count(rank + 1).log2()
}

/// DCG over the first `cutoff` ranks with gain 2^g − 1, normalized by the
/// ideal ordering of every judged document. No relevant documents gives 0.
pub fn ndcg<T: Real>(ranked: &[RunEntry], query_id: &str, qrels: &Qrels, cutoff: usize) -> T {
    let mut ideal: Vec<u32> = qrels.judged(query_id).map(|(_, g)| g).filter(|&g| g > 0).collect();
    if ideal.is_empty() || cutoff == 0 {
        return T::zero();
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: T = ideal
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, &g)| gain::<T>(g) / discount::<T>(i + 1))
        .sum();
    let dcg: T = ranked
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, e)| gain::<T>(qrels.grade(query_id, &e.doc_id)) / discount::<T>(i + 1))
        .sum();
    dcg / idcg
}

/// Average precision at `cutoff` with grades binarized at `threshold`;
/// normalized by all relevant documents in the judgments.
pub fn average_precision<T: Real>(
    ranked: &[RunEntry],
    query_id: &str,
    qrels: &Qrels,
    cutoff: usize,
    threshold: u32,
) -> T {
    let total_relevant = qrels.judged(query_id).filter(|&(_, g)| g >= threshold).count();
    if total_relevant == 0 {
        return T::zero();
    }
    let mut hits = 0usize;
    let mut sum = T::zero();
    for (i, e) in ranked.iter().take(cutoff).enumerate() {
        if qrels.grade(query_id, &e.doc_id) >= threshold {
            hits += 1;
            sum += T::from_count(hits) / T::from_count(i + 1);
        }
    }
    sum / T::from_count(total_relevant)
}

/// nDCG per query of the run.
pub fn ndcg_at<T: Real>(run: &RunList, qrels: &Qrels, cutoff: usize) -> BTreeMap<String, T> {
    run.iter()
        .map(|(q, entries)| (q.to_string(), ndcg(entries, q, qrels, cutoff)))
        .collect()
}

/// Average precision per query of the run.
pub fn ap_at<T: Real>(run: &RunList, qrels: &Qrels, cutoff: usize, threshold: u32) -> BTreeMap<String, T> {
    run.iter()
        .map(|(q, entries)| (q.to_string(), average_precision(entries, q, qrels, cutoff, threshold)))
        .collect()
}

pub fn mean<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let mut n = 0usize;
    let mut s = T::zero();
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        T::zero()
    } else {
        s / T::from_count(n)
    }
}
