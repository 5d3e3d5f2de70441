//! Term overlap between a query and its example neighborhood, and how it
//! relates to the per-query gain from adding examples.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{ndcg_at, NDCG_CUTOFF};
use super::stats::{pearson, Correlation};
use crate::analyzer::term_set;
use crate::data::{Qrels, Query, RunList};
use crate::error::{Error, Result};

/// Jaccard similarity of analyzed term sets; a side with no terms gives 0.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let (x, y) = (term_set(a), term_set(b));
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    let inter = x.intersection(&y).count();
    let union = x.len() + y.len() - inter;
    inter as f64 / union as f64
}

/// Mean pairwise Jaccard between `query` and each neighbor.
pub fn jaccard_neighborhood(query: &Query, neighbors: &[Query]) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::Argument(format!("query {} has an empty neighborhood", query.query_id)));
    }
    let total: f64 = neighbors.iter().map(|n| jaccard(&query.text, &n.text)).sum();
    Ok(total / neighbors.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalityRow {
    pub query_id: String,
    pub jaccard: f64,
    pub delta_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalityReport {
    pub rows: Vec<LocalityRow>,
    pub correlation: Correlation<f64>,
}

impl LocalityReport {
    pub fn from_rows(rows: Vec<LocalityRow>) -> Result<Self> {
        let j: Vec<f64> = rows.iter().map(|r| r.jaccard).collect();
        let d: Vec<f64> = rows.iter().map(|r| r.delta_ndcg).collect();
        let correlation = pearson(&j, &d)?;
        Ok(Self { rows, correlation })
    }

    /// `query_id, jaccard, delta_ndcg@10` rows; the trailing comment line
    /// carries the correlation.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("query_id\tjaccard\tdelta_ndcg@10\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}", r.query_id, r.jaccard, r.delta_ndcg);
        }
        let _ = writeln!(
            s,
            "# pearson\t{:.6}\tdegenerate={}",
            self.correlation.rho, self.correlation.degenerate
        );
        s
    }
}

/// Per query: neighborhood overlap and nDCG@10(few-shot) − nDCG@10(zero-shot).
/// Both runs and the neighborhood map must cover the same queries.
pub fn locality_report(
    zero_shot: &RunList,
    few_shot: &RunList,
    qrels: &Qrels,
    queries: &BTreeMap<String, Query>,
    neighborhoods: &BTreeMap<String, Vec<Query>>,
) -> Result<LocalityReport> {
    let zq: Vec<&str> = zero_shot.query_ids().collect();
    let fq: Vec<&str> = few_shot.query_ids().collect();
    let nq: Vec<&str> = neighborhoods.keys().map(String::as_str).collect();
    if zq != fq || zq != nq {
        return Err(Error::Argument("locality report inputs cover different query sets".into()));
    }
    let z = ndcg_at::<f64>(zero_shot, qrels, NDCG_CUTOFF);
    let f = ndcg_at::<f64>(few_shot, qrels, NDCG_CUTOFF);
    let mut rows = Vec::with_capacity(zq.len());
    for qid in zq {
        let q = queries
            .get(qid)
            .ok_or_else(|| Error::Lookup(format!("query text for {qid}")))?;
        rows.push(LocalityRow {
            query_id: qid.to_string(),
            jaccard: jaccard_neighborhood(q, &neighborhoods[qid])?,
            delta_ndcg: f[qid] - z[qid],
        });
    }
    LocalityReport::from_rows(rows)
}
