//! Per-system metric tables and the cross-system significance summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{ap_at, mean, ndcg_at, AP_CUTOFF, NDCG_CUTOFF};
use super::stats::paired_t_test;
use crate::data::{Qrels, RunList};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub ndcg_at_10: f64,
    pub ap_at_100: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub means: QueryMetrics,
    pub jaccard_mean: Option<f64>,
    pub n_queries: usize,
}

impl MetricReport {
    /// Scores every query in the run; queries without relevant documents
    /// count as 0.
    pub fn compute(run: &RunList, qrels: &Qrels, binary_threshold: u32) -> Self {
        let ndcg = ndcg_at::<f64>(run, qrels, NDCG_CUTOFF);
        let ap = ap_at::<f64>(run, qrels, AP_CUTOFF, binary_threshold);
        let per_query: BTreeMap<String, QueryMetrics> = ndcg
            .iter()
            .map(|(q, n)| (q.clone(), QueryMetrics { ndcg_at_10: *n, ap_at_100: ap[q] }))
            .collect();
        let means = QueryMetrics {
            ndcg_at_10: mean(per_query.values().map(|m| m.ndcg_at_10)),
            ap_at_100: mean(per_query.values().map(|m| m.ap_at_100)),
        };
        Self {
            n_queries: per_query.len(),
            per_query,
            means,
            jaccard_mean: None,
        }
    }

    pub fn with_jaccard_mean(mut self, j: Option<f64>) -> Self {
        self.jaccard_mean = j;
        self
    }

    pub fn ndcg(&self) -> BTreeMap<String, f64> {
        self.per_query.iter().map(|(q, m)| (q.clone(), m.ndcg_at_10)).collect()
    }

    pub fn ap(&self) -> BTreeMap<String, f64> {
        self.per_query.iter().map(|(q, m)| (q.clone(), m.ap_at_100)).collect()
    }

    /// One row per query plus a final `all` row of means.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("query_id\tndcg@10\tap@100\n");
        for (q, m) in &self.per_query {
            let _ = writeln!(s, "{q}\t{:.4}\t{:.4}", m.ndcg_at_10, m.ap_at_100);
        }
        let _ = writeln!(s, "all\t{:.4}\t{:.4}", self.means.ndcg_at_10, self.means.ap_at_100);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceEntry {
    pub system_a: String,
    pub system_b: String,
    pub metric: String,
    pub mean_difference: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Paired tests for every pair of systems on both metrics.
pub fn significance_matrix(systems: &[(String, MetricReport)], alpha: f64) -> Result<Vec<SignificanceEntry>> {
    let mut out = Vec::new();
    for (i, (name_a, a)) in systems.iter().enumerate() {
        for (name_b, b) in &systems[i + 1..] {
            for (metric, xa, xb) in [("ndcg@10", a.ndcg(), b.ndcg()), ("ap@100", a.ap(), b.ap())] {
                let t = paired_t_test(&xa, &xb, alpha)?;
                out.push(SignificanceEntry {
                    system_a: name_a.clone(),
                    system_b: name_b.clone(),
                    metric: metric.to_string(),
                    mean_difference: t.mean_difference,
                    t_stat: t.t_stat,
                    p_value: t.p_value,
                    significant: t.significant,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSummary {
    pub system: String,
    pub n_queries: usize,
    pub means: QueryMetrics,
    pub jaccard_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationSummary {
    pub systems: Vec<SystemSummary>,
    pub significance: Vec<SignificanceEntry>,
}

impl EvaluationSummary {
    pub fn build(systems: &[(String, MetricReport)], alpha: f64) -> Result<Self> {
        let significance = if systems.len() > 1 && systems.iter().all(|(_, r)| r.n_queries >= 2) {
            significance_matrix(systems, alpha)?
        } else {
            Vec::new()
        };
        Ok(Self {
            systems: systems
                .iter()
                .map(|(name, r)| SystemSummary {
                    system: name.clone(),
                    n_queries: r.n_queries,
                    means: r.means,
                    jaccard_mean: r.jaccard_mean,
                })
                .collect(),
            significance,
        })
    }
}
