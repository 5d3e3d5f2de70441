//! Rank metrics, significance tests and neighborhood-locality diagnostics.

mod locality;
mod metrics;
mod report;
mod stats;

pub use locality::{jaccard, jaccard_neighborhood, locality_report, LocalityReport, LocalityRow};
pub use metrics::{ap_at, average_precision, mean, ndcg, ndcg_at, AP_CUTOFF, DEFAULT_BINARY_THRESHOLD, NDCG_CUTOFF};
pub use report::{significance_matrix, EvaluationSummary, MetricReport, QueryMetrics, SignificanceEntry, SystemSummary};
pub use stats::{paired_t_test, paired_t_test_slices, pearson, Correlation, TTest};
