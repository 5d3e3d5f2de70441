//! The index / neighbors / rerank / evaluate commands as library calls.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, CacheStats, CachedBackend, HttpBackend, HttpBackendConfig, OracleWorld, ENV_BACKEND_URL};
use crate::config::{BackendKind, ExperimentConfig, Stage};
use crate::data::{
    read_jsonl_corpus, read_qrels, read_trec_run, read_tsv_queries, write_atomic, write_trec_run, Corpus, Qrels, Query,
    QuerySet, RunList,
};
use crate::dense::{load_embeddings, EmbeddingClient, EmbeddingStore};
use crate::error::{Error, Result};
use crate::eval::{jaccard, locality_report, EvaluationSummary, LocalityReport, MetricReport};
use crate::icl::{sample_examples, ExampleSource, IclExample, Neighborhood, NeighborhoodSource, Selector};
use crate::prompt::PromptTemplate;
use crate::rerank::Judge;
use crate::sparse::{AnalyzerConfig, InvertedIndex};
use crate::transport::RetryPolicy;

pub const CORPUS_INDEX_FILE: &str = "corpus.bm25";
pub const TRAINING_INDEX_FILE: &str = "training_queries.bm25";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexSummary {
    pub corpus_documents: usize,
    pub corpus_terms: usize,
    pub corpus_digest: String,
    pub training_queries: usize,
    pub training_terms: usize,
    pub training_digest: String,
    pub embeddings: Option<usize>,
    pub embedding_dim: Option<usize>,
}

/// Builds and saves the corpus and training-query indexes and checks the
/// embedding file if one is configured.
pub fn cmd_index(cfg: &ExperimentConfig) -> Result<IndexSummary> {
    cfg.validate(Stage::Index)?;
    let p = &cfg.paths;
    let corpus = read_jsonl_corpus(p.corpus.as_ref().expect("validated"))?;
    let training = read_tsv_queries(p.training_queries.as_ref().expect("validated"))?;
    let (embeddings, embedding_dim) = match &p.embeddings {
        Some(path) => {
            let store = load_embeddings::<f64>(path)?;
            store.check_norms()?;
            (Some(store.len()), Some(store.dim()))
        }
        None => (None, None),
    };
    let dir = cfg.index_dir()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
    let corpus_index = InvertedIndex::build(&corpus, AnalyzerConfig::default())?;
    corpus_index.save(dir.join(CORPUS_INDEX_FILE))?;
    let training_index = InvertedIndex::build(&training, AnalyzerConfig::default())?;
    training_index.save(dir.join(TRAINING_INDEX_FILE))?;
    let summary = IndexSummary {
        corpus_documents: corpus_index.n_items(),
        corpus_terms: corpus_index.n_terms(),
        corpus_digest: corpus_index.digest(),
        training_queries: training_index.n_items(),
        training_terms: training_index.n_terms(),
        training_digest: training_index.digest(),
        embeddings,
        embedding_dim,
    };
    info!(
        "indexed {} documents and {} training queries",
        summary.corpus_documents, summary.training_queries
    );
    Ok(summary)
}

fn load_index(cfg: &ExperimentConfig, file: &str) -> Result<InvertedIndex> {
    let path = cfg.index_dir()?.join(file);
    if !path.exists() {
        return Err(Error::Config(format!("{} is missing; run the index command first", path.display())));
    }
    InvertedIndex::load(path)
}

/// Everything needed to pick neighborhoods for probe queries.
struct NeighborhoodResources {
    training: QuerySet,
    training_index: InvertedIndex,
    training_embeddings: Option<EmbeddingStore<f64>>,
    query_embeddings: Option<EmbeddingStore<f64>>,
    embedding_client: Option<EmbeddingClient>,
}

impl NeighborhoodResources {
    fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let p = &cfg.paths;
        let training = read_tsv_queries(p.training_queries.as_ref().expect("validated"))?;
        let training_index = load_index(cfg, TRAINING_INDEX_FILE)?;
        let (training_embeddings, query_embeddings, embedding_client) = if cfg.selector == Selector::Sem {
            let train = load_embeddings::<f64>(p.embeddings.as_ref().expect("validated"))?;
            let probes = p.query_embeddings.as_ref().map(load_embeddings::<f64>).transpose()?;
            let client = match &cfg.backend.embedding_url {
                Some(url) => Some(EmbeddingClient::new(
                    url.clone(),
                    std::env::var(&cfg.backend.key_env).ok(),
                    RetryPolicy {
                        max_retries: cfg.backend.max_retries,
                        timeout: cfg.backend.timeout(),
                        ..RetryPolicy::default()
                    },
                )?),
                None => None,
            };
            (Some(train), probes, client)
        } else {
            (None, None, None)
        };
        Ok(Self {
            training,
            training_index,
            training_embeddings,
            query_embeddings,
            embedding_client,
        })
    }

    fn probe_embedding(&self, q: &Query) -> Result<Option<Vec<f64>>> {
        let Some(store) = &self.training_embeddings else {
            return Ok(None);
        };
        if let Some(v) = self.query_embeddings.as_ref().and_then(|s| s.get(&q.query_id)) {
            return Ok(Some(v.to_vec()));
        }
        if let Some(v) = store.get(&q.query_id) {
            return Ok(Some(v.to_vec()));
        }
        match &self.embedding_client {
            Some(c) => Ok(Some(c.fetch_embedding::<f64>(&q.text, Some(store.dim()))?)),
            None => Err(Error::Config(format!("no embedding for query {}", q.query_id))),
        }
    }

    fn select(&self, cfg: &ExperimentConfig, q: &Query, size: usize) -> Result<Neighborhood> {
        let source = NeighborhoodSource {
            training_index: Some(&self.training_index),
            embeddings: self.training_embeddings.as_ref(),
            static_ids: &cfg.static_ids,
        };
        let probe = self.probe_embedding(q)?;
        source.select(q, cfg.selector, size, probe.as_deref())
    }

    fn neighbor_queries(&self, nbhd: &Neighborhood) -> Result<Vec<Query>> {
        nbhd.ids()
            .map(|id| {
                self.training
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::Lookup(format!("training query {id}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborRow {
    pub query_id: String,
    pub similarity: f64,
    pub jaccard: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborReport {
    pub probe_query_id: String,
    pub probe_text: String,
    pub selector: Selector,
    pub neighbors: Vec<NeighborRow>,
    /// Mean Jaccard over the listed neighbors.
    pub jaccard_mean: Option<f64>,
}

fn find_query(cfg: &ExperimentConfig, training: &QuerySet, query_id: &str) -> Result<Query> {
    if let Some(path) = &cfg.paths.queries {
        if path.exists() {
            if let Some(q) = read_tsv_queries(path)?.get(query_id) {
                return Ok(q.clone());
            }
        }
    }
    training
        .get(query_id)
        .cloned()
        .ok_or_else(|| Error::Lookup(format!("query {query_id} is in neither the test nor the training queries")))
}

/// The pool a probe's examples would be drawn from.
pub fn cmd_neighbors(cfg: &ExperimentConfig, query_id: &str) -> Result<NeighborReport> {
    cfg.validate(Stage::Neighbors)?;
    let res = NeighborhoodResources::load(cfg)?;
    let probe = find_query(cfg, &res.training, query_id)?;
    let nbhd = res.select(cfg, &probe, cfg.sampler.pool_size)?;
    let queries = res.neighbor_queries(&nbhd)?;
    let neighbors: Vec<NeighborRow> = nbhd
        .candidates
        .iter()
        .zip(&queries)
        .map(|(c, q)| NeighborRow {
            query_id: c.query_id.clone(),
            similarity: c.similarity,
            jaccard: jaccard(&probe.text, &q.text),
            text: q.text.clone(),
        })
        .collect();
    let jaccard_mean = (!queries.is_empty())
        .then(|| crate::eval::jaccard_neighborhood(&probe, &queries))
        .transpose()?;
    Ok(NeighborReport {
        probe_query_id: probe.query_id,
        probe_text: probe.text,
        selector: cfg.selector,
        neighbors,
        jaccard_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleProvenance {
    pub query_id: String,
    pub positive: String,
    pub negative: String,
    pub negative_rank: u32,
    pub flipped: bool,
}

impl From<&IclExample> for ExampleProvenance {
    fn from(e: &IclExample) -> Self {
        Self {
            query_id: e.example_query.query_id.clone(),
            positive: e.positive().doc_id.clone(),
            negative: e.negative().doc_id.clone(),
            negative_rank: e.negative_rank,
            flipped: e.flipped(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStatus {
    Ok,
    Failed,
}

/// One provenance line. Latencies are left out so warm re-runs are
/// byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryProvenance {
    pub query_id: String,
    pub status: QueryStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub neighborhood: Vec<String>,
    pub examples: Vec<ExampleProvenance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub pairs: usize,
    pub calls: u64,
    pub cache_hits: u64,
    pub cache_hit_rate: f64,
}

impl QueryProvenance {
    fn new(query_id: &str) -> Self {
        Self {
            query_id: query_id.to_string(),
            status: QueryStatus::Failed,
            error: None,
            neighborhood: Vec::new(),
            examples: Vec::new(),
            diagnostic: None,
            pairs: 0,
            calls: 0,
            cache_hits: 0,
            cache_hit_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RerankSummary {
    pub tag: String,
    pub queries: usize,
    pub reranked: usize,
    pub failed: Vec<String>,
    pub run_path: PathBuf,
    pub provenance_path: PathBuf,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

/// The configured backend without caching.
pub fn build_backend(cfg: &ExperimentConfig) -> Result<Box<dyn Backend>> {
    let b = &cfg.backend;
    match b.kind {
        BackendKind::Http => {
            let url = match &b.url {
                Some(u) => u.clone(),
                None => std::env::var(ENV_BACKEND_URL)
                    .map_err(|_| Error::Config(format!("backend.url is unset and {ENV_BACKEND_URL} is not set")))?,
            };
            let mut hc = HttpBackendConfig::new(url);
            hc.api_key = std::env::var(&b.key_env).ok().filter(|k| !k.is_empty());
            hc.model = b.model.clone();
            hc.top_logprobs = b.top_logprobs;
            hc.max_in_flight = b.parallelism;
            Ok(Box::new(HttpBackend::new(hc)?))
        }
        BackendKind::Oracle => {
            let o = &b.oracle;
            let gold_path = o.gold.as_ref().or(cfg.paths.qrels.as_ref()).ok_or_else(|| {
                Error::Config("oracle backend needs backend.oracle.gold or paths.qrels".into())
            })?;
            let gold = read_qrels(gold_path)?;
            let world = OracleWorld::from_qrels(&gold, o.noise_rate, o.seed)
                .and_then(|w| w.with_locality_discount(o.locality_discount))
                .map_err(|e| Error::Config(e.to_string()))?
                .with_unjudged_utility(o.unjudged_utility);
            Ok(Box::new(world))
        }
    }
}

/// Provenance plus the reranked list, absent when the query failed.
type QueryOutcome = (QueryProvenance, Option<Vec<(String, f64)>>);

struct RerankResources<'a, B: ?Sized> {
    cfg: &'a ExperimentConfig,
    backend: &'a B,
    template: PromptTemplate,
    corpus: Corpus,
    corpus_index: InvertedIndex,
    queries: QuerySet,
    training_qrels: Qrels,
    run: RunList,
    neighborhoods: Option<NeighborhoodResources>,
}

impl<B: Backend + ?Sized> RerankResources<'_, B> {
    fn rerank_one(&self, query_id: &str) -> QueryOutcome {
        let mut prov = QueryProvenance::new(query_id);
        match self.try_rerank(query_id, &mut prov) {
            Ok(ranked) => {
                prov.status = QueryStatus::Ok;
                (prov, Some(ranked))
            }
            Err(e) => {
                warn!("query {query_id} failed: {e}");
                prov.error = Some(e.to_string());
                (prov, None)
            }
        }
    }

    fn try_rerank(&self, query_id: &str, prov: &mut QueryProvenance) -> Result<Vec<(String, f64)>> {
        let cfg = self.cfg;
        let q = self
            .queries
            .get(query_id)
            .ok_or_else(|| Error::Lookup(format!("query {query_id} has no text")))?;
        let examples = match &self.neighborhoods {
            Some(res) if cfg.sampler.shots > 0 => {
                let nbhd = res.select(cfg, q, cfg.sampler.pool_size)?;
                prov.neighborhood = nbhd.ids().map(str::to_string).collect();
                let src = ExampleSource {
                    training_queries: &res.training,
                    training_qrels: &self.training_qrels,
                    corpus: &self.corpus,
                    corpus_index: &self.corpus_index,
                };
                let outcome = sample_examples(&nbhd, &src, &cfg.sampler)?;
                prov.diagnostic = outcome.diagnostic;
                outcome.examples
            }
            _ => Vec::new(),
        };
        prov.examples = examples.iter().map(ExampleProvenance::from).collect();
        let judge = Judge::new(self.backend, &self.template, &examples)
            .with_limits(cfg.backend.max_retries, cfg.backend.timeout())
            .with_set_size(cfg.set_size)?;
        let out = judge.rerank_query(&self.run, q, &self.corpus, cfg.depth)?;
        prov.pairs = out.pairs;
        prov.calls = out.stats.calls;
        prov.cache_hits = out.stats.cache_hits;
        prov.cache_hit_rate = out.stats.cache_hit_rate();
        Ok(out.ranked)
    }
}

/// Reranks every query of the first-stage run with the configured backend,
/// wrapped in the response cache.
pub fn cmd_rerank(cfg: &ExperimentConfig) -> Result<RerankSummary> {
    cfg.validate(Stage::Rerank)?;
    let inner = build_backend(cfg)?;
    let cached = match &cfg.backend.cache {
        Some(path) => CachedBackend::open(inner, path)?,
        None => CachedBackend::in_memory(inner),
    };
    let result = cmd_rerank_with(cfg, &cached);
    cached.save()?;
    let mut summary = result?;
    let CacheStats { hits, misses } = cached.stats();
    summary.cache_hits = hits;
    summary.cache_misses = misses;
    Ok(summary)
}

/// [`cmd_rerank`] over a caller-supplied backend.
pub fn cmd_rerank_with<B: Backend + ?Sized>(cfg: &ExperimentConfig, backend: &B) -> Result<RerankSummary> {
    cfg.validate(Stage::Rerank)?;
    let p = &cfg.paths;
    let template = match &p.template {
        Some(t) => PromptTemplate::load(cfg.mode, t)?,
        None => PromptTemplate::default_for(cfg.mode),
    }
    .with_truncation_budget(cfg.truncation_budget)
    .with_context_budget(cfg.context_budget);
    let res = RerankResources {
        cfg,
        backend,
        template,
        corpus: read_jsonl_corpus(p.corpus.as_ref().expect("validated"))?,
        corpus_index: load_index(cfg, CORPUS_INDEX_FILE)?,
        queries: read_tsv_queries(p.queries.as_ref().expect("validated"))?,
        training_qrels: read_qrels(p.training_qrels.as_ref().expect("validated"))?,
        run: read_trec_run(p.first_stage_run.as_ref().expect("validated"))?,
        neighborhoods: if cfg.sampler.shots > 0 {
            Some(NeighborhoodResources::load(cfg)?)
        } else {
            None
        },
    };
    let query_ids: Vec<&str> = res.run.query_ids().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.backend.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<QueryOutcome> =
        pool.install(|| query_ids.par_iter().map(|qid| res.rerank_one(qid)).collect());

    let mut run = RunList::new();
    let mut failed = Vec::new();
    for (prov, ranked) in &results {
        match ranked {
            Some(r) => run.insert_ranked(&prov.query_id, r.clone())?,
            None => failed.push(prov.query_id.clone()),
        }
    }
    let tag = cfg.run_tag();
    let run_path = p.output_run.clone().expect("validated");
    let provenance_path = p.provenance.clone().expect("validated");
    write_trec_run(&run, &tag, &run_path)?;
    write_atomic(&provenance_path, |w| {
        for (prov, _) in &results {
            let line = serde_json::to_string(prov).map_err(std::io::Error::other)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    })?;
    info!("reranked {} of {} queries ({tag})", run.len(), results.len());
    Ok(RerankSummary {
        tag,
        queries: results.len(),
        reranked: run.len(),
        failed,
        run_path,
        provenance_path,
        cache_hits: 0,
        cache_misses: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationOutput {
    pub reports: Vec<(String, MetricReport)>,
    pub summary: EvaluationSummary,
    pub locality: Option<LocalityReport>,
}

fn system_name(path: &Path, taken: &[(String, MetricReport)]) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let mut name = stem.clone();
    let mut k = 2;
    while taken.iter().any(|(n, _)| *n == name) {
        name = format!("{stem}#{k}");
        k += 1;
    }
    name
}

/// Metric reports for each run, pairwise significance across them and,
/// when `locality` names a (zero-shot, few-shot) pair, the per-query
/// overlap versus gain table. Files go to `paths.report_dir` when set.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    runs: &[PathBuf],
    locality: Option<(&Path, &Path)>,
) -> Result<EvaluationOutput> {
    cfg.validate(Stage::Evaluate)?;
    if runs.is_empty() && locality.is_none() {
        return Err(Error::Argument("no runs to evaluate".into()));
    }
    let qrels = read_qrels(cfg.paths.qrels.as_ref().expect("validated"))?;
    let mut reports: Vec<(String, MetricReport)> = Vec::new();
    let mut loaded: BTreeMap<PathBuf, RunList> = BTreeMap::new();
    for path in runs {
        let run = read_trec_run(path)?;
        let report = MetricReport::compute(&run, &qrels, cfg.eval_threshold);
        reports.push((system_name(path, &reports), report));
        loaded.insert(path.clone(), run);
    }

    let locality_table = match locality {
        Some((zero, few)) => {
            cfg.validate(Stage::Neighbors)?;
            let zero_run = match loaded.get(zero) {
                Some(r) => r.clone(),
                None => read_trec_run(zero)?,
            };
            let few_run = match loaded.get(few) {
                Some(r) => r.clone(),
                None => read_trec_run(few)?,
            };
            let res = NeighborhoodResources::load(cfg)?;
            let test_queries = read_tsv_queries(
                cfg.paths
                    .queries
                    .as_ref()
                    .ok_or_else(|| Error::Config("paths.queries is not configured".into()))?,
            )?;
            let k = cfg.sampler.shots.max(1);
            let mut texts = BTreeMap::new();
            let mut neighborhoods = BTreeMap::new();
            for qid in zero_run.query_ids() {
                let q = test_queries
                    .get(qid)
                    .ok_or_else(|| Error::Lookup(format!("query {qid} has no text")))?;
                let nbhd = res.select(cfg, q, k)?;
                neighborhoods.insert(qid.to_string(), res.neighbor_queries(&nbhd)?);
                texts.insert(qid.to_string(), q.clone());
            }
            let table = locality_report(&zero_run, &few_run, &qrels, &texts, &neighborhoods)?;
            let j_mean = crate::eval::mean(table.rows.iter().map(|r| r.jaccard));
            for (path, (_, report)) in runs.iter().zip(reports.iter_mut()) {
                if path.as_path() == few {
                    report.jaccard_mean = Some(j_mean);
                }
            }
            Some(table)
        }
        None => None,
    };

    let summary = EvaluationSummary::build(&reports, cfg.alpha)?;
    if let Some(dir) = &cfg.paths.report_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
        for (name, report) in &reports {
            let tsv = report.to_tsv();
            write_atomic(&dir.join(format!("{name}.tsv")), |w| w.write_all(tsv.as_bytes()))?;
        }
        let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Validation(e.to_string()))?;
        write_atomic(&dir.join("summary.json"), |w| writeln!(w, "{json}"))?;
        if let Some(t) = &locality_table {
            let tsv = t.to_tsv();
            write_atomic(&dir.join("locality.tsv"), |w| w.write_all(tsv.as_bytes()))?;
        }
    }
    Ok(EvaluationOutput {
        reports,
        summary,
        locality: locality_table,
    })
}
