//! Generated topical collections for simulation and end-to-end checks.
//!
//! Every document and query belongs to one topic. Each topic draws its
//! vocabulary from a shared pool, so topics overlap lexically and BM25 makes
//! mistakes worth correcting. Test-query utilities are distinct per query:
//! on-topic documents sit above off-topic ones and carry grades 1..=3.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::OracleWorld;
use crate::config::{BackendKind, ExperimentConfig};
use crate::data::{write_atomic, write_trec_run, Corpus, Document, Qrels, Query, QuerySet, RunList};
use crate::error::{Error, Result};
use crate::sparse::{AnalyzerConfig, InvertedIndex};

const FILLER: &[&str] = &[
    "the", "of", "and", "a", "to", "in", "is", "for", "on", "with", "as", "by", "that", "this", "from",
];

#[derive(Debug, Clone, PartialEq)]
pub struct WorldParams {
    pub n_docs: usize,
    pub n_topics: usize,
    pub n_test_queries: usize,
    pub n_training_queries: usize,
    pub vocabulary: usize,
    pub words_per_topic: usize,
    pub doc_len: usize,
    pub query_len: usize,
    /// Relevant documents judged per training query.
    pub training_positives: usize,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_docs: 200,
            n_topics: 10,
            n_test_queries: 20,
            n_training_queries: 100,
            vocabulary: 120,
            words_per_topic: 14,
            doc_len: 30,
            query_len: 3,
            training_positives: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub corpus: Corpus,
    pub queries: QuerySet,
    pub training_queries: QuerySet,
    pub qrels: Qrels,
    pub training_qrels: Qrels,
    /// Distinct integer utility of every (test query, document) pair.
    pub utilities: BTreeMap<String, BTreeMap<String, u32>>,
}

fn word(i: usize) -> String {
    // letters only, so the analyzer keeps each word as a single term
    let mut s = String::from("w");
    let mut n = i;
    loop {
        s.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    s
}

impl SyntheticWorld {
    pub fn generate(params: &WorldParams) -> Result<Self> {
        if params.n_topics == 0 || params.n_docs < params.n_topics || params.words_per_topic > params.vocabulary {
            return Err(Error::Argument(format!("inconsistent synthetic params {params:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let vocab: Vec<String> = (0..params.vocabulary).map(word).collect();
        let topics: Vec<Vec<&String>> = (0..params.n_topics)
            .map(|_| vocab.choose_multiple(&mut rng, params.words_per_topic).collect())
            .collect();

        let mut doc_topic = Vec::with_capacity(params.n_docs);
        let mut docs = Vec::with_capacity(params.n_docs);
        for i in 0..params.n_docs {
            let t = i % params.n_topics;
            let words: Vec<String> = (0..params.doc_len)
                .map(|_| {
                    if rng.random_bool(0.6) {
                        topics[t].choose(&mut rng).expect("topic vocabulary").to_string()
                    } else if rng.random_bool(0.5) {
                        vocab.choose(&mut rng).expect("vocabulary").to_string()
                    } else {
                        FILLER.choose(&mut rng).expect("filler").to_string()
                    }
                })
                .collect();
            docs.push(Document::new(format!("d{i:04}"), words.join(" ")));
            doc_topic.push(t);
        }

        let query_text = |rng: &mut ChaCha8Rng, t: usize| {
            topics[t]
                .choose_multiple(rng, params.query_len)
                .map(|w| w.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };

        let mut queries = Vec::new();
        let mut qrels = Qrels::new();
        let mut utilities = BTreeMap::new();
        for i in 0..params.n_test_queries {
            let qid = format!("q{i:03}");
            let t = rng.random_range(0..params.n_topics);
            queries.push(Query::new(&qid, query_text(&mut rng, t)));
            // on-topic documents get grades 1..=3, the rest 0; a random
            // permutation breaks ties inside each grade
            let mut order: Vec<usize> = (0..params.n_docs).collect();
            order.shuffle(&mut rng);
            let mut u = BTreeMap::new();
            for (j, &d) in order.iter().enumerate() {
                let grade = if doc_topic[d] == t { rng.random_range(1..=3u32) } else { 0 };
                let doc_id = &docs[d].doc_id;
                u.insert(doc_id.clone(), grade * params.n_docs as u32 + j as u32);
                qrels.insert(&qid, doc_id, grade)?;
            }
            utilities.insert(qid, u);
        }

        let mut training = Vec::new();
        let mut training_qrels = Qrels::new();
        let by_topic: Vec<Vec<usize>> = (0..params.n_topics)
            .map(|t| (0..params.n_docs).filter(|&d| doc_topic[d] == t).collect())
            .collect();
        for i in 0..params.n_training_queries {
            let qid = format!("t{i:03}");
            let t = rng.random_range(0..params.n_topics);
            training.push(Query::new(&qid, query_text(&mut rng, t)));
            for &d in by_topic[t].choose_multiple(&mut rng, params.training_positives) {
                training_qrels.insert(&qid, &docs[d].doc_id, 1)?;
            }
        }

        Ok(Self {
            corpus: Corpus::from_items(docs)?,
            queries: QuerySet::from_items(queries)?,
            training_queries: QuerySet::from_items(training)?,
            qrels,
            training_qrels,
            utilities,
        })
    }

    pub fn oracle(&self, noise_rate: f64, seed: u64) -> Result<OracleWorld> {
        let mut w = OracleWorld::new(noise_rate, seed)?;
        for (q, docs) in &self.utilities {
            for (d, u) in docs {
                w.set_gold(q, d, f64::from(*u));
            }
        }
        Ok(w)
    }

    /// BM25 top-`depth` over the corpus for every test query.
    pub fn first_stage(&self, depth: usize) -> Result<RunList> {
        let index = InvertedIndex::build(&self.corpus, AnalyzerConfig::default())?;
        let mut run = RunList::new();
        for q in &self.queries {
            let hits = index.bm25_search::<f64>(&q.text, depth);
            run.insert_ranked(&q.query_id, hits.into_iter().map(|h| (h.item_id, h.score)).collect())?;
        }
        Ok(run)
    }

    /// Writes all inputs under `dir` and returns a config that reranks them
    /// with an oracle backend reading `gold.qrels`.
    pub fn write_fixture(&self, dir: &Path, depth: usize) -> Result<ExperimentConfig> {
        let io = |what: &str, e| Error::io(format!("write {what}"), e);
        std::fs::create_dir_all(dir).map_err(|e| io("fixture dir", e))?;
        write_atomic(&dir.join("corpus.jsonl"), |w| {
            for d in &self.corpus {
                let line = serde_json::json!({"id": d.doc_id, "text": d.text});
                writeln!(w, "{line}")?;
            }
            Ok(())
        })?;
        for (name, set) in [("queries.tsv", &self.queries), ("training.tsv", &self.training_queries)] {
            write_atomic(&dir.join(name), |w| {
                for q in set {
                    writeln!(w, "{}\t{}", q.query_id, q.text)?;
                }
                Ok(())
            })?;
        }
        for (name, qrels) in [("qrels.txt", &self.qrels), ("training_qrels.txt", &self.training_qrels)] {
            write_atomic(&dir.join(name), |w| {
                for q in qrels.query_ids() {
                    for (d, g) in qrels.judged(q) {
                        writeln!(w, "{q} 0 {d} {g}")?;
                    }
                }
                Ok(())
            })?;
        }
        write_atomic(&dir.join("gold.qrels"), |w| {
            for (q, docs) in &self.utilities {
                for (d, u) in docs {
                    writeln!(w, "{q} 0 {d} {u}")?;
                }
            }
            Ok(())
        })?;
        write_trec_run(&self.first_stage(depth)?, "bm25", dir.join("bm25.run"))?;

        let mut cfg = ExperimentConfig::default();
        let p = &mut cfg.paths;
        p.corpus = Some(dir.join("corpus.jsonl"));
        p.queries = Some(dir.join("queries.tsv"));
        p.training_queries = Some(dir.join("training.tsv"));
        p.qrels = Some(dir.join("qrels.txt"));
        p.training_qrels = Some(dir.join("training_qrels.txt"));
        p.first_stage_run = Some(dir.join("bm25.run"));
        p.index_dir = Some(dir.join("index"));
        p.output_run = Some(dir.join("reranked.run"));
        p.provenance = Some(dir.join("provenance.jsonl"));
        p.report_dir = Some(dir.join("reports"));
        cfg.depth = depth;
        cfg.sampler.neg_lo = 5;
        cfg.sampler.neg_hi = 50;
        cfg.backend.kind = BackendKind::Oracle;
        cfg.backend.oracle.gold = Some(dir.join("gold.qrels"));
        cfg.backend.oracle.unjudged_utility = None;
        cfg.backend.cache = Some(dir.join("cache.jsonl"));
        cfg.backend.parallelism = 4;
        Ok(cfg)
    }
}
