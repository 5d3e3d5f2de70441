//! In-context example selection.
//!
//! A probe query gets a neighborhood of up to `K` similar training queries
//! (BM25 over query texts, cosine over query embeddings, or a fixed list).
//! From that pool `k` queries are drawn uniformly without replacement; each
//! one contributes a triple of the query, one of its relevant documents and a
//! hard negative from a mid-rank BM25 window, shown in random order.

use std::fmt;
use std::str::FromStr;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Document, Qrels, Query, QuerySet};
use crate::dense::EmbeddingStore;
use crate::error::{Error, Result};
use crate::hashing::hash64;
use crate::sparse::InvertedIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Lex,
    Sem,
    Static,
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selector::Lex => "lex",
            Selector::Sem => "sem",
            Selector::Static => "static",
        })
    }
}

impl FromStr for Selector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lex" => Ok(Selector::Lex),
            "sem" => Ok(Selector::Sem),
            "static" => Ok(Selector::Static),
            other => Err(Error::Argument(format!("unknown selector {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub query_id: String,
    pub similarity: f64,
}

/// Training queries similar to a probe, most similar first. Never contains
/// the probe itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighborhood {
    pub probe_query_id: String,
    pub candidates: Vec<Neighbor>,
    pub selector: Selector,
}

impl Neighborhood {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.query_id.as_str())
    }
}

/// Where the passage holding the relevant document sits in an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoldLabel {
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
}

impl GoldLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GoldLabel::First => "1",
            GoldLabel::Second => "2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IclExample {
    pub example_query: Query,
    pub first_passage: Document,
    pub second_passage: Document,
    pub gold_label: GoldLabel,
    /// BM25 rank of the negative for the example query.
    pub negative_rank: u32,
}

impl IclExample {
    pub fn flipped(&self) -> bool {
        self.gold_label == GoldLabel::Second
    }

    pub fn positive(&self) -> &Document {
        match self.gold_label {
            GoldLabel::First => &self.first_passage,
            GoldLabel::Second => &self.second_passage,
        }
    }

    pub fn negative(&self) -> &Document {
        match self.gold_label {
            GoldLabel::First => &self.second_passage,
            GoldLabel::Second => &self.first_passage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Examples per prompt; 0 means zero-shot.
    pub shots: usize,
    pub pool_size: usize,
    /// Negatives come from BM25 ranks in `(neg_lo, neg_hi]`.
    pub neg_lo: usize,
    pub neg_hi: usize,
    pub seed: u64,
    pub relevance_threshold: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            shots: 1,
            pool_size: 10,
            neg_lo: 100,
            neg_hi: 200,
            seed: 0,
            relevance_threshold: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 || self.shots > self.pool_size {
            return Err(Error::Config(format!(
                "need 0 <= shots <= pool_size and pool_size >= 1 (shots {}, pool {})",
                self.shots, self.pool_size
            )));
        }
        if self.neg_lo == 0 || self.neg_lo >= self.neg_hi {
            return Err(Error::Config(format!(
                "need 1 <= neg_lo < neg_hi (got {}, {})",
                self.neg_lo, self.neg_hi
            )));
        }
        if self.relevance_threshold == 0 {
            return Err(Error::Config("relevance_threshold must be >= 1".into()));
        }
        Ok(())
    }
}

/// RNG stream for one probe query; independent of how other queries are
/// scheduled.
pub fn query_rng(seed: u64, query_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash64(&[b"icl", &seed.to_le_bytes(), query_id.as_bytes()]))
}

/// Resources a neighborhood can be drawn from. Any of them may be absent as
/// long as the selector in use does not need it.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeighborhoodSource<'a> {
    pub training_index: Option<&'a InvertedIndex>,
    pub embeddings: Option<&'a EmbeddingStore<f64>>,
    pub static_ids: &'a [String],
}

impl<'a> NeighborhoodSource<'a> {
    /// Up to `pool_size` training queries similar to `query`. SEM needs the
    /// probe's embedding.
    pub fn select(
        &self,
        query: &Query,
        selector: Selector,
        pool_size: usize,
        probe_embedding: Option<&[f64]>,
    ) -> Result<Neighborhood> {
        if pool_size == 0 {
            return Err(Error::Argument("neighborhood size must be >= 1".into()));
        }
        let probe = query.query_id.as_str();
        let candidates = match selector {
            Selector::Lex => {
                let index = self.training_index.ok_or_else(|| {
                    Error::Config("lexical selector needs a training-query index".into())
                })?;
                index
                    .bm25_search::<f64>(&query.text, pool_size + 1)
                    .into_iter()
                    .filter(|h| h.item_id != probe)
                    .take(pool_size)
                    .map(|h| Neighbor {
                        query_id: h.item_id,
                        similarity: h.score,
                    })
                    .collect()
            }
            Selector::Sem => {
                let store = self.embeddings.ok_or_else(|| {
                    Error::Config("semantic selector needs training-query embeddings".into())
                })?;
                let v = probe_embedding.ok_or_else(|| {
                    Error::Config(format!("no embedding available for query {probe}"))
                })?;
                store
                    .top_k_filtered(v, pool_size, |id| id != probe)?
                    .into_iter()
                    .map(|h| Neighbor {
                        query_id: h.item_id,
                        similarity: h.score,
                    })
                    .collect()
            }
            Selector::Static => self
                .static_ids
                .iter()
                .filter(|id| id.as_str() != probe)
                .take(pool_size)
                .map(|id| Neighbor {
                    query_id: id.clone(),
                    similarity: 0.0,
                })
                .collect(),
        };
        Ok(Neighborhood {
            probe_query_id: probe.to_string(),
            candidates,
            selector,
        })
    }
}

/// Training data examples are materialized from.
#[derive(Debug, Clone, Copy)]
pub struct ExampleSource<'a> {
    pub training_queries: &'a QuerySet,
    pub training_qrels: &'a Qrels,
    pub corpus: &'a Corpus,
    pub corpus_index: &'a InvertedIndex,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleOutcome {
    pub examples: Vec<IclExample>,
    /// Why fewer than `shots` examples were produced, if they were.
    pub diagnostic: Option<String>,
}

/// Draws up to `cfg.shots` examples from the neighborhood pool.
///
/// Pool members are visited in a uniformly shuffled order; a member without
/// a relevant document or without an eligible negative is skipped and the
/// next one is tried.
pub fn sample_examples(
    nbhd: &Neighborhood,
    src: &ExampleSource<'_>,
    cfg: &SamplerConfig,
) -> Result<SampleOutcome> {
    cfg.validate()?;
    if cfg.shots == 0 {
        return Ok(SampleOutcome::default());
    }
    let mut rng = query_rng(cfg.seed, &nbhd.probe_query_id);
    let mut pool: Vec<&str> = nbhd.ids().take(cfg.pool_size).collect();
    pool.shuffle(&mut rng);

    let mut examples = Vec::with_capacity(cfg.shots);
    let mut skipped = Vec::new();
    for qid in pool {
        if examples.len() == cfg.shots {
            break;
        }
        match triple_for(qid, src, cfg, &mut rng)? {
            Some(ex) => examples.push(ex),
            None => skipped.push(qid),
        }
    }
    let diagnostic = (examples.len() < cfg.shots).then(|| {
        let msg = format!(
            "query {}: produced {} of {} examples (pool {}, skipped {:?})",
            nbhd.probe_query_id,
            examples.len(),
            cfg.shots,
            nbhd.candidates.len(),
            skipped
        );
        debug!("{msg}");
        msg
    });
    Ok(SampleOutcome {
        examples,
        diagnostic,
    })
}

fn triple_for(
    qid: &str,
    src: &ExampleSource<'_>,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<IclExample>> {
    let Some(query) = src.training_queries.get(qid) else {
        return Ok(None);
    };
    let positives: Vec<&Document> = src
        .training_qrels
        .relevant(qid, cfg.relevance_threshold)
        .into_iter()
        .filter_map(|d| src.corpus.get(d))
        .collect();
    if positives.is_empty() {
        return Ok(None);
    }
    let negatives: Vec<(&Document, u32)> = src
        .corpus_index
        .rank_window::<f64>(&query.text, cfg.neg_lo, cfg.neg_hi)?
        .into_iter()
        .filter(|h| src.training_qrels.grade(qid, &h.item_id) < cfg.relevance_threshold)
        .filter_map(|h| src.corpus.get(&h.item_id).map(|d| (d, h.rank)))
        .collect();
    if negatives.is_empty() {
        return Ok(None);
    }
    let positive = positives[rng.random_range(0..positives.len())].clone();
    let (negative, negative_rank) = negatives[rng.random_range(0..negatives.len())];
    let negative = negative.clone();
    let (first_passage, second_passage, gold_label) = if rng.random_bool(0.5) {
        (negative, positive, GoldLabel::Second)
    } else {
        (positive, negative, GoldLabel::First)
    };
    Ok(Some(IclExample {
        example_query: query.clone(),
        first_passage,
        second_passage,
        gold_label,
        negative_rank,
    }))
}
