//! BM25 inverted index.
//!
//! Serves first-stage retrieval over documents, lexical neighborhoods over
//! training queries, and the rank windows hard negatives are drawn from.
//! Scoring is exhaustive term-at-a-time; there is no dynamic pruning.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::analyzer::analyze;
use crate::data::{write_atomic, Keyed};
use crate::error::{Error, Result};
use crate::hashing::sha256_hex;
use crate::num::{cmp_desc, Real};

const MAGIC: &[u8; 8] = b"PRPBM25\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerConfig {
    pub k1: f64,
    pub b: f64,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHit<T> {
    pub item_id: String,
    pub score: T,
    pub rank: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub item: u32,
    pub term_frequency: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    item_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    avg_doc_length: f64,
    config: AnalyzerConfig,
}

impl InvertedIndex {
    /// Indexes the text of every item. Fails on empty input or duplicate ids.
    pub fn build<'a, I, K>(items: I, config: AnalyzerConfig) -> Result<Self>
    where
        I: IntoIterator<Item = &'a K>,
        K: Keyed + 'a,
    {
        let mut item_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut seen = std::collections::HashSet::new();
        for item in items {
            if !seen.insert(item.key().to_string()) {
                return Err(Error::Build(format!("duplicate item id {}", item.key())));
            }
            let ord = u32::try_from(item_ids.len())
                .map_err(|_| Error::Build("more than u32::MAX items".into()))?;
            let tokens = analyze(item.body());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push(Posting {
                    item: ord,
                    term_frequency: n,
                });
            }
            item_ids.push(item.key().to_string());
            doc_lengths.push(tokens.len() as u32);
        }
        if item_ids.is_empty() {
            return Err(Error::Build("no items to index".into()));
        }
        Ok(Self::assemble(item_ids, doc_lengths, postings, config))
    }

    fn assemble(
        item_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
        config: AnalyzerConfig,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        Self {
            item_ids,
            doc_lengths,
            postings,
            avg_doc_length,
            config,
        }
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn config(&self) -> AnalyzerConfig {
        self.config
    }

    pub fn doc_length(&self, item_id: &str) -> Option<u32> {
        self.item_ids
            .iter()
            .position(|i| i == item_id)
            .map(|p| self.doc_lengths[p])
    }

    pub fn doc_lengths(&self) -> impl Iterator<Item = (&str, u32)> {
        self.item_ids
            .iter()
            .map(String::as_str)
            .zip(self.doc_lengths.iter().copied())
    }

    /// Postings of `term` as `(item_id, term_frequency)`.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|ps| {
                ps.iter()
                    .map(|p| (self.item_ids[p.item as usize].as_str(), p.term_frequency))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn n_terms(&self) -> usize {
        self.postings.len()
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`
    pub fn idf<T: Real>(&self, df: usize) -> T {
        let n = T::from_count(self.n_items());
        let df = T::from_count(df);
        let half = T::lit(0.5);
        ((n - df + half) / (df + half) + T::one()).ln()
    }

    /// The `top_n` best items for the query; only items sharing at least one
    /// term with it are returned. Ties go to the smaller item id.
    pub fn bm25_search<T: Real>(&self, query_text: &str, top_n: usize) -> Vec<ScoredHit<T>> {
        let mut hits = self.score_all::<T>(query_text);
        hits.truncate(top_n);
        hits
    }

    /// Hits ranked in `(lo, hi]` of the [`bm25_search`](Self::bm25_search) order.
    pub fn rank_window<T: Real>(
        &self,
        query_text: &str,
        lo: usize,
        hi: usize,
    ) -> Result<Vec<ScoredHit<T>>> {
        if lo == 0 || lo >= hi {
            return Err(Error::Argument(format!(
                "rank window requires 1 <= lo < hi, got ({lo}, {hi}]"
            )));
        }
        Ok(self
            .bm25_search(query_text, hi)
            .into_iter()
            .skip(lo)
            .collect())
    }

    fn score_all<T: Real>(&self, query_text: &str) -> Vec<ScoredHit<T>> {
        let k1 = T::lit(self.config.k1);
        let b = T::lit(self.config.b);
        let avgdl = T::lit(self.avg_doc_length);
        let mut acc: HashMap<u32, T> = HashMap::new();
        for term in analyze(query_text) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf: T = self.idf(list.len());
            for p in list {
                let tf = T::from_u32(p.term_frequency).expect("u32 fits scalar");
                let dl = T::from_u32(self.doc_lengths[p.item as usize]).expect("u32 fits scalar");
                let norm = tf * (k1 + T::one()) / (tf + k1 * (T::one() - b + b * dl / avgdl));
                *acc.entry(p.item).or_insert_with(T::zero) += idf * norm;
            }
        }
        let mut scored: Vec<(u32, T)> = acc.into_iter().collect();
        scored.sort_by(|a, b| {
            cmp_desc(a.1, b.1)
                .then_with(|| self.item_ids[a.0 as usize].cmp(&self.item_ids[b.0 as usize]))
        });
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (item, score))| ScoredHit {
                item_id: self.item_ids[item as usize].clone(),
                score,
                rank: i as u32 + 1,
            })
            .collect()
    }

    /// Serialized form: magic, version, parameters, items, then postings in
    /// term order. Identical indexes serialize to identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    fn write_to<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_f64::<LittleEndian>(self.config.k1)?;
        w.write_f64::<LittleEndian>(self.config.b)?;
        w.write_u32::<LittleEndian>(self.item_ids.len() as u32)?;
        for (id, &len) in self.item_ids.iter().zip(&self.doc_lengths) {
            write_str(w, id)?;
            w.write_u32::<LittleEndian>(len)?;
        }
        w.write_u32::<LittleEndian>(self.postings.len() as u32)?;
        for (term, list) in &self.postings {
            write_str(w, term)?;
            w.write_u32::<LittleEndian>(list.len() as u32)?;
            for p in list {
                w.write_u32::<LittleEndian>(p.item)?;
                w.write_u32::<LittleEndian>(p.term_frequency)?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }

    fn read_from(r: &mut impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Validation(format!("index file: {m}"));
        let io = |e: std::io::Error| Error::Validation(format!("index file truncated or unreadable: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let k1 = r.read_f64::<LittleEndian>().map_err(io)?;
        let b = r.read_f64::<LittleEndian>().map_err(io)?;
        let n_items = r.read_u32::<LittleEndian>().map_err(io)?;
        if n_items == 0 {
            return Err(bad("no items"));
        }
        let mut item_ids = Vec::with_capacity(n_items as usize);
        let mut doc_lengths = Vec::with_capacity(n_items as usize);
        for _ in 0..n_items {
            item_ids.push(read_str(r).map_err(io)?);
            doc_lengths.push(r.read_u32::<LittleEndian>().map_err(io)?);
        }
        let n_terms = r.read_u32::<LittleEndian>().map_err(io)?;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = read_str(r).map_err(io)?;
            let len = r.read_u32::<LittleEndian>().map_err(io)?;
            let mut list = Vec::with_capacity(len as usize);
            for _ in 0..len {
                let item = r.read_u32::<LittleEndian>().map_err(io)?;
                let term_frequency = r.read_u32::<LittleEndian>().map_err(io)?;
                if item >= n_items {
                    return Err(bad("posting references unknown item"));
                }
                list.push(Posting {
                    item,
                    term_frequency,
                });
            }
            postings.insert(term, list);
        }
        Ok(Self::assemble(item_ids, doc_lengths, postings, AnalyzerConfig { k1, b }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), |w| self.write_to(w))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    /// SHA-256 of the serialized index.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

fn write_str<W: Write + ?Sized>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
