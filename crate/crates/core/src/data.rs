//! Corpus, query, qrels and run types plus their on-disk formats.
//!
//! * TREC run: `qid Q0 docid rank score tag`, six whitespace-separated fields.
//! * TREC qrels: `qid 0 docid grade`.
//! * Corpus: JSON lines `{"id": ..., "text": ...}`.
//! * Queries: `qid<TAB>text`.
//!
//! Readers reject anything that breaks a type invariant. The one documented
//! normalization is rank renumbering when a run is read: entries are re-sorted
//! by score descending (ties by doc id ascending) and ranks reassigned from 1.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            text: text.into(),
        }
    }
}

/// Anything stored in a [`Collection`] under a unique string id.
pub trait Keyed {
    fn key(&self) -> &str;
    fn body(&self) -> &str;
}

impl Keyed for Document {
    fn key(&self) -> &str {
        &self.doc_id
    }
    fn body(&self) -> &str {
        &self.text
    }
}

impl Keyed for Query {
    fn key(&self) -> &str {
        &self.query_id
    }
    fn body(&self) -> &str {
        &self.text
    }
}

/// Insertion-ordered store with unique, non-empty ids. Immutable after load.
#[derive(Debug, Clone)]
pub struct Collection<T> {
    items: Vec<T>,
    by_id: HashMap<String, usize>,
}

pub type Corpus = Collection<Document>;
pub type QuerySet = Collection<Query>;

impl<T: Keyed> Collection<T> {
    pub fn from_items(items: Vec<T>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if item.key().is_empty() {
                return Err(Error::Validation(format!("empty id at position {}", i + 1)));
            }
            if by_id.insert(item.key().to_string(), i).is_some() {
                return Err(Error::Validation(format!("duplicate id {:?}", item.key())));
            }
        }
        Ok(Self { items, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&T> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl<'a, T> IntoIterator for &'a Collection<T> {
    type Item = &'a T;
    type IntoIter = std::slice::Iter<'a, T>;
    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Graded relevance judgments. Absent pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a judgment; a repeated (query, doc) pair is rejected.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Result<()> {
        let per_query = self.grades.entry(query_id.to_string()).or_default();
        if per_query.insert(doc_id.to_string(), grade).is_some() {
            return Err(Error::Validation(format!(
                "duplicate judgment for ({query_id}, {doc_id})"
            )));
        }
        Ok(())
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// All judged documents of a query, in doc id order.
    pub fn judged(&self, query_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.grades
            .get(query_id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(d, &g)| (d.as_str(), g)))
    }

    /// Documents with grade at least `threshold`, in doc id order.
    pub fn relevant(&self, query_id: &str, threshold: u32) -> Vec<&str> {
        self.judged(query_id)
            .filter(|&(_, g)| g >= threshold)
            .map(|(d, _)| d)
            .collect()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.grades.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: u32,
}

/// Ranked documents per query.
///
/// Invariants: ranks run 1..=n, scores are non-increasing with rank, and no
/// document appears twice for a query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunList {
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl RunList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sorts `(doc_id, score)` pairs by score descending, doc id ascending,
    /// assigns ranks and stores them as the ranking of `query_id`.
    pub fn insert_scored(&mut self, query_id: &str, mut scored: Vec<(String, f64)>) -> Result<()> {
        if scored.iter().any(|(_, s)| s.is_nan()) {
            return Err(Error::Validation(format!("NaN score in query {query_id}")));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        self.insert_ranked(query_id, scored)
    }

    /// Stores an already-ordered ranking, checking the run invariants.
    pub fn insert_ranked(&mut self, query_id: &str, ordered: Vec<(String, f64)>) -> Result<()> {
        let mut seen = HashSet::with_capacity(ordered.len());
        let mut prev = f64::INFINITY;
        let mut entries = Vec::with_capacity(ordered.len());
        for (i, (doc_id, score)) in ordered.into_iter().enumerate() {
            if !seen.insert(doc_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate document {doc_id} in query {query_id}"
                )));
            }
            if score.is_nan() || score > prev {
                return Err(Error::Validation(format!(
                    "scores must be non-increasing with rank (query {query_id}, rank {})",
                    i + 1
                )));
            }
            prev = score;
            entries.push(RunEntry {
                doc_id,
                score,
                rank: i as u32 + 1,
            });
        }
        if self.queries.insert(query_id.to_string(), entries).is_some() {
            return Err(Error::Validation(format!("query {query_id} inserted twice")));
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[RunEntry]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.queries.iter().map(|(q, e)| (q.as_str(), e.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn read_line(path: &Path, line: std::io::Result<String>) -> Result<String> {
    line.map_err(|e| Error::io(format!("read {}", path.display()), e))
}

pub fn read_trec_run(path: impl AsRef<Path>) -> Result<RunList> {
    let path = path.as_ref();
    let mut per_query: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (lineno, line) in open_lines(path)? {
        let line = read_line(path, line)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        }
        let (qid, docid) = (fields[0], fields[2]);
        fields[3]
            .parse::<i64>()
            .map_err(|_| Error::parse(path, lineno, format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::parse(path, lineno, format!("bad score {:?}", fields[4])))?;
        if !seen.insert((qid.to_string(), docid.to_string())) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: duplicate document {docid} for query {qid}",
                path.display()
            )));
        }
        per_query
            .entry(qid.to_string())
            .or_default()
            .push((docid.to_string(), score));
    }
    let mut run = RunList::new();
    for (qid, scored) in per_query {
        run.insert_scored(&qid, scored)?;
    }
    Ok(run)
}

/// Formats one run line; scores always carry six decimals.
pub fn format_run_line(query_id: &str, entry: &RunEntry, tag: &str) -> String {
    format!(
        "{} Q0 {} {} {:.6} {}",
        query_id, entry.doc_id, entry.rank, entry.score, tag
    )
}

/// Writes a run atomically: the file appears complete or not at all.
pub fn write_trec_run(run: &RunList, tag: &str, path: impl AsRef<Path>) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::Argument(format!("run tag {tag:?} must be one non-empty token")));
    }
    write_atomic(path.as_ref(), |w| {
        for (qid, entries) in run.iter() {
            for e in entries {
                writeln!(w, "{}", format_run_line(qid, e, tag))?;
            }
        }
        Ok(())
    })
}

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<()> {
    let ctx = || format!("write {}", path.display());
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(ctx(), e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(|e| Error::io(ctx(), e))?;
        w.flush().map_err(|e| Error::io(ctx(), e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(ctx(), e))?;
    tmp.persist(path).map_err(|e| Error::io(ctx(), e.error))?;
    Ok(())
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let mut qrels = Qrels::new();
    for (lineno, line) in open_lines(path)? {
        let line = read_line(path, line)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad grade {:?}", fields[3])))?;
        let grade = u32::try_from(grade)
            .map_err(|_| Error::parse(path, lineno, format!("negative grade {grade}")))?;
        qrels
            .insert(fields[0], fields[2], grade)
            .map_err(|e| Error::Validation(format!("{}:{lineno}: {e}", path.display())))?;
    }
    Ok(qrels)
}

#[derive(Deserialize)]
struct CorpusLine {
    id: String,
    text: String,
}

pub fn read_jsonl_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut docs = Vec::new();
    for (lineno, line) in open_lines(path)? {
        let line = read_line(path, line)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        docs.push(Document::new(parsed.id, parsed.text));
    }
    Corpus::from_items(docs).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn read_tsv_queries(path: impl AsRef<Path>) -> Result<QuerySet> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    for (lineno, line) in open_lines(path)? {
        let line = read_line(path, line)?;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected qid<TAB>text"))?;
        queries.push(Query::new(qid.trim(), text));
    }
    QuerySet::from_items(queries).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}
