//! Exact cosine search over unit-normalized query embeddings.
//!
//! Vectors are produced elsewhere (a precomputed JSONL file or an HTTP
//! embedding endpoint); nothing here runs an encoder.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::num::{cmp_desc, Real};
use crate::sparse::ScoredHit;
use crate::transport::{JsonEndpoint, RetryPolicy};

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    dim: usize,
    ids: Vec<String>,
    /// Row-major, `ids.len() * dim` values.
    data: Vec<T>,
}

/// Scales `v` to unit length. Zero and non-finite vectors are rejected.
pub fn normalize<T: Real>(v: &mut [T]) -> Result<()> {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if !norm.is_finite() || norm == T::zero() {
        return Err(Error::Validation("vector has zero or non-finite norm".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

impl<T: Real> EmbeddingStore<T> {
    /// Builds a store from raw vectors, normalizing each one.
    pub fn from_vectors(entries: Vec<(String, Vec<T>)>) -> Result<Self> {
        let dim = entries.first().map_or(0, |(_, v)| v.len());
        let mut ids = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * dim);
        let mut seen = std::collections::HashSet::new();
        for (id, mut v) in entries {
            if v.len() != dim || dim == 0 {
                return Err(Error::Validation(format!(
                    "vector {id} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::Validation(format!("duplicate embedding id {id}")));
            }
            normalize(&mut v).map_err(|_| Error::Validation(format!("vector {id} is zero")))?;
            ids.push(id);
            data.extend(v);
        }
        Ok(Self { dim, ids, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Option<&[T]> {
        let i = self.ids.iter().position(|x| x == id)?;
        Some(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Checks the unit-norm invariant on every stored vector.
    pub fn check_norms(&self) -> Result<()> {
        for (id, row) in self.ids.iter().zip(self.data.chunks(self.dim.max(1))) {
            let n = dot(row, row).sqrt().as_f64();
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Validation(format!("vector {id} has norm {n}")));
            }
        }
        Ok(())
    }

    /// The `k` stored vectors most cosine-similar to `probe`, ties by id.
    pub fn top_k_cosine(&self, probe: &[T], k: usize) -> Result<Vec<ScoredHit<T>>> {
        self.top_k_filtered(probe, k, |_| true)
    }

    /// As [`top_k_cosine`](Self::top_k_cosine), considering only ids accepted
    /// by `keep`.
    pub fn top_k_filtered(
        &self,
        probe: &[T],
        k: usize,
        keep: impl Fn(&str) -> bool,
    ) -> Result<Vec<ScoredHit<T>>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if probe.len() != self.dim {
            return Err(Error::Validation(format!(
                "probe dimension {} does not match store dimension {}",
                probe.len(),
                self.dim
            )));
        }
        let mut unit = probe.to_vec();
        normalize(&mut unit)?;
        let mut scored: Vec<(usize, T)> = self
            .data
            .chunks(self.dim)
            .enumerate()
            .filter(|(i, _)| keep(&self.ids[*i]))
            .map(|(i, row)| (i, dot(row, &unit)))
            .collect();
        scored.sort_by(|a, b| cmp_desc(a.1, b.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(r, (i, score))| ScoredHit {
                item_id: self.ids[i].clone(),
                score,
                rank: r as u32 + 1,
            })
            .collect())
    }
}

#[derive(Deserialize)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f64>,
}

/// Reads `{"id": ..., "vector": [...]}` lines.
pub fn load_embeddings<T: Real>(path: impl AsRef<Path>) -> Result<EmbeddingStore<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut entries = Vec::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EmbeddingLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let expected = *dim.get_or_insert(parsed.vector.len());
        if parsed.vector.len() != expected {
            return Err(Error::Validation(format!(
                "{}:{lineno}: dimension {} differs from {expected}",
                path.display(),
                parsed.vector.len()
            )));
        }
        let v: Vec<T> = parsed.vector.into_iter().map(T::lit).collect();
        entries.push((parsed.id, v));
    }
    EmbeddingStore::from_vectors(entries)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Client for an embedding service: `POST {"input": text}` answered with
/// `{"embedding": [...]}`.
#[derive(Debug, Clone)]
pub struct EmbeddingClient {
    endpoint: JsonEndpoint,
    policy: RetryPolicy,
}

impl EmbeddingClient {
    pub fn new(url: impl Into<String>, bearer: Option<String>, policy: RetryPolicy) -> Result<Self> {
        Ok(Self {
            endpoint: JsonEndpoint::new(url, bearer)?,
            policy,
        })
    }

    /// Fetches and normalizes the embedding of `text`. When `expected_dim` is
    /// given, a response of another dimension is a validation error.
    pub fn fetch_embedding<T: Real>(&self, text: &str, expected_dim: Option<usize>) -> Result<Vec<T>> {
        let resp = self.endpoint.post(&json!({ "input": text }), self.policy)?;
        let values = resp
            .body
            .get("embedding")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Backend {
                message: format!("{}: response has no \"embedding\" array", self.endpoint.url()),
                attempts: resp.attempts,
                status: Some(200),
            })?;
        let mut v = values
            .iter()
            .map(|x| x.as_f64().map(T::lit))
            .collect::<Option<Vec<T>>>()
            .ok_or_else(|| Error::Validation("embedding contains non-numeric values".into()))?;
        if let Some(d) = expected_dim {
            if v.len() != d {
                return Err(Error::Validation(format!(
                    "embedding dimension {} does not match store dimension {d}",
                    v.len()
                )));
            }
        }
        normalize(&mut v)?;
        Ok(v)
    }
}
