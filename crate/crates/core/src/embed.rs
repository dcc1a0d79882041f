//! Text embedding contract and the hashed TF-IDF reference embedder.
//!
//! Tokens are hashed with 64-bit FNV-1a over their UTF-8 bytes, reduced
//! modulo the dimension. Weights are `ln(1 + tf) * idf(term)` with
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1` fitted on an index; terms the
//! embedder was not fitted on get weight `idf = 1`.

use std::collections::HashMap;
use std::io::BufRead;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, CorpusIndex};

pub const DEFAULT_DIMENSION: usize = 4096;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector(values)
    }

    pub fn zeros(dimension: usize) -> Self {
        EmbeddingVector(vec![0.0; dimension])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `dot(a, b) / (|a| |b|)`, or 0 when either norm is 0.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> EmbeddingVector;
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Tokens of `text` with underscores read as spaces.
fn embedding_tokens(text: &str) -> Vec<String> {
    tokenize(&text.replace('_', " "))
}

#[derive(Clone, Debug)]
pub struct HashedTfIdf {
    dimension: usize,
    idf: HashMap<String, f64>,
}

impl HashedTfIdf {
    /// An unfitted embedder: every term has idf 1.
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashedTfIdf {
            dimension,
            idf: HashMap::new(),
        }
    }

    pub fn fit(index: &CorpusIndex, dimension: usize) -> Self {
        let n = index.len() as f64;
        let idf = index
            .document_frequencies()
            .map(|(t, df)| (t.to_string(), ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0))
            .collect();
        HashedTfIdf {
            idf,
            ..HashedTfIdf::new(dimension)
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        self.idf.get(term).copied().unwrap_or(1.0)
    }

    pub fn bucket(&self, term: &str) -> usize {
        (fnv1a64(term.as_bytes()) % self.dimension as u64) as usize
    }
}

impl Embedder for HashedTfIdf {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in embedding_tokens(text) {
            *counts.entry(t).or_default() += 1;
        }
        let mut v = vec![0.0; self.dimension];
        for (term, tf) in counts {
            v[self.bucket(&term)] += (1.0 + tf as f64).ln() * self.idf(&term);
        }
        EmbeddingVector(v)
    }
}

#[derive(Deserialize)]
struct Header {
    dimension: usize,
}

#[derive(Deserialize)]
struct Record {
    text: String,
    vector: Vec<f64>,
}

/// Vectors computed offline (for example by a neural sentence encoder),
/// looked up by the hash of the normalized text. Unknown texts embed to the
/// zero vector and are counted as misses.
#[derive(Debug)]
pub struct PrecomputedEmbedder {
    dimension: usize,
    vectors: HashMap<u64, EmbeddingVector>,
    misses: AtomicUsize,
}

impl PrecomputedEmbedder {
    fn key(text: &str) -> u64 {
        fnv1a64(embedding_tokens(text).join(" ").as_bytes())
    }

    /// Reads `{"dimension": D}` followed by `{"text", "vector"}` lines.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, EmbedError> {
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, message: String| EmbedError::Parse { line, message };
        let header = loop {
            match lines.next() {
                None => return Err(parse_err(1, "missing dimension header".into())),
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let h: Header =
                        serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
                    break h;
                }
            }
        };
        if header.dimension == 0 {
            return Err(parse_err(1, "dimension must be positive".into()));
        }
        let mut vectors = HashMap::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            if rec.vector.len() != header.dimension {
                return Err(parse_err(
                    i + 1,
                    format!("vector has {} entries, header says {}", rec.vector.len(), header.dimension),
                ));
            }
            if rec.vector.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(i + 1, "non-finite vector entry".into()));
            }
            vectors.insert(Self::key(&rec.text), EmbeddingVector(rec.vector));
        }
        Ok(PrecomputedEmbedder {
            dimension: header.dimension,
            vectors,
            misses: AtomicUsize::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl Embedder for PrecomputedEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        match self.vectors.get(&Self::key(text)) {
            Some(v) => v.clone(),
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                EmbeddingVector::zeros(self.dimension)
            }
        }
    }
}
