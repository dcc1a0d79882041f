//! Sentence corpus ingestion and an inverted index answering all-entities
//! phrase queries.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::Entity;

pub const INDEX_FORMAT: &str = "kgpath-index";
pub const INDEX_VERSION: u32 = 1;

/// Candidates retrieved per query before ranking.
pub const DEFAULT_RETRIEVAL_CAP: usize = 500;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Ingest { line: usize, message: String },
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Splits on Unicode whitespace, strips leading/trailing non-alphanumeric
/// characters from each chunk, and lowercases. Each token carries the byte
/// range of its stripped core in `text`.
pub fn tokenize_spans(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut chunk_start = None;
    let mut push = |start: usize, end: usize| {
        let chunk = &text[start..end];
        let lead = chunk
            .char_indices()
            .find(|(_, c)| c.is_alphanumeric())
            .map(|(i, _)| i);
        if let Some(lead) = lead {
            let trail = chunk
                .char_indices()
                .rev()
                .find(|(_, c)| c.is_alphanumeric())
                .map(|(i, c)| i + c.len_utf8())
                .unwrap_or(chunk.len());
            let core = &chunk[lead..trail];
            out.push((core.to_lowercase(), start + lead..start + trail));
        }
    };
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), chunk_start) {
            (true, Some(s)) => {
                push(s, i);
                chunk_start = None;
            }
            (false, None) => chunk_start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = chunk_start {
        push(s, text.len());
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|(t, _)| t).collect()
}

/// The words an entity must match, tokenized like sentence text.
pub fn entity_words(e: &Entity) -> Vec<String> {
    tokenize(&e.surface())
}

/// Position of the first contiguous occurrence of `words` in `tokens`.
pub fn find_phrase(tokens: &[String], words: &[String]) -> Option<usize> {
    if words.is_empty() || words.len() > tokens.len() {
        return None;
    }
    tokens.windows(words.len()).position(|w| w == words)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub id: u32,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(id: u32, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Sentence { id, text, tokens }
    }
}

/// True iff the entity's words occur contiguously in the sentence tokens.
/// Matching is whole-word and case-insensitive with no lemmatization.
pub fn phrase_match(sentence: &Sentence, e: &Entity) -> bool {
    find_phrase(&sentence.tokens, &entity_words(e)).is_some()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One sentence per line.
    Text,
    /// `{"id": int, "text": str}` per line.
    Jsonl,
    /// JSONL if the first non-blank line starts with `{`.
    #[default]
    Auto,
}

impl std::str::FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(CorpusFormat::Text),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "auto" => Ok(CorpusFormat::Auto),
            other => Err(CorpusError::Format(format!("unknown corpus format `{other}`"))),
        }
    }
}

impl std::fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorpusFormat::Text => "text",
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Auto => "auto",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IndexReport {
    pub sentences: usize,
    pub terms: usize,
}

#[derive(Deserialize)]
struct JsonlSentence {
    #[allow(dead_code)]
    #[serde(default)]
    id: Option<i64>,
    text: String,
}

/// Inverted index from term to ascending sentence ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusIndex {
    sentences: Vec<Sentence>,
    postings: BTreeMap<String, Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
    sentences: Vec<String>,
    postings: BTreeMap<String, Vec<u32>>,
}

/// Reads a sentence stream and indexes it. Blank lines are skipped; sentence
/// ids are assigned densely in stream order.
pub fn build_index<R: BufRead>(
    reader: R,
    format: CorpusFormat,
) -> Result<(CorpusIndex, IndexReport), CorpusError> {
    let mut texts = Vec::new();
    let mut format = format;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Ingest {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if format == CorpusFormat::Auto {
            format = if trimmed.starts_with('{') {
                CorpusFormat::Jsonl
            } else {
                CorpusFormat::Text
            };
        }
        match format {
            CorpusFormat::Jsonl => {
                let rec: JsonlSentence =
                    serde_json::from_str(trimmed).map_err(|e| CorpusError::Ingest {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                texts.push(rec.text);
            }
            _ => texts.push(trimmed.to_string()),
        }
    }
    let index = CorpusIndex::from_texts(texts);
    if index.is_empty() {
        log::warn!("corpus is empty; the index will answer every query with no results");
    }
    let report = IndexReport {
        sentences: index.len(),
        terms: index.term_count(),
    };
    Ok((index, report))
}

impl CorpusIndex {
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let texts: Vec<String> = texts.into_iter().map(Into::into).collect();
        let sentences: Vec<Sentence> = texts
            .into_par_iter()
            .enumerate()
            .map(|(i, t)| Sentence::new(i as u32, t))
            .collect();
        let mut postings: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for s in &sentences {
            let mut terms: Vec<&String> = s.tokens.iter().collect();
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                postings.entry(t.clone()).or_default().push(s.id);
            }
        }
        CorpusIndex {
            sentences,
            postings,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn sentence(&self, id: u32) -> Option<&Sentence> {
        self.sentences.get(id as usize)
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn postings(&self, term: &str) -> Option<&[u32]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    /// Document frequency for every term.
    pub fn document_frequencies(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.len()))
    }

    /// Ids of sentences phrase-matching every entity, ascending, at most `cap`.
    ///
    /// Candidates come from intersecting the postings of each entity's rarest
    /// word; phrase matching then runs on the survivors only.
    pub fn search_all_entities(&self, entities: &[Entity], cap: usize) -> Vec<u32> {
        if entities.is_empty() {
            return Vec::new();
        }
        let mut phrases = Vec::with_capacity(entities.len());
        let mut lists: Vec<&[u32]> = Vec::with_capacity(entities.len());
        for e in entities {
            let words = entity_words(e);
            let mut rarest: Option<&[u32]> = None;
            for w in &words {
                match self.postings(w) {
                    None => return Vec::new(),
                    Some(p) if rarest.is_none_or(|r| p.len() < r.len()) => rarest = Some(p),
                    _ => {}
                }
            }
            match rarest {
                Some(r) => lists.push(r),
                None => return Vec::new(),
            }
            phrases.push(words);
        }
        lists.sort_by_key(|l| l.len());
        let mut candidates: Vec<u32> = lists[0].to_vec();
        for other in &lists[1..] {
            candidates = intersect_sorted(&candidates, other);
            if candidates.is_empty() {
                return candidates;
            }
        }
        candidates
            .into_iter()
            .filter(|&id| {
                let tokens = &self.sentences[id as usize].tokens;
                phrases.iter().all(|w| find_phrase(tokens, w).is_some())
            })
            .take(cap)
            .collect()
    }

    pub fn save<W: Write>(&self, writer: W, created_unix: Option<u64>) -> Result<(), CorpusError> {
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            created_unix,
            sentences: self.sentences.iter().map(|s| s.text.clone()).collect(),
            postings: self.postings.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    /// Loads a saved index. Sentence tokens are recomputed from the text and
    /// checked against the stored postings.
    pub fn load<R: Read>(reader: R) -> Result<Self, CorpusError> {
        let file: IndexFile = serde_json::from_reader(reader)?;
        if file.format != INDEX_FORMAT {
            return Err(CorpusError::Format(format!("unexpected format `{}`", file.format)));
        }
        if file.version != INDEX_VERSION {
            return Err(CorpusError::Format(format!(
                "unsupported version {} (expected {INDEX_VERSION})",
                file.version
            )));
        }
        let index = CorpusIndex::from_texts(file.sentences);
        if index.postings != file.postings {
            return Err(CorpusError::Format(
                "stored postings do not match the stored sentences".into(),
            ));
        }
        Ok(index)
    }
}

fn intersect_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}
