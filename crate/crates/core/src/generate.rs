//! Conditional path generation.
//!
//! A [`PathGenerator`] maps a sentence and a token prefix to a distribution
//! over the next path token. Tokens are whole entities and whole relations,
//! so the first decoding step chooses the first entity of the path.
//!
//! [`ReferenceModel`] is an interpolated trigram model over path tokens with a
//! copy bias towards tokens whose words appear in the input sentence:
//!
//! ```text
//! P(w | u, v) = l3 c(u,v,w)/c(u,v) + l2 c(v,w)/c(v) + l1 c(w)/N + l0 / |V|
//! score(w)    = max(P(w | u, v), 1e-8) * exp(beta * affinity(w, sentence))
//! ```
//!
//! restricted to grammatical continuations and renormalized.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::tokenize;
use crate::kg::{Entity, Path, Relation};
use crate::pairing::PairRecord;

pub const END_TEXT: &str = "<end>";
pub const PROBABILITY_FLOOR: f64 = 1e-8;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_TOP_P: f64 = 0.95;
pub const DEFAULT_DIVERSE_K: usize = 5;

pub const MODEL_FORMAT: &str = "kgpath-refmodel";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("prefix violates the path grammar: {0}")]
    IllegalPrefix(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("no legal first token")]
    NoContinuation,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Entity,
    Relation,
    End,
}

/// A whole entity, a whole (possibly inverse) relation, or the end marker.
/// Tokens order by text first, which is the tie-break used by every decoder.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathToken {
    pub text: String,
    pub kind: TokenKind,
}

impl PathToken {
    pub fn entity(e: &Entity) -> Self {
        PathToken {
            text: e.to_string(),
            kind: TokenKind::Entity,
        }
    }

    pub fn relation(r: &Relation) -> Self {
        PathToken {
            text: r.to_string(),
            kind: TokenKind::Relation,
        }
    }

    pub fn end() -> Self {
        PathToken {
            text: END_TEXT.to_string(),
            kind: TokenKind::End,
        }
    }

    /// Words used for copy affinity: underscores split words and the inverse
    /// marker is ignored.
    fn words(&self) -> Vec<String> {
        match self.kind {
            TokenKind::End => Vec::new(),
            _ => tokenize(&self.text.replace('_', " ")),
        }
    }
}

impl fmt::Display for PathToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Token sequence of a path, without the end marker.
pub fn path_tokens(path: &Path) -> Vec<PathToken> {
    let mut out = Vec::with_capacity(path.entities().len() + path.relations().len());
    for (i, e) in path.entities().iter().enumerate() {
        out.push(PathToken::entity(e));
        if let Some(r) = path.relations().get(i) {
            out.push(PathToken::relation(r));
        }
    }
    out
}

fn tokens_to_path(tokens: &[PathToken]) -> Result<Path, GenerateError> {
    let mut entities = Vec::new();
    let mut relations = Vec::new();
    for t in tokens {
        let bad = |e: crate::kg::KgError| GenerateError::IllegalPrefix(e.to_string());
        match t.kind {
            TokenKind::Entity => entities.push(Entity::new(&t.text).map_err(bad)?),
            TokenKind::Relation => relations.push(t.text.parse().map_err(bad)?),
            TokenKind::End => {}
        }
    }
    Path::new(entities, relations).map_err(|e| GenerateError::IllegalPrefix(e.to_string()))
}

/// Next-token probabilities over grammatical continuations, kept in token
/// order. An empty distribution means the prefix has no legal continuation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<(PathToken, f64)>,
}

impl TokenDistribution {
    /// Normalizes non-negative scores. Entries must be distinct tokens.
    pub fn from_scores(mut scores: Vec<(PathToken, f64)>) -> Self {
        scores.sort_by(|a, b| a.0.cmp(&b.0));
        let total: f64 = scores.iter().map(|(_, s)| s).sum();
        if total > 0.0 {
            for (_, s) in &mut scores {
                *s /= total;
            }
        }
        TokenDistribution { probs: scores }
    }

    pub fn prob(&self, token: &PathToken) -> f64 {
        self.probs
            .binary_search_by(|(t, _)| t.cmp(token))
            .map(|i| self.probs[i].1)
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PathToken, f64)> {
        self.probs.iter().map(|(t, p)| (t, *p))
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().map(|(_, p)| p).sum()
    }

    /// Highest-probability token; ties go to the smallest token text.
    pub fn argmax(&self) -> Option<&PathToken> {
        let mut best: Option<&(PathToken, f64)> = None;
        for entry in &self.probs {
            if best.is_none_or(|b| entry.1 > b.1) {
                best = Some(entry);
            }
        }
        best.map(|(t, _)| t)
    }

    /// Entries by descending probability, ties by token order.
    pub fn ranked(&self) -> Vec<(&PathToken, f64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<PathToken>,
    ids: HashMap<PathToken, u32>,
}

impl Vocabulary {
    /// Entities and relations of the given paths plus the end marker.
    pub fn from_paths<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Self {
        let mut set: HashSet<PathToken> = HashSet::new();
        for p in paths {
            set.extend(path_tokens(p));
        }
        set.insert(PathToken::end());
        let mut tokens: Vec<PathToken> = set.into_iter().collect();
        tokens.sort();
        Vocabulary::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<PathToken>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &PathToken) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &PathToken {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[PathToken] {
        &self.tokens
    }
}

/// Where a prefix stands in the `entity (relation entity)* END` grammar.
struct PrefixState<'a> {
    hops: usize,
    expects_entity: bool,
    used: HashSet<&'a str>,
}

fn prefix_state(prefix: &[PathToken]) -> Result<PrefixState<'_>, GenerateError> {
    let mut used = HashSet::new();
    for (i, t) in prefix.iter().enumerate() {
        let want = if i % 2 == 0 {
            TokenKind::Entity
        } else {
            TokenKind::Relation
        };
        if t.kind != want {
            return Err(GenerateError::IllegalPrefix(format!(
                "position {i} holds {:?} `{}`, expected {want:?}",
                t.kind, t.text
            )));
        }
        if t.kind == TokenKind::Entity && !used.insert(t.text.as_str()) {
            return Err(GenerateError::IllegalPrefix(format!("entity `{}` repeats", t.text)));
        }
    }
    Ok(PrefixState {
        hops: prefix.len() / 2,
        expects_entity: prefix.len().is_multiple_of(2),
        used,
    })
}

/// Vocabulary ids that may follow `prefix`: an unused entity after a relation
/// (or at the start); a relation, or the end marker once `min_hops` hops are
/// complete, after an entity.
pub fn legal_continuations(
    vocab: &Vocabulary,
    prefix: &[PathToken],
    min_hops: usize,
) -> Result<Vec<u32>, GenerateError> {
    let state = prefix_state(prefix)?;
    Ok(vocab
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| match t.kind {
            TokenKind::Entity => state.expects_entity && !state.used.contains(t.text.as_str()),
            TokenKind::Relation => !state.expects_entity,
            TokenKind::End => !state.expects_entity && state.hops >= min_hops,
        })
        .map(|(i, _)| i as u32)
        .collect())
}

pub trait PathGenerator: Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Next-token distribution given the sentence and a grammatical prefix.
    fn next_token_dist(&self, sentence: &str, prefix: &[PathToken]) -> Result<TokenDistribution, GenerateError>;
}

/// Uniform over grammatical continuations; the loss baseline.
#[derive(Clone, Debug)]
pub struct UniformGenerator {
    vocab: Vocabulary,
    min_hops: usize,
}

impl UniformGenerator {
    pub fn new(vocab: Vocabulary, min_hops: usize) -> Self {
        UniformGenerator { vocab, min_hops }
    }
}

impl PathGenerator for UniformGenerator {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_dist(&self, _sentence: &str, prefix: &[PathToken]) -> Result<TokenDistribution, GenerateError> {
        let legal = legal_continuations(&self.vocab, prefix, self.min_hops)?;
        Ok(TokenDistribution::from_scores(
            legal.into_iter().map(|i| (self.vocab.token(i).clone(), 1.0)).collect(),
        ))
    }
}

/// Interpolation weights `(trigram, bigram, unigram, uniform)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interpolation {
    pub trigram: f64,
    pub bigram: f64,
    pub unigram: f64,
    pub uniform: f64,
}

impl Default for Interpolation {
    fn default() -> Self {
        Interpolation {
            trigram: 0.6,
            bigram: 0.3,
            unigram: 0.09,
            uniform: 0.01,
        }
    }
}

impl Interpolation {
    pub fn validate(&self) -> Result<(), GenerateError> {
        let parts = [self.trigram, self.bigram, self.unigram, self.uniform];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(GenerateError::InvalidArgument(format!(
                "interpolation weights must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

impl FromStr for Interpolation {
    type Err = GenerateError;

    /// Parses `l3,l2,l1,l0`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| GenerateError::InvalidArgument(format!("lambda `{s}`: {e}")))?;
        let [trigram, bigram, unigram, uniform] = parts[..] else {
            return Err(GenerateError::InvalidArgument(format!(
                "lambda `{s}` must have four comma-separated weights"
            )));
        };
        let w = Interpolation {
            trigram,
            bigram,
            unigram,
            uniform,
        };
        w.validate()?;
        Ok(w)
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.trigram, self.bigram, self.unigram, self.uniform)
    }
}

/// History marker before the first token.
const START: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CopyStat {
    /// Sum over training pairs of the token's word overlap with the context.
    pub hits: f64,
    /// Training pairs whose path contains the token.
    pub occurrences: u64,
}

impl CopyStat {
    /// Mean word overlap between the token and its training contexts.
    pub fn reliability(&self) -> f64 {
        if self.occurrences == 0 {
            0.0
        } else {
            self.hits / self.occurrences as f64
        }
    }
}

/// Fraction of the token's words present in the sentence tokens.
fn word_overlap(words: &[String], sentence: &HashSet<String>) -> f64 {
    if words.is_empty() {
        return 0.0;
    }
    words.iter().filter(|w| sentence.contains(*w)).count() as f64 / words.len() as f64
}

#[derive(Clone, Debug)]
pub struct ReferenceModel {
    vocab: Vocabulary,
    token_words: Vec<Vec<String>>,
    unigram: Vec<u64>,
    unigram_total: u64,
    bigram: HashMap<(u32, u32), u64>,
    bigram_context: HashMap<u32, u64>,
    trigram: HashMap<(u32, u32, u32), u64>,
    trigram_context: HashMap<(u32, u32), u64>,
    copy: Vec<CopyStat>,
    weights: Interpolation,
    beta: f64,
    min_hops: usize,
}

/// On-disk form of a [`ReferenceModel`].
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
    weights: Interpolation,
    beta: f64,
    min_hops: usize,
    vocabulary: Vec<PathToken>,
    unigram: Vec<u64>,
    bigram: Vec<(u32, u32, u64)>,
    trigram: Vec<(u32, u32, u32, u64)>,
    copy: Vec<CopyStat>,
}

impl ReferenceModel {
    /// Counts path-token n-grams (with start and end markers) and copy
    /// statistics. Masked pairs use the masked sentence as context.
    pub fn train(pairs: &[PairRecord], weights: Interpolation, beta: f64) -> Result<Self, GenerateError> {
        if pairs.is_empty() {
            return Err(GenerateError::EmptyDataset);
        }
        weights.validate()?;
        if !beta.is_finite() {
            return Err(GenerateError::InvalidArgument(format!("beta must be finite, got {beta}")));
        }
        let vocab = Vocabulary::from_paths(pairs.iter().map(|p| &p.path));
        let min_hops = pairs.iter().map(|p| p.path.hops()).min().unwrap_or(0);
        let mut model = ReferenceModel::empty(vocab, weights, beta, min_hops);
        for pair in pairs {
            let mut ids: Vec<u32> = path_tokens(&pair.path)
                .iter()
                .map(|t| model.vocab.id(t).expect("vocabulary covers training paths"))
                .collect();
            let context: HashSet<String> = tokenize(pair.context()).into_iter().collect();
            let mut seen = HashSet::new();
            for &id in &ids {
                if seen.insert(id) {
                    let stat = &mut model.copy[id as usize];
                    stat.occurrences += 1;
                    stat.hits += word_overlap(&model.token_words[id as usize], &context);
                }
            }
            ids.push(model.vocab.id(&PathToken::end()).expect("end marker in vocabulary"));
            for (j, &w) in ids.iter().enumerate() {
                let v = if j == 0 { START } else { ids[j - 1] };
                model.unigram[w as usize] += 1;
                model.unigram_total += 1;
                *model.bigram.entry((v, w)).or_default() += 1;
                *model.bigram_context.entry(v).or_default() += 1;
                if j >= 1 {
                    let u = if j == 1 { START } else { ids[j - 2] };
                    *model.trigram.entry((u, v, w)).or_default() += 1;
                    *model.trigram_context.entry((u, v)).or_default() += 1;
                }
            }
        }
        Ok(model)
    }

    fn empty(vocab: Vocabulary, weights: Interpolation, beta: f64, min_hops: usize) -> Self {
        let n = vocab.len();
        let token_words = vocab.tokens.iter().map(PathToken::words).collect();
        ReferenceModel {
            vocab,
            token_words,
            unigram: vec![0; n],
            unigram_total: 0,
            bigram: HashMap::new(),
            bigram_context: HashMap::new(),
            trigram: HashMap::new(),
            trigram_context: HashMap::new(),
            copy: vec![CopyStat::default(); n],
            weights,
            beta,
            min_hops,
        }
    }

    pub fn weights(&self) -> Interpolation {
        self.weights
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Shortest path length (in hops) after which the end marker is legal.
    pub fn min_hops(&self) -> usize {
        self.min_hops
    }

    pub fn set_min_hops(&mut self, min_hops: usize) {
        self.min_hops = min_hops;
    }

    /// Raw n-gram counts keyed by token text; `None` stands for the start
    /// marker.
    pub fn trigram_counts(&self) -> HashMap<(Option<String>, String, String), u64> {
        let name = |id: u32| (id != START).then(|| self.vocab.token(id).text.clone());
        self.trigram
            .iter()
            .map(|(&(u, v, w), &c)| {
                let v = name(v).expect("middle of a trigram is never the start marker");
                ((name(u), v, self.vocab.token(w).text.clone()), c)
            })
            .collect()
    }

    pub fn bigram_counts(&self) -> HashMap<(Option<String>, String), u64> {
        self.bigram
            .iter()
            .map(|(&(v, w), &c)| {
                let v = (v != START).then(|| self.vocab.token(v).text.clone());
                ((v, self.vocab.token(w).text.clone()), c)
            })
            .collect()
    }

    pub fn unigram_counts(&self) -> HashMap<String, u64> {
        self.vocab
            .tokens
            .iter()
            .zip(&self.unigram)
            .filter(|(_, &c)| c > 0)
            .map(|(t, &c)| (t.text.clone(), c))
            .collect()
    }

    pub fn copy_stat(&self, token: &PathToken) -> Option<CopyStat> {
        self.vocab.id(token).map(|i| self.copy[i as usize])
    }

    /// History ids `(u, v)` for the next position; `None` marks a token
    /// outside the vocabulary.
    fn history(&self, prefix: &[PathToken]) -> (Option<Option<u32>>, Option<u32>) {
        let id = |t: &PathToken| self.vocab.id(t);
        match prefix.len() {
            0 => (None, Some(START)),
            1 => (Some(Some(START)), id(&prefix[0])),
            n => (Some(id(&prefix[n - 2])), id(&prefix[n - 1])),
        }
    }

    /// The interpolated n-gram probability before the copy bias and the
    /// grammar mask.
    pub fn interpolated(&self, token: &PathToken, prefix: &[PathToken]) -> f64 {
        let Some(w) = self.vocab.id(token) else {
            return 0.0;
        };
        let (u, v) = self.history(prefix);
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let mut p = self.weights.uniform / self.vocab.len() as f64;
        p += self.weights.unigram * ratio(self.unigram[w as usize], self.unigram_total);
        if let Some(v) = v {
            p += self.weights.bigram
                * ratio(
                    self.bigram.get(&(v, w)).copied().unwrap_or(0),
                    self.bigram_context.get(&v).copied().unwrap_or(0),
                );
            if let Some(Some(u)) = u {
                p += self.weights.trigram
                    * ratio(
                        self.trigram.get(&(u, v, w)).copied().unwrap_or(0),
                        self.trigram_context.get(&(u, v)).copied().unwrap_or(0),
                    );
            }
        }
        p
    }

    /// Copy affinity of a token for a sentence: word overlap scaled by how
    /// reliably the token's words appeared in its training contexts.
    pub fn copy_affinity(&self, token: &PathToken, sentence: &str) -> f64 {
        let Some(id) = self.vocab.id(token) else {
            return 0.0;
        };
        let words: HashSet<String> = tokenize(sentence).into_iter().collect();
        self.affinity(id, &words)
    }

    fn affinity(&self, id: u32, sentence: &HashSet<String>) -> f64 {
        let overlap = word_overlap(&self.token_words[id as usize], sentence);
        if overlap == 0.0 {
            return 0.0;
        }
        overlap * self.copy[id as usize].reliability()
    }

    pub fn save<W: Write>(&self, writer: W, created_unix: Option<u64>) -> Result<(), GenerateError> {
        let mut bigram: Vec<_> = self.bigram.iter().map(|(&(v, w), &c)| (v, w, c)).collect();
        bigram.sort_unstable();
        let mut trigram: Vec<_> = self.trigram.iter().map(|(&(u, v, w), &c)| (u, v, w, c)).collect();
        trigram.sort_unstable();
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            created_unix,
            weights: self.weights,
            beta: self.beta,
            min_hops: self.min_hops,
            vocabulary: self.vocab.tokens.clone(),
            unigram: self.unigram.clone(),
            bigram,
            trigram,
            copy: self.copy.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self, GenerateError> {
        let file: ModelFile = serde_json::from_reader(reader)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(GenerateError::Format(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        file.weights.validate()?;
        let n = file.vocabulary.len();
        if file.unigram.len() != n || file.copy.len() != n {
            return Err(GenerateError::Format("table sizes disagree with the vocabulary".into()));
        }
        let in_range = |id: u32, allow_start: bool| (id as usize) < n || (allow_start && id == START);
        let mut model = ReferenceModel::empty(
            Vocabulary::from_tokens(file.vocabulary),
            file.weights,
            file.beta,
            file.min_hops,
        );
        model.unigram = file.unigram;
        model.unigram_total = model.unigram.iter().sum();
        model.copy = file.copy;
        for (v, w, c) in file.bigram {
            if !in_range(v, true) || !in_range(w, false) {
                return Err(GenerateError::Format("bigram id out of range".into()));
            }
            model.bigram.insert((v, w), c);
            *model.bigram_context.entry(v).or_default() += c;
        }
        for (u, v, w, c) in file.trigram {
            if !in_range(u, true) || !in_range(v, false) || !in_range(w, false) {
                return Err(GenerateError::Format("trigram id out of range".into()));
            }
            model.trigram.insert((u, v, w), c);
            *model.trigram_context.entry((u, v)).or_default() += c;
        }
        Ok(model)
    }
}

impl PathGenerator for ReferenceModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_dist(&self, sentence: &str, prefix: &[PathToken]) -> Result<TokenDistribution, GenerateError> {
        let legal = legal_continuations(&self.vocab, prefix, self.min_hops)?;
        let words: HashSet<String> = if self.beta != 0.0 {
            tokenize(sentence).into_iter().collect()
        } else {
            HashSet::new()
        };
        let scores = legal
            .into_iter()
            .map(|id| {
                let token = self.vocab.token(id);
                let p = self.interpolated(token, prefix).max(PROBABILITY_FLOOR);
                let bias = if self.beta != 0.0 {
                    (self.beta * self.affinity(id, &words)).exp()
                } else {
                    1.0
                };
                (token.clone(), p * bias)
            })
            .collect();
        Ok(TokenDistribution::from_scores(scores))
    }
}

/// Per-step negative log-likelihoods of `path` followed by the end marker,
/// each computed from the gold prefix. Gold tokens with zero probability
/// (unknown or ungrammatical) are charged at the probability floor.
pub fn teacher_forcing_steps(
    model: &dyn PathGenerator,
    sentence: &str,
    path: &Path,
) -> Result<Vec<f64>, GenerateError> {
    let mut gold = path_tokens(path);
    gold.push(PathToken::end());
    (0..gold.len())
        .map(|t| {
            let dist = model.next_token_dist(sentence, &gold[..t])?;
            Ok(-dist.prob(&gold[t]).max(PROBABILITY_FLOOR).ln())
        })
        .collect()
}

/// `-sum_t ln P(x_t | x_<t, sentence)`, natural log, end marker included.
pub fn teacher_forcing_loss(model: &dyn PathGenerator, sentence: &str, path: &Path) -> Result<f64, GenerateError> {
    Ok(teacher_forcing_steps(model, sentence, path)?.iter().sum())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedPath {
    pub path: Path,
    /// True when decoding stopped because no legal token could follow.
    pub truncated: bool,
}

/// Runs one decode, choosing each token with `choose`. Stops at the end
/// marker or once `max_hops` hops are complete.
fn decode_with(
    model: &dyn PathGenerator,
    sentence: &str,
    max_hops: usize,
    mut prefix: Vec<PathToken>,
    mut choose: impl FnMut(&TokenDistribution) -> PathToken,
) -> Result<DecodedPath, GenerateError> {
    let mut truncated = false;
    loop {
        let ends_with_entity = prefix.len() % 2 == 1;
        if ends_with_entity && prefix.len() / 2 >= max_hops {
            break;
        }
        let dist = model.next_token_dist(sentence, &prefix)?;
        if dist.is_empty() {
            truncated = true;
            break;
        }
        let token = choose(&dist);
        if token.kind == TokenKind::End {
            break;
        }
        prefix.push(token);
    }
    if prefix.len().is_multiple_of(2) {
        prefix.pop();
    }
    if prefix.is_empty() {
        return Err(GenerateError::NoContinuation);
    }
    Ok(DecodedPath {
        path: tokens_to_path(&prefix)?,
        truncated,
    })
}

fn greedy_choice(dist: &TokenDistribution) -> PathToken {
    dist.argmax().expect("non-empty distribution").clone()
}

/// Argmax at every step; ties go to the lexicographically smallest token.
pub fn decode_greedy(model: &dyn PathGenerator, sentence: &str, max_hops: usize) -> Result<DecodedPath, GenerateError> {
    decode_with(model, sentence, max_hops, Vec::new(), greedy_choice)
}

/// Greedy completion of a forced prefix.
pub fn complete_greedy(
    model: &dyn PathGenerator,
    sentence: &str,
    prefix: Vec<PathToken>,
    max_hops: usize,
) -> Result<DecodedPath, GenerateError> {
    prefix_state(&prefix)?;
    decode_with(model, sentence, max_hops, prefix, greedy_choice)
}

/// Draws from `candidates` in order with probability proportional to weight.
fn draw<'a>(candidates: &[(&'a PathToken, f64)], rng: &mut impl Rng) -> &'a PathToken {
    let total: f64 = candidates.iter().map(|(_, p)| p).sum();
    let mut u = rng.gen::<f64>() * total;
    for (t, p) in candidates {
        if u < *p {
            return t;
        }
        u -= p;
    }
    // Rounding can leave u just above the last weight.
    candidates
        .iter()
        .rev()
        .find(|(_, p)| *p > 0.0)
        .unwrap_or(&candidates[candidates.len() - 1])
        .0
}

/// Samples from the full distribution in ranked order.
pub fn sample_ancestral(dist: &TokenDistribution, rng: &mut impl Rng) -> PathToken {
    draw(&dist.ranked(), rng).clone()
}

fn top_k_choice(dist: &TokenDistribution, k: usize, rng: &mut impl Rng) -> PathToken {
    let ranked = dist.ranked();
    draw(&ranked[..k.min(ranked.len())], rng).clone()
}

fn nucleus_choice(dist: &TokenDistribution, p: f64, rng: &mut impl Rng) -> PathToken {
    let ranked = dist.ranked();
    let mut keep = ranked.len();
    if p < 1.0 {
        let mut cumulative = 0.0;
        for (i, (_, q)) in ranked.iter().enumerate() {
            cumulative += q;
            if cumulative >= p {
                keep = i + 1;
                break;
            }
        }
    }
    draw(&ranked[..keep], rng).clone()
}

/// Top-k sampling: each step samples among the `k` most probable tokens.
pub fn decode_topk(
    model: &dyn PathGenerator,
    sentence: &str,
    k: usize,
    n_samples: usize,
    seed: u64,
    max_hops: usize,
) -> Result<Vec<Path>, GenerateError> {
    if k == 0 {
        return Err(GenerateError::InvalidArgument("top-k needs k >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| decode_with(model, sentence, max_hops, Vec::new(), |d| top_k_choice(d, k, &mut rng)).map(|d| d.path))
        .collect()
}

/// Nucleus sampling: each step samples within the smallest ranked prefix
/// whose mass reaches `p`.
pub fn decode_nucleus(
    model: &dyn PathGenerator,
    sentence: &str,
    p: f64,
    n_samples: usize,
    seed: u64,
    max_hops: usize,
) -> Result<Vec<Path>, GenerateError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(GenerateError::InvalidArgument(format!("nucleus p must lie in (0, 1], got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| {
            decode_with(model, sentence, max_hops, Vec::new(), |d| nucleus_choice(d, p, &mut rng)).map(|d| d.path)
        })
        .collect()
}

/// Plain ancestral sampling over the grammatical distribution.
pub fn decode_ancestral(
    model: &dyn PathGenerator,
    sentence: &str,
    n_samples: usize,
    seed: u64,
    max_hops: usize,
) -> Result<Vec<Path>, GenerateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| decode_with(model, sentence, max_hops, Vec::new(), |d| sample_ancestral(d, &mut rng)).map(|d| d.path))
        .collect()
}

/// Diverse-path search: the `k` most probable first tokens, each completed
/// greedily. Returns fewer than `k` paths only when fewer first tokens are
/// legal.
pub fn decode_diverse_path(
    model: &dyn PathGenerator,
    sentence: &str,
    k: usize,
    max_hops: usize,
) -> Result<Vec<Path>, GenerateError> {
    if k == 0 {
        return Err(GenerateError::InvalidArgument("diverse-path search needs k >= 1".into()));
    }
    let first = model.next_token_dist(sentence, &[])?;
    first
        .ranked()
        .into_iter()
        .take(k)
        .map(|(t, _)| complete_greedy(model, sentence, vec![t.clone()], max_hops).map(|d| d.path))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Topk,
    Nucleus,
    Diverse,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Greedy, Strategy::Topk, Strategy::Nucleus, Strategy::Diverse];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Topk => "topk",
            Strategy::Nucleus => "nucleus",
            Strategy::Diverse => "diverse",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = GenerateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(Strategy::Greedy),
            "topk" | "top-k" => Ok(Strategy::Topk),
            "nucleus" | "top-p" => Ok(Strategy::Nucleus),
            "diverse" | "diverse-path" => Ok(Strategy::Diverse),
            other => Err(GenerateError::InvalidArgument(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Decoding settings shared by every strategy.
#[derive(Clone, Debug)]
pub struct DecodeConfig {
    pub k: usize,
    pub top_p: f64,
    pub max_hops: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            k: DEFAULT_DIVERSE_K,
            top_p: DEFAULT_TOP_P,
            max_hops: crate::kg::DEFAULT_MAX_HOPS,
            seed: 0,
        }
    }
}

/// Decodes one sentence. Sampling strategies draw `k` samples so every
/// strategy except greedy yields `k` paths.
pub fn decode(
    model: &dyn PathGenerator,
    sentence: &str,
    strategy: Strategy,
    config: &DecodeConfig,
) -> Result<Vec<Path>, GenerateError> {
    match strategy {
        Strategy::Greedy => Ok(vec![decode_greedy(model, sentence, config.max_hops)?.path]),
        Strategy::Topk => decode_topk(model, sentence, config.k, config.k, config.seed, config.max_hops),
        Strategy::Nucleus => decode_nucleus(model, sentence, config.top_p, config.k, config.seed, config.max_hops),
        Strategy::Diverse => decode_diverse_path(model, sentence, config.k, config.max_hops),
    }
}

/// One line of a decoded-paths file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedRecord {
    pub sentence: String,
    pub strategy: Strategy,
    pub paths: Vec<Path>,
}
