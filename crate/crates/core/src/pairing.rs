//! Sentence/path pairing: template queries, retrieval and ranking, top-K'
//! retention, entity masking, and dataset-quality audits.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{entity_words, find_phrase, tokenize, tokenize_spans, CorpusIndex, Sentence};
use crate::embed::{cosine, Embedder, EmbeddingVector};
use crate::kg::{Entity, Path, Relation};
use crate::seeding;

pub const MASK_TOKEN: &str = "[MASK]";
pub const DEFAULT_K_PRIME: usize = 10;
pub const DEFAULT_P_MASK: f64 = 0.33;

#[derive(Debug, Error)]
pub enum PairingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Q1,
    Q2,
}

/// Which query templates feed retrieval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Templates {
    Q1,
    Q2,
    #[default]
    Both,
}

impl FromStr for Templates {
    type Err = PairingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "q1" => Ok(Templates::Q1),
            "q2" => Ok(Templates::Q2),
            "q1+q2" | "both" => Ok(Templates::Both),
            other => Err(PairingError::InvalidArgument(format!(
                "unknown template set `{other}` (expected q1, q2 or q1+q2)"
            ))),
        }
    }
}

impl fmt::Display for Templates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Templates::Q1 => "q1",
            Templates::Q2 => "q2",
            Templates::Both => "q1+q2",
        })
    }
}

/// A retrieval query cut from a path. Q1 carries a relation, Q2 does not.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub kind: QueryKind,
    pub entities: [Entity; 2],
    pub relation: Option<Relation>,
}

impl Query {
    /// Text embedded for ranking: entity words, with the relation base
    /// between them for Q1. Inverse markers are dropped.
    pub fn text(&self) -> String {
        let [a, b] = &self.entities;
        match &self.relation {
            Some(r) => format!("{} {} {}", a.surface(), r.base().replace('_', " "), b.surface()),
            None => format!("{} {}", a.surface(), b.surface()),
        }
    }
}

/// Non-contiguous triples `(e_i, r_i, e_{i+2})` and `(e_i, r_{i+1}, e_{i+2})`.
pub fn extract_q1(path: &Path) -> Vec<Query> {
    let (es, rs) = (path.entities(), path.relations());
    if path.hops() < 2 {
        return Vec::new();
    }
    let make = |i: usize, r: &Relation| Query {
        kind: QueryKind::Q1,
        entities: [es[i].clone(), es[i + 2].clone()],
        relation: Some(r.clone()),
    };
    let first = (0..path.hops() - 1).map(|i| make(i, &rs[i]));
    let second = (0..path.hops() - 1).map(|i| make(i, &rs[i + 1]));
    first.chain(second).collect()
}

/// Adjacent entity pairs `(e_i, e_{i+1})`.
pub fn extract_q2(path: &Path) -> Vec<Query> {
    path.entities()
        .windows(2)
        .map(|w| Query {
            kind: QueryKind::Q2,
            entities: [w[0].clone(), w[1].clone()],
            relation: None,
        })
        .collect()
}

pub fn extract_queries(path: &Path, templates: Templates) -> Vec<Query> {
    match templates {
        Templates::Q1 => extract_q1(path),
        Templates::Q2 => extract_q2(path),
        Templates::Both => {
            let mut q = extract_q1(path);
            q.extend(extract_q2(path));
            q
        }
    }
}

fn by_similarity_then_id(a: &(u32, f64), b: &(u32, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

struct Ranker<'a> {
    index: &'a CorpusIndex,
    embedder: &'a dyn Embedder,
    cache: HashMap<u32, EmbeddingVector>,
}

impl Ranker<'_> {
    fn rank(&mut self, query: &Query, cap: usize) -> Result<Vec<(u32, f64)>, PairingError> {
        let ids = self.index.search_all_entities(&query.entities, cap);
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.embedder.embed(&query.text());
        let mut scored = Vec::with_capacity(ids.len());
        for id in ids {
            let v = match self.cache.get(&id) {
                Some(v) => v,
                None => {
                    let text = &self.index.sentence(id).expect("posting id in range").text;
                    let v = self.embedder.embed(text);
                    self.cache.entry(id).or_insert(v)
                }
            };
            scored.push((id, cosine(v, &q)?));
        }
        scored.sort_by(by_similarity_then_id);
        Ok(scored)
    }
}

/// Sentences containing every query entity, scored by cosine similarity to
/// the query text; descending, ties by ascending sentence id.
pub fn rank_candidates(
    index: &CorpusIndex,
    embedder: &dyn Embedder,
    query: &Query,
    cap: usize,
) -> Result<Vec<(u32, f64)>, PairingError> {
    Ranker {
        index,
        embedder,
        cache: HashMap::new(),
    }
    .rank(query, cap)
}

/// Replaces the first phrase occurrence of `entity` in `text` with `[MASK]`.
pub fn mask_entity(text: &str, entity: &Entity) -> Option<String> {
    let spans = tokenize_spans(text);
    let words = entity_words(entity);
    let tokens: Vec<String> = spans.iter().map(|(t, _)| t.clone()).collect();
    let start = find_phrase(&tokens, &words)?;
    let from = spans[start].1.start;
    let to = spans[start + words.len() - 1].1.end;
    Some(format!("{}{MASK_TOKEN}{}", &text[..from], &text[to..]))
}

#[derive(Clone, Debug)]
pub struct PairingConfig {
    pub k_prime: usize,
    pub p_mask: f64,
    pub templates: Templates,
    pub retrieval_cap: usize,
    pub seed: u64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig {
            k_prime: DEFAULT_K_PRIME,
            p_mask: DEFAULT_P_MASK,
            templates: Templates::Both,
            retrieval_cap: crate::corpus::DEFAULT_RETRIEVAL_CAP,
            seed: 0,
        }
    }
}

/// A sentence aligned with the entire path it was retrieved for.
#[derive(Clone, Debug, PartialEq)]
pub struct SentencePathPair {
    pub sentence_id: u32,
    pub sentence: String,
    pub masked_sentence: Option<String>,
    pub masked_entity: Option<Entity>,
    pub path: Path,
    pub similarity: f64,
    /// The query that gave the sentence its best score.
    pub query: Query,
}

/// One line of the pair dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub sentence: String,
    pub masked_sentence: Option<String>,
    pub masked_entity: Option<Entity>,
    pub path: Path,
    pub path_entities: Vec<Entity>,
    pub path_relations: Vec<String>,
    pub similarity: f64,
    pub query_kind: QueryKind,
}

impl PairRecord {
    /// The sentence a generator is conditioned on during training.
    pub fn context(&self) -> &str {
        self.masked_sentence.as_deref().unwrap_or(&self.sentence)
    }
}

impl SentencePathPair {
    pub fn record(&self) -> PairRecord {
        PairRecord {
            sentence: self.sentence.clone(),
            masked_sentence: self.masked_sentence.clone(),
            masked_entity: self.masked_entity.clone(),
            path: self.path.clone(),
            path_entities: self.path.entities().to_vec(),
            path_relations: self.path.relations().iter().map(|r| r.to_string()).collect(),
            similarity: self.similarity,
            query_kind: self.query.kind,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PairingReport {
    pub paths: usize,
    pub paths_skipped: usize,
    pub pairs: usize,
    pub masked: usize,
}

/// Pairs each path with its top-K' sentences over the union of its queries,
/// then masks one co-occurring entity with probability `p_mask`.
///
/// Each path draws from its own RNG stream keyed by its position, so the
/// output does not depend on how paths are spread over threads.
pub fn build_pairs(
    paths: &[Path],
    index: &CorpusIndex,
    embedder: &dyn Embedder,
    config: &PairingConfig,
) -> Result<(Vec<SentencePathPair>, PairingReport), PairingError> {
    if config.k_prime == 0 {
        return Err(PairingError::InvalidArgument("K' must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&config.p_mask) {
        return Err(PairingError::InvalidArgument(format!(
            "p_mask must lie in [0, 1], got {}",
            config.p_mask
        )));
    }
    let mask_seed = seeding::stage(config.seed, "mask");
    let per_path: Vec<Vec<SentencePathPair>> = paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| pair_path(i, path, index, embedder, config, mask_seed))
        .collect::<Result<_, _>>()?;

    let mut report = PairingReport {
        paths: paths.len(),
        ..Default::default()
    };
    let mut pairs = Vec::new();
    for group in per_path {
        if group.is_empty() {
            report.paths_skipped += 1;
        }
        report.masked += group.iter().filter(|p| p.masked_sentence.is_some()).count();
        pairs.extend(group);
    }
    report.pairs = pairs.len();
    Ok((pairs, report))
}

fn pair_path(
    path_index: usize,
    path: &Path,
    index: &CorpusIndex,
    embedder: &dyn Embedder,
    config: &PairingConfig,
    mask_seed: u64,
) -> Result<Vec<SentencePathPair>, PairingError> {
    let queries = extract_queries(path, config.templates);
    let mut ranker = Ranker {
        index,
        embedder,
        cache: HashMap::new(),
    };
    // sentence id -> (best similarity, query index)
    let mut best: HashMap<u32, (f64, usize)> = HashMap::new();
    for (qi, q) in queries.iter().enumerate() {
        for (id, sim) in ranker.rank(q, config.retrieval_cap)? {
            best.entry(id)
                .and_modify(|e| {
                    if sim > e.0 {
                        *e = (sim, qi);
                    }
                })
                .or_insert((sim, qi));
        }
    }
    let mut ranked: Vec<(u32, f64)> = best.iter().map(|(id, (s, _))| (*id, *s)).collect();
    ranked.sort_by(by_similarity_then_id);
    ranked.truncate(config.k_prime);

    let mut rng = seeding::rng(mask_seed, path_index as u64);
    let mut out = Vec::with_capacity(ranked.len());
    for (id, similarity) in ranked {
        let sentence = index.sentence(id).expect("ranked id in range");
        let (masked_sentence, masked_entity) = maybe_mask(sentence, path, config.p_mask, &mut rng);
        out.push(SentencePathPair {
            sentence_id: id,
            sentence: sentence.text.clone(),
            masked_sentence,
            masked_entity,
            path: path.clone(),
            similarity,
            query: queries[best[&id].1].clone(),
        });
    }
    Ok(out)
}

fn maybe_mask(
    sentence: &Sentence,
    path: &Path,
    p_mask: f64,
    rng: &mut impl Rng,
) -> (Option<String>, Option<Entity>) {
    if rng.gen::<f64>() >= p_mask {
        return (None, None);
    }
    let co_occurring: Vec<&Entity> = path
        .entities()
        .iter()
        .filter(|e| find_phrase(&sentence.tokens, &entity_words(e)).is_some())
        .collect();
    if co_occurring.is_empty() {
        return (None, None);
    }
    let chosen = co_occurring[rng.gen_range(0..co_occurring.len())];
    match mask_entity(&sentence.text, chosen) {
        Some(masked) => (Some(masked), Some(chosen.clone())),
        None => (None, None),
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_default() += 1;
        }
    }
    counts
}

/// Mean over questions of the best n-gram overlap fraction with any training
/// sentence (multiset intersection over the question's n-gram count).
pub fn ngram_leakage<Q, T>(questions: &[Q], train_sentences: &[T], n: usize) -> Result<f64, PairingError>
where
    Q: AsRef<str> + Sync,
    T: AsRef<str>,
{
    if questions.is_empty() {
        return Err(PairingError::Empty("question set"));
    }
    if n == 0 {
        return Err(PairingError::InvalidArgument("n must be at least 1".into()));
    }
    let train_tokens: Vec<Vec<String>> = train_sentences.iter().map(|s| tokenize(s.as_ref())).collect();
    // n-gram -> [(sentence index, count)]
    let mut postings: HashMap<&[String], Vec<(u32, usize)>> = HashMap::new();
    for (i, toks) in train_tokens.iter().enumerate() {
        for (g, c) in ngram_counts(toks, n) {
            postings.entry(g).or_default().push((i as u32, c));
        }
    }
    let total: f64 = questions
        .par_iter()
        .map(|q| {
            let toks = tokenize(q.as_ref());
            if toks.len() < n {
                return 0.0;
            }
            let q_counts = ngram_counts(&toks, n);
            let q_total = toks.len() + 1 - n;
            let mut matches: HashMap<u32, usize> = HashMap::new();
            for (g, qc) in &q_counts {
                if let Some(list) = postings.get(g) {
                    for (sid, sc) in list {
                        *matches.entry(*sid).or_default() += (*qc).min(*sc);
                    }
                }
            }
            let best = matches.values().copied().max().unwrap_or(0);
            best as f64 / q_total as f64
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    Ok(total / questions.len() as f64)
}

/// Mean cosine between each pair's sentence and its full path text.
pub fn pair_similarity_audit(pairs: &[PairRecord], embedder: &dyn Embedder) -> Result<f64, PairingError> {
    if pairs.is_empty() {
        return Err(PairingError::Empty("pair set"));
    }
    let sims: Vec<f64> = pairs
        .par_iter()
        .map(|p| cosine(&embedder.embed(&p.path.surface_text()), &embedder.embed(&p.sentence)))
        .collect::<Result<_, _>>()?;
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashedTfIdf;

    fn violin_path() -> Path {
        Path::parse("violin hasproperty strings _hasprerequisite guitar atlocation concert").unwrap()
    }

    fn triple(q: &Query) -> (String, String, String) {
        (
            q.entities[0].to_string(),
            q.relation.as_ref().map(|r| r.to_string()).unwrap_or_default(),
            q.entities[1].to_string(),
        )
    }

    fn t(a: &str, r: &str, b: &str) -> (String, String, String) {
        (a.into(), r.into(), b.into())
    }

    #[test]
    fn q1_on_violin_path() {
        let got: Vec<_> = extract_q1(&violin_path()).iter().map(triple).collect();
        assert_eq!(
            got,
            vec![
                t("violin", "hasproperty", "guitar"),
                t("strings", "_hasprerequisite", "concert"),
                t("violin", "_hasprerequisite", "guitar"),
                t("strings", "atlocation", "concert"),
            ]
        );
    }

    #[test]
    fn q1_small_cases() {
        let p = Path::parse("a r1 b r2 c").unwrap();
        let got: Vec<_> = extract_q1(&p).iter().map(triple).collect();
        assert_eq!(got, vec![t("a", "r1", "c"), t("a", "r2", "c")]);
        assert!(extract_q1(&Path::parse("a r b").unwrap()).is_empty());
    }

    #[test]
    fn q2_cases() {
        let got: Vec<_> = extract_q2(&violin_path()).iter().map(triple).collect();
        assert_eq!(
            got,
            vec![t("violin", "", "strings"), t("strings", "", "guitar"), t("guitar", "", "concert")]
        );
        assert_eq!(extract_q2(&Path::parse("a r b").unwrap()).len(), 1);
        assert!(extract_q2(&violin_path()).iter().all(|q| q.relation.is_none()));
    }

    #[test]
    fn query_text_strips_markers() {
        let q = &extract_q1(&violin_path())[1];
        assert_eq!(q.text(), "strings hasprerequisite concert");
        let q = Query {
            kind: QueryKind::Q2,
            entities: [Entity::new("fast_food").unwrap(), Entity::new("meal").unwrap()],
            relation: None,
        };
        assert_eq!(q.text(), "fast food meal");
    }

    #[test]
    fn verbatim_candidate_ranks_first() {
        let idx = CorpusIndex::from_texts([
            "the violin on stage had strings",
            "violin hasproperty guitar",
            "a guitar next to a violin",
        ]);
        let e = HashedTfIdf::new(4096);
        let q = &extract_q1(&violin_path())[0];
        let ranked = rank_candidates(&idx, &e, q, 10).unwrap();
        assert_eq!(ranked[0].0, 1);
        assert!((ranked[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(ranked.len(), 2);
    }

    #[test]
    fn equal_scores_break_ties_by_id() {
        let idx = CorpusIndex::from_texts(["violin and strings", "strings and violin", "violin strings"]);
        let e = HashedTfIdf::new(4096);
        let q = &extract_q2(&violin_path())[0];
        let ranked = rank_candidates(&idx, &e, q, 10).unwrap();
        assert_eq!(ranked[0].0, 2);
        assert_eq!(ranked[1].1, ranked[2].1);
        assert_eq!((ranked[1].0, ranked[2].0), (0, 1));
    }

    #[test]
    fn masking_replaces_first_occurrence() {
        let e = Entity::new("google_maps").unwrap();
        assert_eq!(
            mask_entity("Google maps and other GPS services have replaced what?", &e).as_deref(),
            Some("[MASK] and other GPS services have replaced what?")
        );
        let e = Entity::new("violin").unwrap();
        assert_eq!(
            mask_entity("A violin, another violin.", &e).as_deref(),
            Some("A [MASK], another violin.")
        );
        assert_eq!(mask_entity("violins only", &e), None);
    }

    fn small_fixture() -> (CorpusIndex, Vec<Path>) {
        let idx = CorpusIndex::from_texts([
            "the violin has strings",
            "a guitar needs strings",
            "a guitar at the concert",
            "the concert was a big event",
            "violin and guitar",
        ]);
        let paths = vec![
            violin_path(),
            Path::parse("guitar atlocation concert isa event").unwrap(),
            Path::parse("cello isa instrument").unwrap(),
        ];
        (idx, paths)
    }

    #[test]
    fn mask_probability_extremes() {
        let (idx, paths) = small_fixture();
        let e = HashedTfIdf::fit(&idx, 4096);
        let cfg = PairingConfig {
            p_mask: 0.0,
            ..Default::default()
        };
        let (pairs, report) = build_pairs(&paths, &idx, &e, &cfg).unwrap();
        assert!(pairs.iter().all(|p| p.masked_sentence.is_none()));
        assert_eq!(report.paths_skipped, 1);
        assert_eq!(report.masked, 0);

        let cfg = PairingConfig {
            p_mask: 1.0,
            ..Default::default()
        };
        let (pairs, report) = build_pairs(&paths, &idx, &e, &cfg).unwrap();
        assert!(!pairs.is_empty());
        assert_eq!(report.masked, pairs.len());
        for p in &pairs {
            let masked = p.masked_sentence.as_ref().unwrap();
            let entity = p.masked_entity.as_ref().unwrap();
            assert!(p.path.entities().contains(entity));
            let restored = masked.replacen(MASK_TOKEN, &entity.surface(), 1);
            assert!(crate::corpus::phrase_match(&Sentence::new(0, restored), entity));
        }
    }

    #[test]
    fn pairs_carry_entire_path_and_respect_k_prime() {
        let (idx, paths) = small_fixture();
        let e = HashedTfIdf::fit(&idx, 4096);
        let cfg = PairingConfig {
            k_prime: 2,
            ..Default::default()
        };
        let (pairs, _) = build_pairs(&paths, &idx, &e, &cfg).unwrap();
        for path in &paths {
            let group: Vec<_> = pairs.iter().filter(|p| &p.path == path).collect();
            assert!(group.len() <= 2);
            assert!(group.windows(2).all(|w| w[0].similarity >= w[1].similarity));
            for p in group {
                let s = idx.sentence(p.sentence_id).unwrap();
                assert!(p.query.entities.iter().all(|e| crate::corpus::phrase_match(s, e)));
            }
        }
    }

    #[test]
    fn template_variants() {
        let (idx, paths) = small_fixture();
        let e = HashedTfIdf::fit(&idx, 4096);
        for (templates, kinds) in [
            (Templates::Q1, vec![QueryKind::Q1]),
            (Templates::Q2, vec![QueryKind::Q2]),
            (Templates::Both, vec![QueryKind::Q1, QueryKind::Q2]),
        ] {
            let cfg = PairingConfig {
                templates,
                ..Default::default()
            };
            let (pairs, _) = build_pairs(&paths, &idx, &e, &cfg).unwrap();
            assert!(pairs.iter().all(|p| kinds.contains(&p.query.kind)));
        }
        assert_eq!("q1+q2".parse::<Templates>().unwrap(), Templates::Both);
        assert!("q3".parse::<Templates>().is_err());
    }

    #[test]
    fn invalid_pairing_arguments() {
        let (idx, paths) = small_fixture();
        let e = HashedTfIdf::new(16);
        for cfg in [
            PairingConfig { k_prime: 0, ..Default::default() },
            PairingConfig { p_mask: 1.5, ..Default::default() },
        ] {
            assert!(matches!(
                build_pairs(&paths, &idx, &e, &cfg),
                Err(PairingError::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn record_serialization_shape() {
        let (idx, paths) = small_fixture();
        let e = HashedTfIdf::fit(&idx, 4096);
        let (pairs, _) = build_pairs(&paths, &idx, &e, &PairingConfig::default()).unwrap();
        let rec = pairs[0].record();
        let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            vec![
                "masked_entity",
                "masked_sentence",
                "path",
                "path_entities",
                "path_relations",
                "query_kind",
                "sentence",
                "similarity"
            ]
        );
        let back: PairRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn leakage_fixtures() {
        let train = ["if a person is tired they rest", "the cat sat on the mat"];
        let q = ["the cat sat on the mat"];
        for n in 1..=6 {
            assert_eq!(ngram_leakage(&q, &train, n).unwrap(), 1.0);
        }
        assert_eq!(ngram_leakage(&["dogs bark loudly"], &train, 1).unwrap(), 0.0);
        assert_eq!(ngram_leakage(&["the cat"], &train, 3).unwrap(), 0.0);
        assert!(ngram_leakage::<&str, &str>(&[], &train, 1).is_err());
        assert!(ngram_leakage(&q, &train, 0).is_err());
    }

    #[test]
    fn similarity_audit_extremes() {
        let e = HashedTfIdf::new(4096);
        let path = violin_path();
        let rec = |sentence: &str| PairRecord {
            sentence: sentence.to_string(),
            masked_sentence: None,
            masked_entity: None,
            path: path.clone(),
            path_entities: path.entities().to_vec(),
            path_relations: vec![],
            similarity: 0.0,
            query_kind: QueryKind::Q2,
        };
        let same = [rec(&path.surface_text())];
        assert!((pair_similarity_audit(&same, &e).unwrap() - 1.0).abs() < 1e-12);
        let disjoint = [rec("nothing shared here")];
        assert_eq!(pair_similarity_audit(&disjoint, &e).unwrap(), 0.0);
        assert!(pair_similarity_audit(&[], &e).is_err());
    }
}
