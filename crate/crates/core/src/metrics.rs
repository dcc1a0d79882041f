//! Path relevance, diversity and novelty; Hits@K and Recall@K.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::Serialize;
use thiserror::Error;

use crate::kg::{Entity, Path};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("diversity needs at least two paths, got {0}")]
    TooFewPaths(usize),
    #[error("ground-truth answer set is empty")]
    EmptyTruth,
    #[error("K must be at least 1")]
    ZeroK,
}

/// A path segment with the inverse marker resolved by swapping endpoints.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CanonicalTriple {
    pub head: Entity,
    pub relation: String,
    pub tail: Entity,
}

pub fn path_triples(path: &Path) -> Vec<CanonicalTriple> {
    let es = path.entities();
    path.relations()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (head, tail) = if r.is_inverse() {
                (&es[i + 1], &es[i])
            } else {
                (&es[i], &es[i + 1])
            };
            CanonicalTriple {
                head: head.clone(),
                relation: r.base().to_string(),
                tail: tail.clone(),
            }
        })
        .collect()
}

fn counts<T: Eq + Hash>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for i in items {
        *m.entry(i).or_default() += 1;
    }
    m
}

/// BLEU of order 1 with canonical triples as unigrams: clipped precision
/// times the brevity penalty `min(1, exp(1 - r/c))`.
pub fn relevance_bleu(generated: &Path, reference: &Path) -> f64 {
    let gen = path_triples(generated);
    let refs = path_triples(reference);
    let c = gen.len();
    if c == 0 {
        return 0.0;
    }
    let ref_counts = counts(refs.iter());
    let matched: usize = counts(gen.iter())
        .into_iter()
        .map(|(t, n)| n.min(ref_counts.get(t).copied().unwrap_or(0)))
        .sum();
    let precision = matched as f64 / c as f64;
    let brevity = (1.0 - refs.len() as f64 / c as f64).exp().min(1.0);
    precision * brevity
}

fn entity_set(p: &Path) -> HashSet<&Entity> {
    p.entities().iter().collect()
}

/// Mean over unordered path pairs of `1 - IoU` of their entity sets.
pub fn diversity(paths: &[Path]) -> Result<f64, MetricsError> {
    if paths.len() < 2 {
        return Err(MetricsError::TooFewPaths(paths.len()));
    }
    let sets: Vec<_> = paths.iter().map(entity_set).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let inter = sets[i].intersection(&sets[j]).count();
            let union = sets[i].union(&sets[j]).count();
            total += 1.0 - inter as f64 / union as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Fraction of the path's entities absent from `training_entities`.
pub fn novelty(path: &Path, training_entities: &HashSet<Entity>) -> f64 {
    let es = path.entities();
    let novel = es.iter().filter(|e| !training_entities.contains(*e)).count();
    novel as f64 / es.len() as f64
}

fn top_k<T>(predicted: &[T], k: usize) -> &[T] {
    &predicted[..k.min(predicted.len())]
}

/// 1 iff any of the first `k` predictions is a true answer.
pub fn hits_at_k<T: Eq + Hash>(predicted: &[T], truth: &HashSet<T>, k: usize) -> Result<u8, MetricsError> {
    if truth.is_empty() {
        return Err(MetricsError::EmptyTruth);
    }
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    Ok(top_k(predicted, k).iter().any(|p| truth.contains(p)) as u8)
}

/// Share of true answers found among the first `k` predictions.
pub fn recall_at_k<T: Eq + Hash>(predicted: &[T], truth: &HashSet<T>, k: usize) -> Result<f64, MetricsError> {
    if truth.is_empty() {
        return Err(MetricsError::EmptyTruth);
    }
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let top: HashSet<&T> = top_k(predicted, k).iter().collect();
    let found = truth.iter().filter(|a| top.contains(a)).count();
    Ok(found as f64 / truth.len() as f64)
}

/// Metrics for one evaluated sentence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleScores {
    pub sentence: String,
    pub relevance: f64,
    /// `None` when fewer than two paths were generated.
    pub diversity: Option<f64>,
    /// `None` when no training entity set was supplied.
    pub novelty: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub strategy: String,
    pub samples: usize,
    pub relevance: f64,
    pub diversity: Option<f64>,
    pub novelty: Option<f64>,
    pub per_sample: Vec<SampleScores>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores one sentence's generated paths against its reference paths.
///
/// Relevance is the mean over generated paths of the best BLEU against any
/// reference; novelty is the mean over generated paths.
pub fn score_sample(
    sentence: &str,
    generated: &[Path],
    references: &[Path],
    training_entities: Option<&HashSet<Entity>>,
) -> SampleScores {
    let relevance = mean(generated.iter().map(|g| {
        references
            .iter()
            .map(|r| relevance_bleu(g, r))
            .fold(0.0, f64::max)
    }))
    .unwrap_or(0.0);
    SampleScores {
        sentence: sentence.to_string(),
        relevance,
        diversity: diversity(generated).ok(),
        novelty: training_entities.and_then(|t| mean(generated.iter().map(|g| novelty(g, t)))),
    }
}

/// Aggregates per-sample scores; each aggregate is the arithmetic mean over
/// the samples where the value is defined.
pub fn aggregate(strategy: &str, per_sample: Vec<SampleScores>) -> EvalReport {
    EvalReport {
        strategy: strategy.to_string(),
        samples: per_sample.len(),
        relevance: mean(per_sample.iter().map(|s| s.relevance)).unwrap_or(0.0),
        diversity: mean(per_sample.iter().filter_map(|s| s.diversity)),
        novelty: mean(per_sample.iter().filter_map(|s| s.novelty)),
        per_sample,
    }
}

/// Aligned text table of relevance/diversity/novelty per strategy.
pub fn render_table(reports: &[EvalReport]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let mut out = format!(
        "{:<10} {:>8} {:>10} {:>10} {:>10}\n",
        "strategy", "samples", "relevance", "diversity", "novelty"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<10} {:>8} {:>10} {:>10} {:>10}\n",
            r.strategy,
            r.samples,
            cell(Some(r.relevance)),
            cell(r.diversity),
            cell(r.novelty)
        ));
    }
    out
}
