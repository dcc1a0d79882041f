//! Commonsense knowledge graph storage and random-walk path sampling.
//!
//! The graph is loaded from a `head\trelation\ttail` TSV stream. Every edge is
//! traversable in both directions; a reverse traversal is rendered with a
//! leading underscore (`_usedfor`).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;

/// Relations whose paths are discarded during sampling.
pub const DEFAULT_BANNED_RELATIONS: [&str; 8] = [
    "hascontext",
    "relatedto",
    "synonym",
    "antonym",
    "derivedfrom",
    "formof",
    "etymologicallyderivedfrom",
    "etymologicallyrelatedto",
];

/// Default hop bounds for sampled paths.
pub const DEFAULT_MIN_HOPS: usize = 2;
pub const DEFAULT_MAX_HOPS: usize = 5;

/// Walk attempts allowed per requested path before giving up.
const ATTEMPTS_PER_PATH: usize = 100;
const ATTEMPT_BATCH: usize = 4096;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("knowledge graph input contains no edges")]
    EmptyGraph,
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("invalid entity `{0}`")]
    InvalidEntity(String),
    #[error("invalid relation `{0}`")]
    InvalidRelation(String),
    #[error("malformed path: {0}")]
    MalformedPath(String),
    #[error("invalid sampling parameters: {0}")]
    InvalidArgument(String),
    #[error("no valid path found after {attempts} walk attempts")]
    Exhausted { attempts: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercase, trim, and join internal whitespace runs with `_`.
pub fn normalize_name(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

/// A concept node, stored in canonical form (`fast_food_restaurant`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Entity(String);

impl Entity {
    /// Normalizes `raw` into a canonical entity id.
    pub fn new(raw: &str) -> Result<Self, KgError> {
        let id = normalize_name(raw);
        if id.is_empty() {
            return Err(KgError::InvalidEntity(raw.to_string()));
        }
        Ok(Entity(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The entity as plain words (`fast food restaurant`).
    pub fn surface(&self) -> String {
        self.0.replace('_', " ")
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Entity {
    type Error = KgError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Entity::new(&value)
    }
}

impl From<Entity> for String {
    fn from(e: Entity) -> Self {
        e.0
    }
}

/// A relation label, possibly traversed in reverse.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Relation {
    base: String,
    inverse: bool,
}

impl Relation {
    pub fn new(base: &str, inverse: bool) -> Result<Self, KgError> {
        let base = normalize_name(base);
        if base.is_empty() || base.starts_with('_') {
            return Err(KgError::InvalidRelation(base));
        }
        Ok(Relation { base, inverse })
    }

    pub fn forward(base: &str) -> Result<Self, KgError> {
        Relation::new(base, false)
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn is_inverse(&self) -> bool {
        self.inverse
    }

    pub fn inverted(&self) -> Relation {
        Relation {
            base: self.base.clone(),
            inverse: !self.inverse,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.inverse {
            write!(f, "_{}", self.base)
        } else {
            f.write_str(&self.base)
        }
    }
}

impl FromStr for Relation {
    type Err = KgError;

    /// Parses a rendered relation token; a leading `_` marks the inverse.
    fn from_str(token: &str) -> Result<Self, Self::Err> {
        match token.strip_prefix('_') {
            Some(base) => Relation::new(base, true),
            None => Relation::new(token, false),
        }
    }
}

/// An alternating entity/relation sequence `e1 r1 e2 ... e_{n+1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Path {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
}

impl Path {
    /// Builds a path, checking the length relation and entity distinctness.
    pub fn new(entities: Vec<Entity>, relations: Vec<Relation>) -> Result<Self, KgError> {
        if entities.len() != relations.len() + 1 {
            return Err(KgError::MalformedPath(format!(
                "{} entities for {} relations",
                entities.len(),
                relations.len()
            )));
        }
        let mut seen = HashSet::with_capacity(entities.len());
        for e in &entities {
            if !seen.insert(e) {
                return Err(KgError::MalformedPath(format!("entity `{e}` repeats")));
            }
        }
        Ok(Path {
            entities,
            relations,
        })
    }

    /// Parses a whitespace-separated linearization.
    pub fn parse(linearized: &str) -> Result<Self, KgError> {
        let tokens: Vec<&str> = linearized.split_whitespace().collect();
        if tokens.len().is_multiple_of(2) {
            return Err(KgError::MalformedPath(format!(
                "`{linearized}` has an even number of tokens"
            )));
        }
        let mut entities = Vec::with_capacity(tokens.len() / 2 + 1);
        let mut relations = Vec::with_capacity(tokens.len() / 2);
        for (i, tok) in tokens.iter().enumerate() {
            if i % 2 == 0 {
                entities.push(Entity::new(tok)?);
            } else {
                relations.push(tok.parse()?);
            }
        }
        Path::new(entities, relations)
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn hops(&self) -> usize {
        self.relations.len()
    }

    /// Space-separated words with underscores expanded and inverse markers
    /// dropped, used as embedding input.
    pub fn surface_text(&self) -> String {
        let mut parts = Vec::with_capacity(self.entities.len() + self.relations.len());
        for (i, e) in self.entities.iter().enumerate() {
            parts.push(e.surface());
            if let Some(r) = self.relations.get(i) {
                parts.push(r.base().replace('_', " "));
            }
        }
        parts.join(" ")
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.entities.iter().enumerate() {
            if i > 0 {
                write!(f, " {} ", self.relations[i - 1])?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl TryFrom<String> for Path {
    type Error = KgError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Path::parse(&value)
    }
}

impl From<Path> for String {
    fn from(p: Path) -> Self {
        p.to_string()
    }
}

/// Why a path fails the relation heuristics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PathRejection {
    /// `r_i == r_{i+1}` at the given relation index `i`.
    AdjacentRepeat { position: usize },
    BannedRelation { base: String },
}

impl fmt::Display for PathRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathRejection::AdjacentRepeat { position } => {
                write!(f, "relations {position} and {} repeat", position + 1)
            }
            PathRejection::BannedRelation { base } => write!(f, "banned relation `{base}`"),
        }
    }
}

pub fn default_banned() -> HashSet<String> {
    DEFAULT_BANNED_RELATIONS.iter().map(|s| s.to_string()).collect()
}

/// Applies the relation heuristics: no two adjacent relations may render to
/// the same token, and no relation base may be banned.
pub fn is_valid_path(path: &Path, banned: &HashSet<String>) -> Result<(), PathRejection> {
    if let Some(r) = path.relations.iter().find(|r| banned.contains(r.base())) {
        return Err(PathRejection::BannedRelation {
            base: r.base().to_string(),
        });
    }
    if let Some(position) = path.relations.windows(2).position(|w| w[0] == w[1]) {
        return Err(PathRejection::AdjacentRepeat { position });
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub entities: usize,
    pub edges: usize,
    pub duplicates_dropped: usize,
}

/// Immutable graph with bidirectional adjacency.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    ids: HashMap<Entity, usize>,
    edges: Vec<(usize, String, usize)>,
    adjacency: Vec<Vec<(Relation, usize)>>,
}

/// Incremental construction of a [`KnowledgeGraph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: KnowledgeGraph,
    seen: HashSet<(usize, String, usize)>,
    duplicates: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, entity: Entity) -> usize {
        if let Some(&id) = self.graph.ids.get(&entity) {
            return id;
        }
        let id = self.graph.entities.len();
        self.graph.ids.insert(entity.clone(), id);
        self.graph.entities.push(entity);
        self.graph.adjacency.push(Vec::new());
        id
    }

    /// Adds an edge; returns false if it was a duplicate.
    pub fn add_triple(&mut self, head: Entity, relation: &str, tail: Entity) -> bool {
        let h = self.add_entity(head);
        let t = self.add_entity(tail);
        let key = (h, relation.to_string(), t);
        if !self.seen.insert(key.clone()) {
            self.duplicates += 1;
            return false;
        }
        self.graph.edges.push(key);
        true
    }

    pub fn build(self) -> (KnowledgeGraph, LoadReport) {
        let mut graph = self.graph;
        for (h, rel, t) in &graph.edges {
            let forward = Relation {
                base: rel.clone(),
                inverse: false,
            };
            graph.adjacency[*t].push((forward.inverted(), *h));
            graph.adjacency[*h].push((forward, *t));
        }
        let names = &graph.entities;
        for list in &mut graph.adjacency {
            list.sort_by(|(ra, a), (rb, b)| {
                ra.to_string()
                    .cmp(&rb.to_string())
                    .then_with(|| names[*a].cmp(&names[*b]))
            });
        }
        let report = LoadReport {
            entities: graph.entities.len(),
            edges: graph.edges.len(),
            duplicates_dropped: self.duplicates,
        };
        (graph, report)
    }
}

/// Reads a TSV triple stream. Lines starting with `#` and blank lines are
/// skipped.
pub fn load_kg<R: BufRead>(reader: R) -> Result<(KnowledgeGraph, LoadReport), KgError> {
    let mut builder = GraphBuilder::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| KgError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str| KgError::Parse {
            line: line_no,
            message: format!("empty or invalid {what}"),
        };
        let head = Entity::new(fields[0]).map_err(|_| parse_err("head"))?;
        let tail = Entity::new(fields[2]).map_err(|_| parse_err("tail"))?;
        let relation = Relation::forward(fields[1]).map_err(|_| parse_err("relation"))?;
        builder.add_triple(head, relation.base(), tail);
    }
    let (graph, report) = builder.build();
    if graph.edges.is_empty() {
        return Err(KgError::EmptyGraph);
    }
    Ok((graph, report))
}

impl KnowledgeGraph {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn contains(&self, e: &Entity) -> bool {
        self.ids.contains_key(e)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&Entity, &str, &Entity)> + '_ {
        self.edges
            .iter()
            .map(|(h, r, t)| (&self.entities[*h], r.as_str(), &self.entities[*t]))
    }

    /// Forward and reverse neighbours, ordered by rendered relation then
    /// neighbour id.
    pub fn neighbors(&self, e: &Entity) -> Result<Vec<(Relation, Entity)>, KgError> {
        let id = self
            .ids
            .get(e)
            .ok_or_else(|| KgError::UnknownEntity(e.to_string()))?;
        Ok(self.adjacency[*id]
            .iter()
            .map(|(r, n)| (r.clone(), self.entities[*n].clone()))
            .collect())
    }
}

/// Parameters of [`sample_paths`].
#[derive(Clone, Debug)]
pub struct SamplingConfig {
    pub count: usize,
    pub min_hops: usize,
    pub max_hops: usize,
    pub seed: u64,
    pub banned: HashSet<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            count: 1000,
            min_hops: DEFAULT_MIN_HOPS,
            max_hops: DEFAULT_MAX_HOPS,
            seed: 0,
            banned: default_banned(),
        }
    }
}

/// Single-walk sampler. Attempt `i` draws from its own RNG stream, so any
/// subset of attempts can be replayed independently.
pub struct PathSampler<'a> {
    kg: &'a KnowledgeGraph,
    config: &'a SamplingConfig,
}

impl<'a> PathSampler<'a> {
    pub fn new(kg: &'a KnowledgeGraph, config: &'a SamplingConfig) -> Result<Self, KgError> {
        if config.min_hops == 0 || config.min_hops > config.max_hops {
            return Err(KgError::InvalidArgument(format!(
                "hop bounds must satisfy 1 <= l1 <= l2, got l1={} l2={}",
                config.min_hops, config.max_hops
            )));
        }
        if kg.entities.is_empty() {
            return Err(KgError::EmptyGraph);
        }
        Ok(PathSampler { kg, config })
    }

    /// Runs walk attempt `attempt`; `None` when the walk hit a dead end.
    pub fn try_walk(&self, attempt: u64) -> Option<Path> {
        let mut rng = seeding::rng(self.config.seed, attempt);
        let kg = self.kg;
        let mut current = rng.gen_range(0..kg.entities.len());
        let target = rng.gen_range(self.config.min_hops..=self.config.max_hops);
        let mut visited = vec![current];
        let mut relations: Vec<&Relation> = Vec::with_capacity(target);
        let mut options: Vec<&(Relation, usize)> = Vec::new();
        while relations.len() < target {
            options.clear();
            options.extend(kg.adjacency[current].iter().filter(|(r, n)| {
                !visited.contains(n)
                    && !self.config.banned.contains(r.base())
                    && relations.last().is_none_or(|prev| *prev != r)
            }));
            if options.is_empty() {
                return None;
            }
            let (r, n) = options[rng.gen_range(0..options.len())];
            relations.push(r);
            visited.push(*n);
            current = *n;
        }
        Some(Path {
            entities: visited.iter().map(|&i| kg.entities[i].clone()).collect(),
            relations: relations.into_iter().cloned().collect(),
        })
    }
}

/// Samples up to `config.count` distinct valid paths by random walk.
///
/// Attempts are processed in index order (in parallel batches) and the first
/// `count` distinct successes are kept, so the result does not depend on the
/// thread count. Fails only if no walk succeeds within `100 * count` attempts.
pub fn sample_paths(kg: &KnowledgeGraph, config: &SamplingConfig) -> Result<Vec<Path>, KgError> {
    if config.count == 0 {
        return Err(KgError::InvalidArgument("count must be positive".into()));
    }
    let sampler = PathSampler::new(kg, config)?;
    let budget = config.count.saturating_mul(ATTEMPTS_PER_PATH);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(config.count.min(1 << 16));
    let mut start = 0;
    while start < budget && out.len() < config.count {
        let end = (start + ATTEMPT_BATCH).min(budget);
        let batch: Vec<Option<Path>> = (start..end)
            .into_par_iter()
            .map(|i| sampler.try_walk(i as u64))
            .collect();
        for path in batch.into_iter().flatten() {
            if out.len() == config.count {
                break;
            }
            if seen.insert(path.clone()) {
                out.push(path);
            }
        }
        start = end;
    }
    if out.is_empty() {
        return Err(KgError::Exhausted { attempts: budget });
    }
    Ok(out)
}
