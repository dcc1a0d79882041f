//! Independent reference implementations used by the integration tests.
//! None of these call into the library code they check; they work on plain
//! strings and vectors.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

pub const TOY_KG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/toy_kg.tsv");
pub const TOY_CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/toy_corpus.txt");

pub const BANNED: [&str; 8] = [
    "hascontext",
    "relatedto",
    "synonym",
    "antonym",
    "derivedfrom",
    "formof",
    "etymologicallyderivedfrom",
    "etymologicallyrelatedto",
];

fn norm(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join("_").to_lowercase()
}

pub fn read_edges(tsv: &str) -> Vec<(String, String, String)> {
    tsv.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (norm(f[0]), norm(f[1]), norm(f[2]))
        })
        .collect()
}

/// Every walk with hop count in `[min, max]`, distinct entities, no banned
/// relation and no two adjacent identical rendered relations, linearized.
pub fn enumerate_walks(edges: &[(String, String, String)], min: usize, max: usize) -> HashSet<String> {
    let mut adj: HashMap<&str, Vec<(String, &str)>> = HashMap::new();
    for (h, r, t) in edges {
        if BANNED.contains(&r.as_str()) {
            continue;
        }
        adj.entry(h).or_default().push((r.clone(), t));
        adj.entry(t).or_default().push((format!("_{r}"), h));
    }
    let mut out = HashSet::new();
    fn dfs<'a>(
        adj: &HashMap<&'a str, Vec<(String, &'a str)>>,
        ents: &mut Vec<&'a str>,
        rels: &mut Vec<String>,
        min: usize,
        max: usize,
        out: &mut HashSet<String>,
    ) {
        if rels.len() >= min {
            let mut s = ents[0].to_string();
            for (r, e) in rels.iter().zip(&ents[1..]) {
                s.push_str(&format!(" {r} {e}"));
            }
            out.insert(s);
        }
        if rels.len() == max {
            return;
        }
        let cur = *ents.last().unwrap();
        for (r, n) in adj.get(cur).into_iter().flatten() {
            if ents.contains(n) || rels.last() == Some(r) {
                continue;
            }
            ents.push(n);
            rels.push(r.clone());
            dfs(adj, ents, rels, min, max, out);
            ents.pop();
            rels.pop();
        }
    }
    let starts: BTreeSet<&str> = adj.keys().copied().collect();
    for s in starts {
        dfs(&adj, &mut vec![s], &mut Vec::new(), min, max, &mut out);
    }
    out
}

/// Splits a linearized path into (entities, relations).
pub fn split_path(lin: &str) -> (Vec<String>, Vec<String>) {
    let toks: Vec<&str> = lin.split_whitespace().collect();
    let ents = toks.iter().step_by(2).map(|s| s.to_string()).collect();
    let rels = toks.iter().skip(1).step_by(2).map(|s| s.to_string()).collect();
    (ents, rels)
}

pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn contains_phrase(tokens: &[String], entity: &str) -> bool {
    let phrase: Vec<&str> = entity.split('_').collect();
    tokens
        .windows(phrase.len())
        .any(|w| w.iter().zip(&phrase).all(|(a, b)| a == b))
}

/// Ids of sentences containing every entity as a contiguous word phrase.
pub fn scan(sentences: &[String], entities: &[&str]) -> Vec<u32> {
    sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            let t = words(s);
            entities.iter().all(|e| contains_phrase(&t, e))
        })
        .map(|(i, _)| i as u32)
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// (entity a, entity b, query text) for every Q1 then Q2 query.
pub fn queries(lin: &str) -> Vec<(String, String, String)> {
    let (e, r) = split_path(lin);
    let surf = |s: &str| s.replace('_', " ");
    let base = |s: &str| s.trim_start_matches('_').replace('_', " ");
    let mut q = Vec::new();
    for i in 0..r.len().saturating_sub(1) {
        for rel in [&r[i], &r[i + 1]] {
            q.push((e[i].clone(), e[i + 2].clone(), format!("{} {} {}", surf(&e[i]), base(rel), surf(&e[i + 2]))));
        }
    }
    for i in 0..r.len() {
        q.push((e[i].clone(), e[i + 1].clone(), format!("{} {}", surf(&e[i]), surf(&e[i + 1]))));
    }
    q
}

/// Union over queries with max similarity, sorted by (similarity desc, id
/// asc), truncated to `k`.
pub fn union_rank(
    lin: &str,
    sentences: &[String],
    embed: &dyn Fn(&str) -> Vec<f64>,
    k: usize,
) -> Vec<(u32, f64)> {
    let mut best: HashMap<u32, f64> = HashMap::new();
    for (a, b, text) in queries(lin) {
        let qv = embed(&text);
        for id in scan(sentences, &[&a, &b]) {
            let sim = cosine(&embed(&sentences[id as usize]), &qv);
            let slot = best.entry(id).or_insert(f64::NEG_INFINITY);
            if sim > *slot {
                *slot = sim;
            }
        }
    }
    let mut v: Vec<(u32, f64)> = best.into_iter().collect();
    v.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    v.truncate(k);
    v
}

pub fn triples(lin: &str) -> Vec<(String, String, String)> {
    let (e, r) = split_path(lin);
    r.iter()
        .enumerate()
        .map(|(i, rel)| match rel.strip_prefix('_') {
            Some(base) => (e[i + 1].clone(), base.to_string(), e[i].clone()),
            None => (e[i].clone(), rel.clone(), e[i + 1].clone()),
        })
        .collect()
}

pub fn bleu1(gen: &str, reference: &str) -> f64 {
    let g = triples(gen);
    let r = triples(reference);
    if g.is_empty() {
        return 0.0;
    }
    let mut matched = 0usize;
    let mut used = vec![false; r.len()];
    for t in &g {
        if let Some(j) = (0..r.len()).find(|&j| !used[j] && r[j] == *t) {
            used[j] = true;
            matched += 1;
        }
    }
    let (c, rl) = (g.len() as f64, r.len() as f64);
    let bp = if c > rl { 1.0 } else { (1.0 - rl / c).exp() };
    matched as f64 / c * bp
}

pub fn diversity(paths: &[&str]) -> f64 {
    let sets: Vec<HashSet<String>> = paths.iter().map(|p| split_path(p).0.into_iter().collect()).collect();
    let mut total = 0.0;
    let mut n = 0.0;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let inter = sets[i].intersection(&sets[j]).count() as f64;
            let uni = sets[i].union(&sets[j]).count() as f64;
            total += 1.0 - inter / uni;
            n += 1.0;
        }
    }
    total / n
}

pub fn novelty(path: &str, train: &HashSet<String>) -> f64 {
    let e = split_path(path).0;
    e.iter().filter(|x| !train.contains(*x)).count() as f64 / e.len() as f64
}

pub fn hits(pred: &[u32], truth: &HashSet<u32>, k: usize) -> u8 {
    pred.iter().take(k).any(|p| truth.contains(p)) as u8
}

pub fn recall(pred: &[u32], truth: &HashSet<u32>, k: usize) -> f64 {
    let top: HashSet<&u32> = pred.iter().take(k).collect();
    truth.iter().filter(|t| top.contains(t)).count() as f64 / truth.len() as f64
}
