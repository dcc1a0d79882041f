use std::collections::{BTreeMap, HashMap, HashSet};

use anyhow::{anyhow, Context, Result};
use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use kgpath_core::corpus::{self, CorpusFormat, CorpusIndex};
use kgpath_core::embed::{Embedder, HashedTfIdf, PrecomputedEmbedder, DEFAULT_DIMENSION};
use kgpath_core::generate::{
    self, DecodeConfig, DecodedRecord, Interpolation, ReferenceModel, Strategy, DEFAULT_BETA, DEFAULT_DIVERSE_K,
    DEFAULT_TOP_P,
};
use kgpath_core::kg::{self, SamplingConfig, DEFAULT_BANNED_RELATIONS, DEFAULT_MAX_HOPS, DEFAULT_MIN_HOPS};
use kgpath_core::metrics::{self, EvalReport};
use kgpath_core::pairing::{self, PairRecord, PairingConfig, Templates, DEFAULT_K_PRIME, DEFAULT_P_MASK};
use kgpath_core::qafuse::{self, AttentionScorer, QaExample, QaRecord, TrainConfig, DEFAULT_HIDDEN};
use kgpath_core::{seeding, Entity, Path};

use crate::error::UsageError;
use crate::files::{self, read_jsonl, read_lines, write_jsonl, Staged};
use crate::settings::Settings;
use crate::{
    AuditArgs, BuildIndexArgs, EvaluateArgs, GenerateArgs, Globals, MakePairsArgs, QaEvalArgs, QaTrainArgs,
    SamplePathsArgs, TrainGenArgs,
};

/// Prints the effective configuration; every command calls this once all
/// its settings are resolved and before doing any work.
fn begin(s: &Settings) {
    eprint!("{}", s.render());
    for k in s.unused() {
        warn!("config key `{k}` is not used by this subcommand");
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses a string-valued flag into its typed form.
fn parse_flag<T>(name: &str, raw: Option<&str>) -> Result<Option<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    raw.map(|r| r.parse::<T>().map_err(|e| usage(format!("--{name} `{r}`: {e}"))))
        .transpose()
}

pub fn build_index(a: &BuildIndexArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let input = s.required("corpus", a.corpus.clone())?;
    let out = s.required("out", a.out.clone())?;
    let format = s.value::<CorpusFormat>("format", parse_flag("format", a.format.as_deref())?, CorpusFormat::Auto)?;
    begin(s);

    let (index, report) = corpus::build_index(files::open(&input)?, format).with_context(|| format!("indexing {input}"))?;
    let mut staged = Staged::default();
    staged.write(Some(&out), |w| Ok(index.save(w, g.created_unix)?))?;
    staged.commit()?;
    eprintln!("indexed {} sentences, {} terms -> {out}", report.sentences, report.terms);
    Ok(())
}

pub fn sample_paths(a: &SamplePathsArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let kg_file = s.required("kg", a.kg.clone())?;
    let out = s.optional("out", a.out.clone())?;
    let count = s.value("count", a.count, SamplingConfig::default().count)?;
    let min_hops = s.value("min-hops", a.min_hops, DEFAULT_MIN_HOPS)?;
    let max_hops = s.value("max-hops", a.max_hops, DEFAULT_MAX_HOPS)?;
    let banned = s.value("banned", a.banned.clone(), DEFAULT_BANNED_RELATIONS.join(","))?;
    begin(s);

    let (graph, load) = kg::load_kg(files::open(&kg_file)?).with_context(|| format!("loading {kg_file}"))?;
    let config = SamplingConfig {
        count,
        min_hops,
        max_hops,
        seed: seeding::stage(g.seed, "sample"),
        banned: banned
            .split(',')
            .map(kg::normalize_name)
            .filter(|b| !b.is_empty())
            .collect(),
    };
    let paths = kg::sample_paths(&graph, &config)?;
    if paths.len() < count {
        warn!("only {} distinct paths found within the attempt budget (asked for {count})", paths.len());
    }
    let mut staged = Staged::default();
    staged.write(out.as_deref(), |w| {
        for p in &paths {
            writeln!(w, "{p}")?;
        }
        Ok(())
    })?;
    staged.commit()?;
    eprintln!(
        "sampled {} paths from {} entities / {} edges -> {}",
        paths.len(),
        load.entities,
        load.edges,
        out.as_deref().unwrap_or("stdout")
    );
    Ok(())
}

fn read_paths(file: &str) -> Result<Vec<Path>> {
    read_lines(file)?
        .into_iter()
        .map(|(n, line)| Path::parse(&line).with_context(|| format!("{file}:{n}: bad path")))
        .collect()
}

fn load_index(file: &str) -> Result<CorpusIndex> {
    CorpusIndex::load(files::open(file)?).with_context(|| format!("loading index {file}"))
}

pub fn make_pairs(a: &MakePairsArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let paths_file = s.required("paths", a.paths.clone())?;
    let index_file = s.required("index", a.index.clone())?;
    let out = s.required("out", a.out.clone())?;
    let embeddings = s.optional("embeddings", a.embeddings.clone())?;
    let dim = s.value("dim", a.dim, DEFAULT_DIMENSION)?;
    let k_prime = s.value("k-prime", a.k_prime, DEFAULT_K_PRIME)?;
    let p_mask = s.value("p-mask", a.p_mask, DEFAULT_P_MASK)?;
    let templates = s.value::<Templates>("templates", parse_flag("templates", a.templates.as_deref())?, Templates::Both)?;
    let cap = s.value("cap", a.cap, corpus::DEFAULT_RETRIEVAL_CAP)?;
    let test_out = s.optional("test-out", a.test_out.clone())?;
    let test_fraction = match &test_out {
        Some(_) => s.value("test-fraction", a.test_fraction, 0.2)?,
        None => 0.0,
    };
    begin(s);
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(usage(format!("--test-fraction must lie in [0, 1), got {test_fraction}")));
    }

    let paths = read_paths(&paths_file)?;
    let index = load_index(&index_file)?;
    let precomputed = match &embeddings {
        Some(f) => Some(PrecomputedEmbedder::load(files::open(f)?).with_context(|| format!("loading {f}"))?),
        None => None,
    };
    let hashed;
    let embedder: &dyn Embedder = match &precomputed {
        Some(p) => p,
        None => {
            hashed = HashedTfIdf::fit(&index, dim);
            &hashed
        }
    };
    let config = PairingConfig {
        k_prime,
        p_mask,
        templates,
        retrieval_cap: cap,
        seed: g.seed,
    };
    let (pairs, report) = pairing::build_pairs(&paths, &index, embedder, &config)?;

    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.shuffle(&mut seeding::rng(seeding::stage(g.seed, "split"), 0));
    let n_test = (test_fraction * paths.len() as f64).round() as usize;
    let test_paths: HashSet<&Path> = order[..n_test].iter().map(|&i| &paths[i]).collect();
    let (test, train): (Vec<_>, Vec<_>) = pairs.iter().map(|p| p.record()).partition(|r| test_paths.contains(&r.path));

    let mut staged = Staged::default();
    staged.write(Some(&out), |w| write_jsonl(w, &train))?;
    if let Some(t) = &test_out {
        staged.write(Some(t), |w| write_jsonl(w, &test))?;
    }
    staged.commit()?;
    let split = match &test_out {
        Some(t) => format!(", {} held out -> {t}", test.len()),
        None => String::new(),
    };
    eprintln!(
        "paired {} paths ({} without sentences): {} pairs, {} masked; {} -> {out}{split}",
        report.paths, report.paths_skipped, report.pairs, report.masked, train.len()
    );
    if let Some(p) = precomputed.as_ref().filter(|p| p.misses() > 0) {
        warn!("{} texts had no precomputed embedding and embedded to zero", p.misses());
    }
    Ok(())
}

pub fn train_gen(a: &TrainGenArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let pairs_file = s.required("pairs", a.pairs.clone())?;
    let out = s.required("out", a.out.clone())?;
    let lambda = s.value::<Interpolation>("lambda", parse_flag("lambda", a.lambda.as_deref())?, Interpolation::default())?;
    let beta = s.value("beta", a.beta, DEFAULT_BETA)?;
    begin(s);

    let pairs: Vec<PairRecord> = read_jsonl(&pairs_file)?;
    let model = ReferenceModel::train(&pairs, lambda, beta)?;
    let mut staged = Staged::default();
    staged.write(Some(&out), |w| Ok(model.save(w, g.created_unix)?))?;
    staged.commit()?;
    eprintln!(
        "trained on {} pairs: {} tokens, min hops {} -> {out}",
        pairs.len(),
        generate::PathGenerator::vocabulary(&model).len(),
        model.min_hops()
    );
    Ok(())
}

/// Sentences from plain lines or JSONL objects with a `sentence` (or
/// `text`) field, deduplicated in first-seen order.
fn read_sentences(file: &str) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in read_lines(file)? {
        let text = if line.starts_with('{') {
            let v: serde_json::Value =
                serde_json::from_str(&line).with_context(|| format!("{file}:{n}: malformed JSON"))?;
            v.get("sentence")
                .or_else(|| v.get("text"))
                .and_then(|t| t.as_str())
                .ok_or_else(|| anyhow!("{file}:{n}: no `sentence` field"))?
                .to_string()
        } else {
            line
        };
        if seen.insert(text.clone()) {
            out.push(text);
        }
    }
    Ok(out)
}

pub fn generate(a: &GenerateArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let model_file = s.required("model", a.model.clone())?;
    let input = s.required("input", a.input.clone())?;
    let out = s.optional("out", a.out.clone())?;
    let strategy = s.value("strategy", a.strategy.clone(), "all".to_string())?;
    let k = s.value("k", a.k, DEFAULT_DIVERSE_K)?;
    let top_p = s.value("top-p", a.top_p, DEFAULT_TOP_P)?;
    let max_hops = s.value("max-hops", a.max_hops, DEFAULT_MAX_HOPS)?;
    begin(s);
    let strategies: Vec<Strategy> = if strategy.eq_ignore_ascii_case("all") {
        Strategy::ALL.to_vec()
    } else {
        vec![parse_flag("strategy", Some(&strategy))?.expect("present")]
    };

    let model = ReferenceModel::load(files::open(&model_file)?).with_context(|| format!("loading {model_file}"))?;
    let sentences = read_sentences(&input)?;
    let decode_seed = seeding::stage(g.seed, "decode");
    let mut records = Vec::with_capacity(sentences.len() * strategies.len());
    for &st in &strategies {
        let batch: Vec<DecodedRecord> = sentences
            .par_iter()
            .enumerate()
            .map(|(i, sentence)| {
                let cfg = DecodeConfig {
                    k,
                    top_p,
                    max_hops,
                    seed: seeding::derive(decode_seed, i as u64),
                };
                generate::decode(&model, sentence, st, &cfg).map(|paths| DecodedRecord {
                    sentence: sentence.clone(),
                    strategy: st,
                    paths,
                })
            })
            .collect::<Result<_, _>>()?;
        records.extend(batch);
    }
    let mut staged = Staged::default();
    staged.write(out.as_deref(), |w| write_jsonl(w, &records))?;
    staged.commit()?;
    let total: usize = records.iter().map(|r| r.paths.len()).sum();
    let names: Vec<&str> = strategies.iter().map(|s| s.name()).collect();
    eprintln!(
        "decoded {} sentences with {} ({total} paths) -> {}",
        sentences.len(),
        names.join(","),
        out.as_deref().unwrap_or("stdout")
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluationFile<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
    reports: &'a [EvalReport],
}

pub fn evaluate(a: &EvaluateArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let pred = s.required("pred", a.pred.clone())?;
    let reference = s.required("ref", a.reference.clone())?;
    let train = s.optional("train", a.train.clone())?;
    let out = s.optional("out", a.out.clone())?;
    begin(s);

    let refs: Vec<PairRecord> = read_jsonl(&reference)?;
    let mut by_sentence: HashMap<&str, Vec<Path>> = HashMap::new();
    for r in &refs {
        by_sentence.entry(r.sentence.as_str()).or_default().push(r.path.clone());
    }
    let training_entities: Option<HashSet<Entity>> = match &train {
        Some(f) => Some(
            read_jsonl::<PairRecord>(f)?
                .into_iter()
                .flat_map(|r| r.path.entities().to_vec())
                .collect(),
        ),
        None => None,
    };
    let preds: Vec<DecodedRecord> = read_jsonl(&pred)?;
    let mut groups: Vec<(Strategy, Vec<&DecodedRecord>)> = Vec::new();
    for p in &preds {
        match groups.iter_mut().find(|(st, _)| *st == p.strategy) {
            Some((_, v)) => v.push(p),
            None => groups.push((p.strategy, vec![p])),
        }
    }
    let mut reports = Vec::with_capacity(groups.len());
    for (strategy, recs) in &groups {
        let mut scores = Vec::with_capacity(recs.len());
        for r in recs {
            let refs = by_sentence
                .get(r.sentence.as_str())
                .ok_or_else(|| anyhow!("predicted sentence has no reference pair: {:?}", r.sentence))?;
            scores.push(metrics::score_sample(&r.sentence, &r.paths, refs, training_entities.as_ref()));
        }
        reports.push(metrics::aggregate(strategy.name(), scores));
    }
    let mut staged = Staged::default();
    if let Some(o) = &out {
        staged.write(Some(o), |w| {
            serde_json::to_writer_pretty(&mut *w, &EvaluationFile {
                created_unix: g.created_unix,
                reports: &reports,
            })?;
            Ok(writeln!(w)?)
        })?;
    }
    staged.commit()?;
    print!("{}", metrics::render_table(&reports));
    eprintln!(
        "evaluated {} decoded records over {} strategies against {} reference pairs{}",
        preds.len(),
        reports.len(),
        refs.len(),
        out.map(|o| format!(" -> {o}")).unwrap_or_default()
    );
    Ok(())
}

fn encode_all(records: &[QaRecord], h_d: usize, h_e: usize, file: &str) -> Result<Vec<QaExample>> {
    let q = HashedTfIdf::new(h_e);
    let p = HashedTfIdf::new(h_d);
    records
        .iter()
        .enumerate()
        .map(|(i, r)| qafuse::encode_record(r, &q, &p).map_err(|e| anyhow!("{file}: example {}: {e}", i + 1)))
        .collect()
}

pub fn qa_train(a: &QaTrainArgs, s: &mut Settings, g: &Globals) -> Result<()> {
    let data = s.required("data", a.data.clone())?;
    let out = s.required("out", a.out.clone())?;
    let h_d = s.value("hidden-d", a.hidden_d, DEFAULT_HIDDEN)?;
    let h_e = s.value("hidden-e", a.hidden_e, DEFAULT_HIDDEN)?;
    let defaults = TrainConfig::default();
    let lr = s.value("lr", a.lr, defaults.lr)?;
    let epochs = s.value("epochs", a.epochs, defaults.epochs)?;
    let line_search = s.switch("line-search", a.line_search)?;
    let no_bias = s.switch("no-bias", a.no_bias)?;
    begin(s);
    if h_d == 0 || h_e == 0 {
        return Err(usage("hidden sizes must be positive"));
    }

    let records: Vec<QaRecord> = read_jsonl(&data)?;
    let examples = encode_all(&records, h_d, h_e, &data)?;
    let mut scorer = AttentionScorer::new(h_d, h_e, seeding::stage(g.seed, "qa-init"));
    if no_bias {
        scorer = scorer.without_bias();
    }
    let history = scorer.train(&examples, &TrainConfig { lr, epochs, line_search })?;
    let accuracy = scorer.accuracy(&examples)?;
    let mut staged = Staged::default();
    staged.write(Some(&out), |w| Ok(scorer.save(w)?))?;
    staged.commit()?;
    let first = history.losses.first().copied().unwrap_or(f64::NAN);
    let last = history.losses.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "trained scorer on {} examples for {epochs} epochs: loss {first:.4} -> {last:.4}, train accuracy {accuracy:.4} -> {out}",
        examples.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct QaPrediction<'a> {
    question: &'a str,
    probabilities: Vec<f64>,
    predicted: usize,
    gold: usize,
}

pub fn qa_eval(a: &QaEvalArgs, s: &mut Settings, _g: &Globals) -> Result<()> {
    let data = s.required("data", a.data.clone())?;
    let scorer_file = s.required("scorer", a.scorer.clone())?;
    let out = s.optional("out", a.out.clone())?;
    begin(s);

    let scorer = AttentionScorer::load(files::open(&scorer_file)?).with_context(|| format!("loading {scorer_file}"))?;
    let records: Vec<QaRecord> = read_jsonl(&data)?;
    let examples = encode_all(&records, scorer.h_d(), scorer.h_e(), &data)?;
    let mut predictions = Vec::with_capacity(examples.len());
    for (r, ex) in records.iter().zip(&examples) {
        predictions.push(QaPrediction {
            question: &r.question,
            probabilities: scorer.score_choices(&ex.choices)?.to_vec(),
            predicted: scorer.predict(ex)?,
            gold: ex.gold,
        });
    }
    let accuracy = scorer.accuracy(&examples)?;
    let mut staged = Staged::default();
    if let Some(o) = &out {
        staged.write(Some(o), |w| write_jsonl(w, &predictions))?;
    }
    staged.commit()?;
    eprintln!("accuracy {accuracy:.4} over {} examples", examples.len());
    Ok(())
}

#[derive(Serialize)]
struct AuditReport {
    pairs: usize,
    pair_similarity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    questions: Option<usize>,
    /// n-gram order -> mean best overlap.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    leakage: BTreeMap<usize, f64>,
}

fn read_questions(file: &str) -> Result<Vec<String>> {
    read_lines(file)?
        .into_iter()
        .map(|(n, line)| {
            if !line.starts_with('{') {
                return Ok(line);
            }
            let v: serde_json::Value =
                serde_json::from_str(&line).with_context(|| format!("{file}:{n}: malformed JSON"))?;
            v.get("question")
                .or_else(|| v.get("sentence"))
                .and_then(|q| q.as_str())
                .map(str::to_string)
                .ok_or_else(|| anyhow!("{file}:{n}: no `question` or `sentence` field"))
        })
        .collect()
}

pub fn audit(a: &AuditArgs, s: &mut Settings, _g: &Globals) -> Result<()> {
    let pairs_file = s.required("pairs", a.pairs.clone())?;
    let questions_file = s.optional("questions", a.questions.clone())?;
    let index_file = s.optional("index", a.index.clone())?;
    let dim = s.value("dim", a.dim, DEFAULT_DIMENSION)?;
    let max_n = s.value("max-n", a.max_n, 4usize)?;
    let out = s.optional("out", a.out.clone())?;
    begin(s);

    let pairs: Vec<PairRecord> = read_jsonl(&pairs_file)?;
    let index = match &index_file {
        Some(f) => load_index(f)?,
        None => CorpusIndex::from_texts(pairs.iter().map(|p| p.sentence.as_str())),
    };
    let embedder = HashedTfIdf::fit(&index, dim);
    let pair_similarity = pairing::pair_similarity_audit(&pairs, &embedder)?;
    let mut leakage = BTreeMap::new();
    let mut questions = None;
    if let Some(f) = &questions_file {
        let qs = read_questions(f)?;
        let train: Vec<&str> = pairs.iter().map(|p| p.sentence.as_str()).collect();
        for n in 1..=max_n {
            leakage.insert(n, pairing::ngram_leakage(&qs, &train, n)?);
        }
        questions = Some(qs.len());
    }
    let report = AuditReport {
        pairs: pairs.len(),
        pair_similarity,
        questions,
        leakage,
    };
    let mut staged = Staged::default();
    staged.write(out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        Ok(writeln!(w)?)
    })?;
    staged.commit()?;
    eprintln!(
        "audited {} pairs: mean pair similarity {pair_similarity:.4}{}",
        pairs.len(),
        match questions {
            Some(q) => format!(", leakage over {q} questions for n=1..{max_n}"),
            None => String::new(),
        }
    );
    Ok(())
}
