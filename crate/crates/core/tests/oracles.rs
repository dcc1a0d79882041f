mod common;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::BufReader;

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use kgpath_core::corpus::{self, CorpusFormat, CorpusIndex};
use kgpath_core::embed::{Embedder, HashedTfIdf};
use kgpath_core::kg::{self, GraphBuilder, SamplingConfig};
use kgpath_core::metrics;
use kgpath_core::pairing::{self, PairingConfig, Query, QueryKind};
use kgpath_core::qafuse::{AttentionScorer, ChoiceInput, QaExample};
use kgpath_core::{Entity, KnowledgeGraph, Path, Relation};

use common::*;

fn toy_index() -> CorpusIndex {
    let f = fs::File::open(TOY_CORPUS).unwrap();
    corpus::build_index(BufReader::new(f), CorpusFormat::Text).unwrap().0
}

fn toy_kg() -> KnowledgeGraph {
    kg::load_kg(BufReader::new(fs::File::open(TOY_KG).unwrap())).unwrap().0
}

fn toy_paths() -> Vec<Path> {
    let cfg = SamplingConfig {
        count: 100,
        seed: 1,
        ..Default::default()
    };
    kg::sample_paths(&toy_kg(), &cfg).unwrap()
}

#[test]
fn toy_corpus_vocabulary_size() {
    // Counted independently of this crate when the fixture was generated.
    assert_eq!(toy_index().term_count(), 43);
    let mut terms = HashSet::new();
    for line in fs::read_to_string(TOY_CORPUS).unwrap().lines() {
        terms.extend(words(line));
    }
    assert_eq!(terms.len(), 43);
}

#[test]
fn toy_graph_walk_set_is_fully_enumerated() {
    let brute = enumerate_walks(&read_edges(&fs::read_to_string(TOY_KG).unwrap()), 2, 5);
    let got: HashSet<String> = toy_paths().iter().map(|p| p.to_string()).collect();
    assert_eq!(got, brute);
}

#[test]
fn sampling_ignores_thread_count() {
    let kg = toy_kg();
    let cfg = SamplingConfig {
        count: 8,
        seed: 77,
        ..Default::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| kg::sample_paths(&kg, &cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn toy_query_ranking_matches_brute_force() {
    let index = toy_index();
    let emb = HashedTfIdf::fit(&index, 4096);
    let sentences: Vec<String> = index.sentences().iter().map(|s| s.text.clone()).collect();
    let q = Query {
        kind: QueryKind::Q1,
        entities: [Entity::new("violin").unwrap(), Entity::new("guitar").unwrap()],
        relation: Some(Relation::forward("hasproperty").unwrap()),
    };
    let got = pairing::rank_candidates(&index, &emb, &q, usize::MAX).unwrap();
    let qv = emb.embed("violin hasproperty guitar").into_inner();
    let mut want: Vec<(u32, f64)> = scan(&sentences, &["violin", "guitar"])
        .into_iter()
        .map(|id| (id, cosine(&emb.embed(&sentences[id as usize]).into_inner(), &qv)))
        .collect();
    want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    assert!(!want.is_empty());
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.0, w.0);
        assert!((g.1 - w.1).abs() < 1e-12);
    }
}

#[test]
fn pairing_invariants_on_toy_data() {
    let index = toy_index();
    let emb = HashedTfIdf::fit(&index, 1024);
    let paths = toy_paths();
    for p_mask in [0.0, 0.33, 1.0] {
        let cfg = PairingConfig {
            k_prime: 3,
            p_mask,
            seed: 12,
            ..Default::default()
        };
        let (pairs, report) = pairing::build_pairs(&paths, &index, &emb, &cfg).unwrap();
        let mut per_path: HashMap<&Path, Vec<f64>> = HashMap::new();
        for p in &pairs {
            per_path.entry(&p.path).or_default().push(p.similarity);
            let toks = words(&p.sentence);
            for e in &p.query.entities {
                assert!(contains_phrase(&toks, e.as_str()), "{} lacks {e}", p.sentence);
            }
            assert_eq!(p.masked_sentence.is_some(), p.masked_entity.is_some());
            if p_mask == 0.0 {
                assert!(p.masked_sentence.is_none());
            }
            if p_mask == 1.0 {
                assert!(p.masked_sentence.is_some());
            }
        }
        for sims in per_path.values() {
            assert!(sims.len() <= 3);
            assert!(sims.windows(2).all(|w| w[0] >= w[1]));
        }
        assert_eq!(report.pairs, pairs.len());
    }
    let cfg = PairingConfig::default();
    let a = pairing::build_pairs(&paths, &index, &emb, &cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| pairing::build_pairs(&paths, &index, &emb, &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn pair_similarity_audit_extremes() {
    let path = Path::parse("red_car isa vehicle").unwrap();
    let record = |sentence: &str| pairing::PairRecord {
        sentence: sentence.into(),
        masked_sentence: None,
        masked_entity: None,
        path: path.clone(),
        path_entities: path.entities().to_vec(),
        path_relations: vec!["isa".into()],
        similarity: 0.0,
        query_kind: QueryKind::Q2,
    };
    let emb = HashedTfIdf::new(4096);
    let same = pairing::pair_similarity_audit(&[record("red car isa vehicle")], &emb).unwrap();
    assert!((same - 1.0).abs() < 1e-12);
    let disjoint = pairing::pair_similarity_audit(&[record("blue boat")], &emb).unwrap();
    assert_eq!(disjoint, 0.0);
}

#[test]
fn canonical_triples_of_the_violin_path() {
    let p = Path::parse("violin hasproperty strings _hasprerequisite guitar atlocation concert").unwrap();
    let got: Vec<(String, String, String)> = metrics::path_triples(&p)
        .into_iter()
        .map(|t| (t.head.to_string(), t.relation, t.tail.to_string()))
        .collect();
    assert_eq!(got, triples(&p.to_string()));
    assert_eq!(got[1], ("guitar".into(), "hasprerequisite".into(), "strings".into()));
}

#[test]
fn zero_scorer_gradients_agree() {
    let ex = QaExample {
        choices: vec![
            ChoiceInput {
                h_us: Array1::from(vec![0.3, -1.2]),
                h_s: Array2::from_shape_vec((2, 3), vec![1.0, 0.5, -0.2, 0.1, 0.9, 0.4]).unwrap(),
            },
            ChoiceInput {
                h_us: Array1::from(vec![-0.7, 0.2]),
                h_s: Array2::from_shape_vec((1, 3), vec![0.6, -0.3, 0.8]).unwrap(),
            },
        ],
        gold: 1,
    };
    assert!(AttentionScorer::zeros(3, 2).grad_check(&ex, 1e-5).unwrap() <= 1e-4);
}

#[test]
fn identical_choices_give_symmetric_w_gradient() {
    let ci = ChoiceInput {
        h_us: Array1::from(vec![0.4, 0.1, -0.5]),
        h_s: Array2::from_shape_vec((2, 2), vec![0.2, -0.9, 1.1, 0.3]).unwrap(),
    };
    let ex = QaExample {
        choices: vec![ci.clone(), ci.clone(), ci],
        gold: 2,
    };
    let sc = AttentionScorer::new(2, 3, 4);
    assert!(sc.grad_check(&ex, 1e-5).unwrap() <= 1e-4);
    let (_, g) = sc.loss_and_gradients(&ex).unwrap();
    // All probabilities are 1/3, so the per-choice contributions cancel.
    assert!(g.w.iter().all(|x| x.abs() < 1e-12));
}

fn arb_small_graph() -> impl Strategy<Value = Vec<(usize, usize, usize)>> {
    proptest::collection::vec((0..6usize, 0..3usize, 0..6usize), 1..14)
}

fn arb_path() -> impl Strategy<Value = String> {
    (Just(()), 1usize..5, any::<u64>()).prop_map(|(_, hops, bits)| {
        let mut pool: Vec<usize> = (0..8).collect();
        let mut b = bits;
        for i in (1..pool.len()).rev() {
            pool.swap(i, (b % (i as u64 + 1)) as usize);
            b /= i as u64 + 1;
        }
        let mut s = format!("e{}", pool[0]);
        for (j, e) in pool[1..=hops].iter().enumerate() {
            let inv = if (bits >> (j + 40)) & 1 == 1 { "_" } else { "" };
            s.push_str(&format!(" {inv}r{} e{e}", (bits >> (j + 50)) & 1));
        }
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_paths_are_enumerated_walks(edges in arb_small_graph(), seed in any::<u64>()) {
        let names = ["n0", "n1", "n2", "n3", "n4", "n5"];
        let rels = ["r0", "r1", "relatedto"];
        let mut b = GraphBuilder::new();
        let mut raw = Vec::new();
        for &(h, r, t) in &edges {
            if h == t {
                continue;
            }
            b.add_triple(Entity::new(names[h]).unwrap(), rels[r], Entity::new(names[t]).unwrap());
            raw.push((names[h].to_string(), rels[r].to_string(), names[t].to_string()));
        }
        prop_assume!(!raw.is_empty());
        let (graph, _) = b.build();
        let brute = enumerate_walks(&raw, 1, 4);
        let cfg = SamplingConfig { count: 30, min_hops: 1, max_hops: 4, seed, ..Default::default() };
        match kg::sample_paths(&graph, &cfg) {
            Ok(paths) => {
                let distinct: HashSet<String> = paths.iter().map(|p| p.to_string()).collect();
                prop_assert_eq!(distinct.len(), paths.len());
                for p in &distinct {
                    prop_assert!(brute.contains(p), "{} not enumerated", p);
                }
            }
            Err(kg::KgError::Exhausted { .. }) => prop_assert!(brute.is_empty() || brute.len() < 30),
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }

    #[test]
    fn index_search_equals_scan(
        lines in proptest::collection::vec(
            proptest::collection::vec(prop::sample::select(vec!["ice", "Cream", "ice,", "(cream)", "dog", "cat.", "the", "Dog!"]), 0..8),
            1..40,
        ),
        query in proptest::collection::vec(prop::sample::select(vec!["ice_cream", "dog", "cat", "the_dog", "cream"]), 1..3),
    ) {
        let sentences: Vec<String> = lines.iter().map(|w| w.join(" ")).collect();
        let index = CorpusIndex::from_texts(&sentences);
        let ents: Vec<Entity> = query.iter().map(|e| Entity::new(e).unwrap()).collect();
        prop_assert_eq!(index.search_all_entities(&ents, usize::MAX), scan(&sentences, &query));
    }

    #[test]
    fn extraction_counts(lin in arb_path()) {
        let p = Path::parse(&lin).unwrap();
        prop_assert_eq!(pairing::extract_q1(&p).len(), 2 * p.hops().saturating_sub(1));
        prop_assert_eq!(pairing::extract_q2(&p).len(), p.hops());
        let mut got: Vec<String> = pairing::extract_queries(&p, pairing::Templates::Both).iter().map(|q| q.text()).collect();
        let mut want: Vec<String> = queries(&lin).into_iter().map(|q| q.2).collect();
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn bleu_matches_oracle_and_self_is_one(g in arb_path(), r in arb_path()) {
        let (pg, pr) = (Path::parse(&g).unwrap(), Path::parse(&r).unwrap());
        prop_assert!((metrics::relevance_bleu(&pg, &pr) - bleu1(&g, &r)).abs() < 1e-9);
        prop_assert!((metrics::relevance_bleu(&pg, &pg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_matches_oracle_under_permutation(list in proptest::collection::vec(arb_path(), 2..6), rot in 0usize..6) {
        let parsed: Vec<Path> = list.iter().map(|x| Path::parse(x).unwrap()).collect();
        let d = metrics::diversity(&parsed).unwrap();
        let mut rotated = parsed.clone();
        rotated.rotate_left(rot % parsed.len());
        prop_assert!((d - metrics::diversity(&rotated).unwrap()).abs() < 1e-12);
        let refs: Vec<&str> = list.iter().map(String::as_str).collect();
        prop_assert!((d - diversity(&refs)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn novelty_is_monotone(lin in arb_path(), mask in any::<u8>()) {
        let p = Path::parse(&lin).unwrap();
        prop_assert_eq!(metrics::novelty(&p, &HashSet::new()), 1.0);
        let mut train = HashSet::new();
        let mut last = 1.0;
        for i in 0..8 {
            if mask & (1 << i) != 0 {
                train.insert(Entity::new(&format!("e{i}")).unwrap());
            }
            let v = metrics::novelty(&p, &train);
            prop_assert!(v <= last);
            let names: HashSet<String> = train.iter().map(|e| e.to_string()).collect();
            prop_assert!((v - novelty(&lin, &names)).abs() < 1e-12);
            last = v;
        }
    }

    #[test]
    fn hits_and_recall_monotone_in_k(
        pred in proptest::collection::vec(0u32..10, 0..10),
        truth in proptest::collection::hash_set(0u32..10, 1..5),
    ) {
        let mut last = (0u8, 0.0);
        for k in 1..12 {
            let h = metrics::hits_at_k(&pred, &truth, k).unwrap();
            let r = metrics::recall_at_k(&pred, &truth, k).unwrap();
            prop_assert_eq!(h, hits(&pred, &truth, k));
            prop_assert!((r - recall(&pred, &truth, k)).abs() < 1e-12);
            prop_assert!(h >= last.0 && r >= last.1);
            last = (h, r);
        }
    }

    #[test]
    fn choice_scores_follow_permutation(seed in any::<u64>(), rot in 0usize..4) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let choices: Vec<ChoiceInput> = (0..4)
            .map(|_| ChoiceInput {
                h_us: Array1::from_shape_simple_fn(3, || rng.gen_range(-1.0..1.0)),
                h_s: Array2::from_shape_simple_fn((2, 3), || rng.gen_range(-1.0..1.0)),
            })
            .collect();
        let sc = AttentionScorer::new(3, 3, seed);
        let p = sc.score_choices(&choices).unwrap();
        let mut rotated = choices.clone();
        rotated.rotate_left(rot);
        let q = sc.score_choices(&rotated).unwrap();
        for i in 0..4 {
            prop_assert!((q[i] - p[(i + rot) % 4]).abs() < 1e-12);
        }
        prop_assert!((p.sum() - 1.0).abs() < 1e-9);
    }
}
