mod common;

use std::collections::HashMap;
use std::sync::Arc;

use common::{ref_best_objective, ref_cosine};
use memgrow::corpus::{ingest, join, tokenize, Document};
use memgrow::embedding::{cosine, EmbeddedIndex, Embedder, EmbeddingVector, ScenarioEmbedder};
use memgrow::grower::parse_fragments;
use memgrow::memory::{build_path, filter_region, score, PathCandidate, PathInstance, ScoringConfig};
use memgrow::metrics::{exact_match, qa_f1, rouge_l, Language};
use memgrow::prompts::render;
use memgrow::query::Query;
use memgrow::seeds::{extract_seeds, RuleTagger, SeedCategory};
use proptest::prelude::*;

fn text_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            "[a-zA-Z]{1,8}",
            "[0-9]{1,4}",
            Just("北京".to_string()),
            Just("東京。".to_string()),
            "[.,;:!?()%-]",
            Just("don't".to_string()),
        ],
        0..40,
    )
    .prop_flat_map(|words| {
        let n = words.len();
        (Just(words), prop::collection::vec(prop_oneof![Just(" "), Just("  "), Just("\n"), Just("")], n))
    })
    .prop_map(|(words, seps)| words.iter().zip(seps).map(|(w, s)| format!("{w}{s}")).collect())
}

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn join_then_tokenize_is_identity(text in text_strategy()) {
        let tokens = tokenize(&text);
        prop_assert_eq!(tokenize(&join(&tokens)), tokens.clone());
        prop_assert!(tokens.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
    }

    #[test]
    fn chunks_partition_document_tokens(texts in prop::collection::vec(text_strategy(), 1..5), size in 1usize..50) {
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), format!("word {t}")))
            .collect();
        let collection = ingest(&docs, size).unwrap();
        for doc in &docs {
            let rebuilt: Vec<String> = collection.document_chunks(&doc.doc_id).flat_map(|c| tokenize(&c.text)).collect();
            prop_assert_eq!(rebuilt, tokenize(&doc.text));
        }
        prop_assert!(collection.chunks().iter().all(|c| c.tokens >= 1 && c.tokens <= size));
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(u in unit_vec(6), v in unit_vec(6)) {
        let a = EmbeddingVector::unit(u.clone()).unwrap();
        let b = EmbeddingVector::unit(v.clone()).unwrap();
        let ab = cosine(&a, &b).unwrap();
        prop_assert_eq!(ab, cosine(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - ref_cosine(&u, &v)).abs() < 1e-12);
    }

    #[test]
    fn retrieval_matches_brute_force_and_nests(
        vectors in prop::collection::vec(unit_vec(3), 1..9),
        query in unit_vec(3),
        k in 1usize..10,
    ) {
        let mut map = HashMap::new();
        let docs: Vec<Document> = (0..vectors.len()).map(|i| Document::new(format!("d{i}"), format!("text{i}"))).collect();
        for (i, v) in vectors.iter().enumerate() {
            map.insert(format!("text{i}"), v.clone());
        }
        map.insert("the query".to_string(), query.clone());
        let embedder = Embedder::new(Arc::new(ScenarioEmbedder::new(map, None)));
        let index = EmbeddedIndex::build(&ingest(&docs, 8).unwrap(), &embedder).unwrap();
        let q = Query::original("the query");
        let qv = embedder.embed("the query").unwrap();

        let mut expected: Vec<(String, f64)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("d{i}#0"), ref_cosine(v, &query)))
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let batch = index.search(&q, &qv, k).unwrap();
        prop_assert_eq!(batch.hits.len(), k.min(vectors.len()));
        for (hit, (id, s)) in batch.hits.iter().zip(&expected) {
            prop_assert!((hit.score - s).abs() < 1e-12);
            // equal scores may order either way only if they are within rounding
            if &hit.chunk_id != id {
                let theirs = expected.iter().find(|e| e.0 == hit.chunk_id).unwrap().1;
                prop_assert!((theirs - s).abs() < 1e-12);
            }
        }
        let longer = index.search(&q, &qv, k + 1).unwrap();
        prop_assert_eq!(&longer.hits[..batch.hits.len()], &batch.hits[..]);
    }

    #[test]
    fn seeds_come_from_query_tokens(words in prop::collection::vec("[a-zA-Z]{1,9}|[0-9]{4}", 1..12)) {
        let text = words.join(" ");
        let seeds = extract_seeds(&Query::search(text.clone(), 1), &RuleTagger).unwrap();
        let tokens = tokenize(&text);
        let mut nonempty = 0;
        for category in SeedCategory::ALL {
            let items = seeds.get(category);
            if !items.is_empty() {
                nonempty += 1;
            }
            prop_assert!(items.iter().all(|s| tokens.contains(s)));
        }
        prop_assert_eq!(seeds.l_r(), nonempty);
        prop_assert_eq!(seeds.query_round, 1);
    }

    #[test]
    fn metric_ranges_and_identities(pred in text_strategy(), gold in text_strategy()) {
        for lang in [Language::En, Language::Zh] {
            let golds = vec![gold.clone()];
            let f1 = qa_f1(&pred, &golds, lang);
            let em = exact_match(&pred, &golds, lang);
            let rl = rouge_l(&pred, &golds, lang);
            prop_assert!((0.0..=1.0).contains(&f1) && (0.0..=1.0).contains(&rl));
            prop_assert!(em == 0.0 || em == 1.0);
            if em == 1.0 {
                prop_assert_eq!(f1, 1.0);
            }
            prop_assert_eq!(rouge_l(&gold, &golds, lang), 1.0);
            prop_assert!((f1 - qa_f1(&gold, std::slice::from_ref(&pred), lang)).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_combine_and_regions_filter(
        vectors in prop::collection::vec(unit_vec(4), 1..7),
        relevances in prop::collection::vec(0.0f64..1.0, 7),
        query in unit_vec(4),
        tau_r in -0.5f64..0.8,
        k_max in 1usize..6,
    ) {
        let fragments: Vec<_> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| common::fragment(&format!("f{i}"), 1 + i as u32 % 3, relevances[i], v.clone()))
            .collect();
        let config = ScoringConfig { tau_r, k_max, ..ScoringConfig::default() };
        let q = EmbeddingVector::unit(query).unwrap();
        let scores = score(&fragments, &q, &config).unwrap();
        for s in &scores {
            prop_assert!((s.c - (config.alpha * s.c_rel + config.beta * s.c_bp)).abs() < 1e-12);
            prop_assert!(s.c_bp.abs() <= 1.0 + 1e-12);
        }
        let region = filter_region(&scores, &config);
        let path = build_path(&region, &fragments, &scores, &config).unwrap();
        prop_assert_eq!(path.len(), k_max.min(region.members.len()));
        let mut ids: Vec<&str> = path.fragment_ids();
        prop_assert!(ids.iter().all(|id| region.members.iter().any(|m| m == id)));
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), path.len());
    }

    #[test]
    fn greedy_never_beats_exhaustive(
        cs in prop::collection::vec(0.0f64..1.0, 1..6),
        seed in any::<u64>(),
        lambda in 0.0f64..3.0,
        k_max in 1usize..6,
    ) {
        let mut rng = common::rng(seed);
        let vectors: Vec<Vec<f64>> = cs.iter().map(|_| common::random_unit(&mut rng, 4)).collect();
        let similarity: Vec<Vec<f64>> = vectors.iter().map(|a| vectors.iter().map(|b| ref_cosine(a, b)).collect()).collect();
        let candidates = cs
            .iter()
            .enumerate()
            .map(|(i, c)| PathCandidate { fragment_id: format!("f{i}"), round: 1, c: *c })
            .collect();
        let inst = PathInstance::new(candidates, similarity.clone());
        let (greedy, _) = inst.greedy(lambda, k_max);
        prop_assert!(ref_best_objective(&cs, &similarity, lambda, k_max) >= greedy.objective - 1e-12);
    }

    #[test]
    fn fragment_parsing_is_total(text in ".{0,200}") {
        for (_, payload) in parse_fragments(&text) {
            prop_assert!(!payload.is_empty());
        }
    }

    #[test]
    fn render_substitutes_every_binding(value in "[a-z {}]{0,12}") {
        let bindings = std::collections::BTreeMap::from([("A", value.clone())]);
        prop_assert_eq!(render("<{A}|{A}>", &bindings).unwrap(), format!("<{value}|{value}>"));
    }
}

#[test]
fn hand_set_toy_index_top3() {
    let points = [(1.0, 0.0), (0.8, 0.6), (0.0, 1.0), (-0.6, 0.8), (-1.0, 0.0)];
    let mut map = HashMap::new();
    let docs: Vec<Document> = points
        .iter()
        .enumerate()
        .map(|(i, (x, y))| {
            map.insert(format!("chunk{i}"), vec![*x, *y]);
            Document::new(format!("c{i}"), format!("chunk{i}"))
        })
        .collect();
    map.insert("q".to_string(), vec![0.6, 0.8]);
    let embedder = Embedder::new(Arc::new(ScenarioEmbedder::new(map, None)));
    let index = EmbeddedIndex::build(&ingest(&docs, 4).unwrap(), &embedder).unwrap();
    let batch = memgrow::embedding::retrieve(&Query::original("q"), &index, &embedder, 3).unwrap();
    let mut brute: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, (x, y))| (i, 0.6 * x + 0.8 * y)).collect();
    brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let expected: Vec<String> = brute[..3].iter().map(|(i, _)| format!("c{i}#0")).collect();
    let got: Vec<String> = batch.hits.iter().map(|h| h.chunk_id.clone()).collect();
    assert_eq!(got, expected);
}
