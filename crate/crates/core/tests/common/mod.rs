//! Shared fixtures and independent reference computations for the
//! integration tests. The references here never call into the scoring or
//! path code they check.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use memgrow::agent::{run, AgentConfig, AnswerFormat, Mode, Services, Session};
use memgrow::corpus::{ingest, Document};
use memgrow::embedding::{EmbeddedIndex, Embedder, EmbeddingVector, HashEmbedder};
use memgrow::grower::MemoryFragment;
use memgrow::llm::{MockChatProvider, MockScenario};
use memgrow::memory::{PathCandidate, PathInstance};
use memgrow::seeds::{RuleTagger, SeedCategory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY_QUESTION: &str = "Alice David is the voice of Lara Croft in a video game developed by which company?";

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_text(name: &str) -> String {
    let path = fixtures().join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn toy_documents() -> Vec<Document> {
    fixture_text("toy_docs.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).expect("toy document"))
        .collect()
}

pub fn hash_embedder() -> Embedder {
    Embedder::new(Arc::new(HashEmbedder::new(256)))
}

pub fn toy_index(embedder: &Embedder) -> EmbeddedIndex {
    let collection = ingest(&toy_documents(), 256).expect("toy corpus");
    EmbeddedIndex::build(&collection, embedder).expect("toy index")
}

pub fn scenario(name: &str) -> MockChatProvider {
    MockChatProvider::new(MockScenario::from_json(&fixture_text(name)).expect("scenario"))
}

/// Runs the toy question from scratch: fresh embedder, index and model.
pub fn run_toy(scenario_name: &str, mode: Mode) -> Session {
    let embedder = hash_embedder();
    let index = toy_index(&embedder);
    let llm = scenario(scenario_name);
    let services = Services {
        index: &index,
        embedder: &embedder,
        tagger: &RuleTagger,
        llm: &llm,
    };
    let config = AgentConfig {
        mode,
        ..AgentConfig::default()
    };
    run(TOY_QUESTION, &AnswerFormat::Qa, &config, &services).expect("agent run")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn fragment(id: &str, round: u32, relevance: f64, values: Vec<f64>) -> MemoryFragment {
    MemoryFragment {
        fragment_id: id.to_string(),
        text: format!("fragment {id}"),
        category: SeedCategory::Subjects,
        round,
        source_query: format!("query {round}"),
        own_query_relevance: relevance,
        embedding: EmbeddingVector::unit(values).expect("finite vector"),
    }
}

/// `n` fragments with random unit embeddings and relevances in [0, 1].
pub fn random_fragments(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<MemoryFragment> {
    (0..n)
        .map(|i| {
            let relevance = rng.random_range(0.0..1.0);
            let round = rng.random_range(1..=5);
            fragment(&format!("f{i}"), round, relevance, random_unit(rng, dim))
        })
        .collect()
}

// ---- reference computations ----

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn ref_cosine(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())).clamp(-1.0, 1.0)
}

/// Straight-line contribution scores: `(c_rel, c_bp, c)` per fragment.
pub fn ref_scores(
    vectors: &[Vec<f64>],
    relevances: &[f64],
    query: &[f64],
    alpha: f64,
    beta: f64,
    tau_s: f64,
) -> Vec<(f64, f64, f64)> {
    let n = vectors.len();
    let mut out = Vec::new();
    for i in 0..n {
        let c_rel = ref_cosine(&vectors[i], query);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..n {
            if j != i {
                let w = if relevances[j] - tau_s > 0.0 { relevances[j] - tau_s } else { 0.0 };
                num += ref_cosine(&vectors[i], &vectors[j]) * w;
                den += w;
            }
        }
        let c_bp = if den > 0.0 { num / den } else { 0.0 };
        out.push((c_rel, c_bp, alpha * c_rel + beta * c_bp));
    }
    out
}

/// Objective of a given ordering: first step weighted 1, then
/// `exp(-lambda * (1 - sim))` against the previous member.
pub fn ref_objective(order: &[usize], c: &[f64], sim: &[Vec<f64>], lambda: f64) -> f64 {
    let mut total = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let mu = if k == 0 { 1.0 } else { (-lambda * (1.0 - sim[order[k - 1]][i])).exp() };
        total += c[i] * mu;
    }
    total
}

/// Best objective over every ordered selection of exactly `min(k_max, n)`
/// members, by plain recursion.
pub fn ref_best_objective(c: &[f64], sim: &[Vec<f64>], lambda: f64, k_max: usize) -> f64 {
    fn go(order: &mut Vec<usize>, used: &mut [bool], len: usize, c: &[f64], sim: &[Vec<f64>], lambda: f64, best: &mut f64) {
        if order.len() == len {
            *best = best.max(ref_objective(order, c, sim, lambda));
            return;
        }
        for i in 0..c.len() {
            if !used[i] {
                used[i] = true;
                order.push(i);
                go(order, used, len, c, sim, lambda, best);
                order.pop();
                used[i] = false;
            }
        }
    }
    let len = k_max.min(c.len());
    if len == 0 {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    go(&mut Vec::new(), &mut vec![false; c.len()], len, c, sim, lambda, &mut best);
    best
}

/// A random path instance whose similarities come from real unit vectors.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PathInstance {
    let vectors: Vec<Vec<f64>> = (0..n).map(|_| random_unit(rng, dim)).collect();
    let candidates = (0..n)
        .map(|i| PathCandidate {
            fragment_id: format!("f{i}"),
            round: rng.random_range(1..=5),
            c: rng.random_range(0.0..1.0),
        })
        .collect();
    let similarity = vectors
        .iter()
        .map(|a| vectors.iter().map(|b| ref_cosine(a, b)).collect())
        .collect();
    PathInstance::new(candidates, similarity)
}

/// The three-fragment hand example.
pub fn abc_instance() -> PathInstance {
    let candidates = [("A", 0.9), ("B", 0.8), ("C", 0.7)]
        .iter()
        .map(|(id, c)| PathCandidate {
            fragment_id: id.to_string(),
            round: 1,
            c: *c,
        })
        .collect();
    let similarity = vec![vec![1.0, 0.9, 0.2], vec![0.9, 1.0, 0.8], vec![0.2, 0.8, 1.0]];
    PathInstance::new(candidates, similarity)
}
