//! The full search loop against the toy corpus with a scripted model, run
//! once per mode to show what each ablation changes.
//!
//!     cargo run -p memgrow --example deep_search_mock

use std::sync::Arc;

use memgrow::agent::{run, AgentConfig, AnswerFormat, CallPurpose, Mode, Services};
use memgrow::corpus::{ingest, Document};
use memgrow::embedding::{EmbeddedIndex, Embedder, HashEmbedder};
use memgrow::llm::{MockChatProvider, MockScenario};
use memgrow::seeds::RuleTagger;

const QUESTION: &str = "Alice David is the voice of Lara Croft in a video game developed by which company?";

fn fixture(name: &str) -> String {
    let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let documents: Vec<Document> = fixture("toy_docs.jsonl")
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let embedder = Embedder::new(Arc::new(HashEmbedder::new(256)));
    let index = EmbeddedIndex::build(&ingest(&documents, 256)?, &embedder)?;

    for mode in [Mode::Full, Mode::NoRetrace, Mode::NoMemory] {
        // a fresh scripted model per run, since its rules fire once each
        let llm = MockChatProvider::new(MockScenario::from_json(&fixture("two_rounds.json"))?);
        let services = Services {
            index: &index,
            embedder: &embedder,
            tagger: &RuleTagger,
            llm: &llm,
        };
        let config = AgentConfig { mode, ..AgentConfig::default() };
        let session = run(QUESTION, &AnswerFormat::Qa, &config, &services)?;

        println!("== {mode} ==");
        for round in &session.rounds {
            println!("round {} query: {}", round.round, round.query);
            println!("  retrieved: {:?}", round.retrieval.hits.iter().map(|h| &h.chunk_id).collect::<Vec<_>>());
            println!("  fragments: {}", round.fragments.len());
        }
        println!("growth calls: {}", session.calls_for(CallPurpose::Growth));
        if let Some(debug) = &session.retrace {
            println!("memory path: {:?}", debug.path.fragment_ids());
        }
        println!("termination: {:?}", session.termination);
        println!("answer: {}", session.answer.as_deref().unwrap_or(""));
        println!("tokens: {}\n", session.token_ledger.total());
    }
    Ok(())
}
