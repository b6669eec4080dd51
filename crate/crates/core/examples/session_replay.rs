//! Save a session dump, load it back and re-run the question against a
//! provider that replays the recorded completions.
//!
//!     cargo run -p memgrow --example session_replay

use std::sync::Arc;

use memgrow::agent::{run, AgentConfig, AnswerFormat, Services, Session};
use memgrow::corpus::{ingest, Document};
use memgrow::embedding::{EmbeddedIndex, Embedder, HashEmbedder};
use memgrow::llm::{MockChatProvider, MockScenario};
use memgrow::seeds::RuleTagger;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).expect("fixture")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let documents: Vec<Document> = fixture("toy_docs.jsonl")
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let embedder = Embedder::new(Arc::new(HashEmbedder::new(256)));
    let index = EmbeddedIndex::build(&ingest(&documents, 256)?, &embedder)?;
    let question = "Alice David is the voice of Lara Croft in a video game developed by which company?";
    let config = AgentConfig::default();

    let scripted = MockChatProvider::new(MockScenario::from_json(&fixture("two_rounds.json"))?);
    let services = Services { index: &index, embedder: &embedder, tagger: &RuleTagger, llm: &scripted };
    let original = run(question, &AnswerFormat::Qa, &config, &services)?;
    let dump = original.to_json();
    println!("session dump: {} bytes, {} model calls", dump.len(), original.calls.len());

    let loaded = Session::from_json(&dump)?;
    let replay = loaded.replay_provider();
    let services = Services { index: &index, embedder: &embedder, tagger: &RuleTagger, llm: &replay };
    let again = run(question, &AnswerFormat::Qa, &config, &services)?;
    println!("replayed answer: {}", again.answer.as_deref().unwrap_or(""));
    println!("identical dump: {}", again.to_json() == dump);

    let debug = loaded.path_debug();
    println!("path {:?} objective {:.4}", debug.path.fragment_ids(), debug.path.objective);
    Ok(())
}
