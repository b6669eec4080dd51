//! Ask one question against any OpenAI-compatible chat endpoint. Embeddings
//! use an embeddings endpoint when `MEMGROW_EMBED_URL` is set and the hashing
//! embedder otherwise.
//!
//!     MEMGROW_LIVE_LLM_URL=http://localhost:8000/v1/chat/completions \
//!     MEMGROW_LIVE_LLM_MODEL=qwen2.5-7b-instruct \
//!     cargo run -p memgrow --example live_openai
//!
//! Keys are read from `MEMGROW_LLM_KEY` and `MEMGROW_EMBED_KEY`.

use std::env;
use std::sync::Arc;

use memgrow::agent::{run, AgentConfig, AnswerFormat, Services};
use memgrow::config::{EMBED_KEY_ENV, LLM_KEY_ENV};
use memgrow::corpus::{documents_from_plain_text, ingest};
use memgrow::embedding::{EmbeddedIndex, Embedder, EmbeddingProvider, HashEmbedder, HttpEmbeddingProvider};
use memgrow::llm::HttpChatProvider;
use memgrow::seeds::RuleTagger;
use memgrow::transport::RetryPolicy;

const CORPUS: &str = "\
Alice David is a French actress and voice artist. She is the voice of Lara Croft in the video game Tomb Raider: Underworld.

Tomb Raider: Underworld is an action-adventure video game developed by Crystal Dynamics and published by Eidos Interactive in 2008.

Crystal Dynamics is an American video game developer based in San Mateo, California.";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Ok(url) = env::var("MEMGROW_LIVE_LLM_URL") else {
        println!("MEMGROW_LIVE_LLM_URL is not set; nothing to do");
        return Ok(());
    };
    let model = env::var("MEMGROW_LIVE_LLM_MODEL").unwrap_or_else(|_| "default".into());
    let llm = HttpChatProvider::new(&url, &model, env::var(LLM_KEY_ENV).ok(), RetryPolicy::default()).with_max_tokens(1024);
    let provider: Arc<dyn EmbeddingProvider> = match env::var("MEMGROW_EMBED_URL") {
        Ok(embed_url) => {
            let embed_model = env::var("MEMGROW_EMBED_MODEL").unwrap_or_else(|_| "bge-m3".into());
            Arc::new(HttpEmbeddingProvider::new(&embed_url, &embed_model, env::var(EMBED_KEY_ENV).ok(), RetryPolicy::default()))
        }
        Err(_) => Arc::new(HashEmbedder::new(256)),
    };
    let embedder = Embedder::new(provider);
    let index = EmbeddedIndex::build(&ingest(&documents_from_plain_text(CORPUS, "p"), 256)?, &embedder)?;
    let services = Services { index: &index, embedder: &embedder, tagger: &RuleTagger, llm: &llm };
    let question = "Alice David is the voice of Lara Croft in a video game developed by which company?";
    let session = run(question, &AnswerFormat::Qa, &AgentConfig::default(), &services)?;
    for round in &session.rounds {
        println!("round {}: {}", round.round, round.query);
    }
    if let Some(failure) = &session.failure {
        println!("failed: {:?} {}", failure.kind, failure.message);
    }
    println!("answer: {}", session.answer.as_deref().unwrap_or(""));
    println!("tokens: {}", session.token_ledger.total());
    Ok(())
}
