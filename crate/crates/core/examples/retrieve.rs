//! Embed a toy corpus with the hashing embedder and run top-k retrieval.
//! A second pass over the same texts is served from the embedding cache.
//!
//!     cargo run -p memgrow --example retrieve

use std::sync::Arc;

use memgrow::corpus::{ingest, Document};
use memgrow::embedding::{retrieve, EmbeddedIndex, Embedder, HashEmbedder};
use memgrow::query::Query;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy_docs.jsonl");
    let documents: Vec<Document> = std::fs::read_to_string(fixtures)?
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let collection = ingest(&documents, 256)?;

    let embedder = Embedder::new(Arc::new(HashEmbedder::new(256)));
    let index = EmbeddedIndex::build(&collection, &embedder)?;

    for text in ["which company developed Tomb Raider Underworld", "tower in Paris"] {
        let batch = retrieve(&Query::search(text, 1), &index, &embedder, 3)?;
        println!("{text}");
        for hit in &batch.hits {
            println!("  {:.4}  {}", hit.score, hit.chunk_id);
        }
    }

    EmbeddedIndex::build(&collection, &embedder)?;
    let stats = embedder.stats();
    println!("cache: {} hits, {} misses, {} provider calls", stats.hits, stats.misses, stats.provider_calls);
    Ok(())
}
