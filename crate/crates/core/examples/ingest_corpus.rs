//! Chunk a few documents into fixed token windows, persist the corpus and
//! load it back.
//!
//!     cargo run -p memgrow --example ingest_corpus

use memgrow::corpus::{ingest, join, load_corpus, save_corpus, tokenize, Document};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let documents = vec![
        Document::new("tower", "The Eiffel Tower is a wrought-iron lattice tower in Paris. It was completed in 1889."),
        Document::new("museum", "北京故宫博物院建立于1925年，位于北京市中心。"),
    ];
    let collection = ingest(&documents, 8)?;
    for chunk in collection.chunks() {
        println!("{:<10} {:>2} tokens  {}", chunk.chunk_id, chunk.tokens, chunk.text);
    }

    // joining every chunk of a document rebuilds its token sequence
    let tokens: Vec<String> = collection
        .document_chunks("tower")
        .flat_map(|c| tokenize(&c.text))
        .collect();
    println!("rebuilt: {}", join(&tokens));

    let dir = tempfile_dir();
    let path = dir.join("corpus.jsonl");
    save_corpus(&collection, &path)?;
    let reloaded = load_corpus(&path)?;
    assert_eq!(reloaded, collection);
    println!(
        "saved and reloaded {} chunks from {} documents ({} tokens)",
        reloaded.len(),
        reloaded.document_count(),
        reloaded.token_count()
    );
    std::fs::remove_dir_all(dir)?;
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("memgrow-ingest-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
