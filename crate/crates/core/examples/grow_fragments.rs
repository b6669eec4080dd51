//! Grow memory fragments from retrieved text with a scripted model reply.
//!
//!     cargo run -p memgrow --example grow_fragments

use std::sync::Arc;

use memgrow::embedding::{Embedder, HashEmbedder};
use memgrow::grower::{grow, growth_prompt, GrowthRequest};
use memgrow::llm::{MockChatProvider, MockRule, MockScenario};
use memgrow::prompts::GROWTH_INSTRUCTION;
use memgrow::query::Query;
use memgrow::seeds::{extract_seeds, RuleTagger};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let query = Query::search("which company developed Tomb Raider Underworld", 1);
    let seeds = extract_seeds(&query, &RuleTagger)?;
    let request = GrowthRequest {
        seeds: &seeds,
        documents: vec![
            "Tomb Raider: Underworld is an action-adventure video game developed by Crystal Dynamics \
             and published by Eidos Interactive in November 2008."
                .to_string(),
        ],
        query: &query,
        instruction: GROWTH_INSTRUCTION,
    };
    println!("--- growth prompt (tail) ---");
    let prompt = growth_prompt(&request)?;
    let tail: Vec<&str> = prompt.lines().skip(3).take(4).collect();
    println!("{}", tail.join("\n"));

    let llm = MockChatProvider::new(MockScenario {
        rules: vec![MockRule::new(
            "Query:",
            "- subjects: [Tomb Raider: Underworld is an action-adventure video game]\n\
             - actions: [developed by Crystal Dynamics]\n\
             - temporal markers: [in November 2008]\n\
             - degree modifiers: []",
        )],
    });
    let embedder = Embedder::new(Arc::new(HashEmbedder::new(128)));
    let outcome = grow(&request, &llm, &embedder, 0.0)?;
    println!("--- fragments ---");
    for f in &outcome.fragments {
        println!(
            "{}  {:<18} rel={:.3}  {}",
            f.fragment_id,
            f.category.label(),
            f.own_query_relevance,
            f.text
        );
    }
    Ok(())
}
