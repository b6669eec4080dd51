//! Tag search queries with the rule tagger and group the tokens into the
//! four seed categories.
//!
//!     cargo run -p memgrow --example seeds

use memgrow::query::Query;
use memgrow::seeds::{extract_seeds, tag, RuleTagger, SeedCategory};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let queries = [
        "Alice David Lara Croft voice",
        "which company developed Tomb Raider Underworld",
        "she quickly ran home in 1999",
    ];
    for (round, text) in queries.iter().enumerate() {
        let query = Query::search(*text, round as u32 + 1);
        let tagged = tag(&query, &RuleTagger)?;
        let tags: Vec<String> = tagged.iter().map(|t| format!("{}/{:?}", t.surface, t.pos)).collect();
        println!("{text}\n  {}", tags.join(" "));
        let seeds = extract_seeds(&query, &RuleTagger)?;
        for category in SeedCategory::ALL {
            let tokens = seeds.get(category);
            if !tokens.is_empty() {
                println!("  {:<18} {}", category.label(), tokens.join(", "));
            }
        }
        println!("  non-empty categories: {}", seeds.l_r());
    }
    Ok(())
}
