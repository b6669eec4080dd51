//! Answer metrics on hand-checked pairs, then a small batch evaluation with
//! per-example scripted models.
//!
//!     cargo run -p memgrow --example evaluate

use std::path::PathBuf;
use std::sync::Arc;

use memgrow::agent::AgentConfig;
use memgrow::embedding::{Embedder, HashEmbedder};
use memgrow::eval::{load_dataset, run_eval, EvalEnv, EvalOptions, QaExample};
use memgrow::llm::{ChatProvider, MockChatProvider, MockScenario};
use memgrow::metrics::{exact_match, qa_f1, rouge_l, Language};
use memgrow::seeds::RuleTagger;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = [
        ("Paris France", "Paris", Language::En),
        ("the Golden Gate Bridge", "Golden Gate Bridge", Language::En),
        ("a b c d", "a c d", Language::En),
        ("北京大学", "北京", Language::Zh),
    ];
    println!("{:<24} {:<20} {:>6} {:>6} {:>6}", "prediction", "gold", "F1", "EM", "R-L");
    for (pred, gold, lang) in pairs {
        let golds = [gold.to_string()];
        println!(
            "{pred:<24} {gold:<20} {:>6.3} {:>6.3} {:>6.3}",
            qa_f1(pred, &golds, lang),
            exact_match(pred, &golds, lang),
            rouge_l(pred, &golds, lang)
        );
    }

    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let dataset = load_dataset(&fixtures.join("mini_dataset.jsonl"), "longbench")?;
    let embedder = Embedder::new(Arc::new(HashEmbedder::new(256)));
    let mocks = fixtures.join("eval_mocks");
    let provider_for = move |example: &QaExample| -> Result<Arc<dyn ChatProvider>, String> {
        let path = mocks.join(format!("{}.json", example.example_id));
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let scenario = MockScenario::from_json(&text).map_err(|e| e.to_string())?;
        Ok(Arc::new(MockChatProvider::new(scenario)))
    };
    let env = EvalEnv {
        embedder: &embedder,
        tagger: &RuleTagger,
        provider_for: &provider_for,
        chunk_size: 256,
    };
    let options = EvalOptions { parallelism: 2, ..EvalOptions::default() };
    let (report, _sessions) = run_eval(&dataset, &AgentConfig::default(), &env, &options)?;
    println!();
    print!("{}", report.to_table());
    println!("{}", report.headline());
    Ok(())
}
