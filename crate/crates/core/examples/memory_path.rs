//! Memory path construction on the three-fragment worked example, compared
//! with exhaustive search, followed by scoring real fragments end to end.
//!
//!     cargo run -p memgrow --example memory_path

use std::sync::Arc;

use memgrow::embedding::{Embedder, HashEmbedder};
use memgrow::grower::MemoryFragment;
use memgrow::memory::{retrace, PathCandidate, PathInstance, ScoringConfig};
use memgrow::seeds::SeedCategory;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // contributions A=0.9, B=0.8, C=0.7 with sim(A,B)=0.9, sim(A,C)=0.2, sim(B,C)=0.8
    let candidates = ["A", "B", "C"]
        .iter()
        .zip([0.9, 0.8, 0.7])
        .map(|(id, c)| PathCandidate { fragment_id: id.to_string(), round: 1, c })
        .collect();
    let similarity = vec![vec![1.0, 0.9, 0.2], vec![0.9, 1.0, 0.8], vec![0.2, 0.8, 1.0]];
    let instance = PathInstance::new(candidates, similarity);

    let (path, trace) = instance.greedy(1.0, 3);
    for (step, t) in path.steps.iter().zip(&trace) {
        let options: Vec<String> = t.candidates.iter().map(|c| format!("{}={:.4}", c.fragment_id, c.score)).collect();
        println!("pick {}  mu={:.4}  c*mu={:.4}  [{}]", step.fragment_id, step.mu, step.c * step.mu, options.join(" "));
    }
    let best = instance.exhaustive(1.0, 3)?;
    println!("greedy {:.4}  exhaustive {:.4}", path.objective, best.objective);

    let embedder = Embedder::new(Arc::new(HashEmbedder::new(256)));
    let question = "Alice David is the voice of Lara Croft in a video game developed by which company?";
    let q = embedder.embed(question)?;
    let texts = [
        (1, "Alice David is the voice of Lara Croft in the video game Tomb Raider: Underworld"),
        (1, "She is a French actress and voice artist"),
        (2, "Tomb Raider: Underworld is a video game developed by Crystal Dynamics"),
        (2, "The Eiffel Tower was completed in 1889"),
    ];
    let mut fragments = Vec::new();
    for (i, (round, text)) in texts.iter().enumerate() {
        let embedding = embedder.embed(text)?;
        fragments.push(MemoryFragment {
            fragment_id: format!("m{round:02}-{i:03}"),
            text: text.to_string(),
            category: SeedCategory::Subjects,
            round: *round,
            source_query: String::new(),
            own_query_relevance: 0.5,
            embedding,
        });
    }
    let debug = retrace(&fragments, &q, &ScoringConfig::default())?;
    for s in &debug.scores {
        println!("{}  c_rel={:.3}  c_bp={:.3}  c={:.3}", s.fragment_id, s.c_rel, s.c_bp, s.c);
    }
    println!("region {:?}", debug.region.members);
    println!("path   {:?}  objective {:.4}", debug.path.fragment_ids(), debug.path.objective);
    Ok(())
}
