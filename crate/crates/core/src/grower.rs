//! Grows memory fragments: one extraction call per round over all seed
//! categories, parsed from `category: [excerpt]` lines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, EmbedError, Embedder, EmbeddingVector};
use crate::llm::{complete, ChatExchange, ChatProvider, LlmError, Message};
use crate::prompts::{render, RenderError};
use crate::query::Query;
use crate::seeds::{SeedCategory, SeedSet};

/// Seed list used in the prompt when the query produced no seeds.
pub const FALLBACK_SEEDS: &str = "any query-relevant content";

#[derive(Debug, Error)]
pub enum GrowError {
    #[error("growth request has no documents")]
    NoDocuments,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryFragment {
    pub fragment_id: String,
    pub text: String,
    pub category: SeedCategory,
    pub round: u32,
    pub source_query: String,
    /// Cosine between the fragment and the query of its round.
    pub own_query_relevance: f64,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone)]
pub struct GrowthRequest<'a> {
    pub seeds: &'a SeedSet,
    pub documents: Vec<String>,
    pub query: &'a Query,
    pub instruction: &'a str,
}

#[derive(Debug, Clone)]
pub struct GrowthOutcome {
    pub fragments: Vec<MemoryFragment>,
    pub exchange: ChatExchange,
    pub warning: Option<String>,
}

fn category_for(prefix: &str) -> Option<SeedCategory> {
    let key: String = prefix
        .trim()
        .to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    match key.as_str() {
        "subjects" | "subject" => Some(SeedCategory::Subjects),
        "actions" | "action" => Some(SeedCategory::Actions),
        "temporal markers" | "temporal marker" => Some(SeedCategory::TemporalMarkers),
        "degree modifiers" | "degree modifier" | "degree descriptions" => Some(SeedCategory::DegreeModifiers),
        _ => None,
    }
}

/// Extracts `(category, text)` pairs from lines shaped `category: [text]`.
/// Never fails; unrecognized lines are skipped.
pub fn parse_fragments(completion: &str) -> Vec<(SeedCategory, String)> {
    let mut out = Vec::new();
    for line in completion.lines() {
        let line = line.trim().trim_start_matches(['-', '*', '•']).trim_start();
        let Some((prefix, payload)) = line.split_once(':') else { continue };
        let Some(category) = category_for(prefix) else { continue };
        let mut payload = payload.trim();
        if let Some(inner) = payload.strip_prefix('[').and_then(|p| p.strip_suffix(']')) {
            payload = inner.trim();
        }
        if !payload.is_empty() {
            out.push((category, payload.to_string()));
        }
    }
    out
}

/// Renders the seed list for the prompt, e.g. `subjects: Lara, Croft; actions: voiced`.
pub fn describe_seeds(seeds: &SeedSet) -> String {
    if seeds.is_empty() {
        return FALLBACK_SEEDS.to_string();
    }
    seeds
        .seeds
        .iter()
        .filter(|(_, tokens)| !tokens.is_empty())
        .map(|(category, tokens)| format!("{}: {}", category.label(), tokens.join(", ")))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn growth_prompt(request: &GrowthRequest<'_>) -> Result<String, RenderError> {
    let bindings = BTreeMap::from([
        ("SEEDS", describe_seeds(request.seeds)),
        ("TEXT", request.documents.join("\n\n")),
        ("QUERY", request.query.text.clone()),
    ]);
    render(request.instruction, &bindings)
}

pub fn fragment_id(round: u32, index: usize) -> String {
    format!("m{round:02}-{index:03}")
}

/// Runs one growth call and embeds every parsed fragment.
pub fn grow(
    request: &GrowthRequest<'_>,
    provider: &dyn ChatProvider,
    embedder: &Embedder,
    temperature: f64,
) -> Result<GrowthOutcome, GrowError> {
    if request.documents.is_empty() {
        return Err(GrowError::NoDocuments);
    }
    let prompt = growth_prompt(request)?;
    let exchange = complete(&[Message::user(prompt)], provider, &[], temperature)?;
    let parsed = parse_fragments(&exchange.completion);
    let warning = parsed
        .is_empty()
        .then(|| format!("round {}: no fragment lines in growth output", request.query.round()));

    let seedless = request.seeds.is_empty();
    let query_vector = if parsed.is_empty() {
        None
    } else {
        Some(embedder.embed(&request.query.text)?)
    };
    let texts: Vec<String> = parsed.iter().map(|(_, t)| t.clone()).collect();
    let vectors = if texts.is_empty() {
        Vec::new()
    } else {
        embedder.embed_many(&texts)?
    };
    let round = request.query.round();
    let mut fragments = Vec::with_capacity(parsed.len());
    for (index, ((category, text), embedding)) in parsed.into_iter().zip(vectors).enumerate() {
        let relevance = cosine(&embedding, query_vector.as_ref().expect("query embedded"))?;
        fragments.push(MemoryFragment {
            fragment_id: fragment_id(round, index),
            text,
            category: if seedless { SeedCategory::Subjects } else { category },
            round,
            source_query: request.query.text.clone(),
            own_query_relevance: relevance,
            embedding,
        });
    }
    Ok(GrowthOutcome {
        fragments,
        exchange,
        warning,
    })
}
