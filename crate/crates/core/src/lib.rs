//! Iterative LLM deep search over a local corpus.
//!
//! Each search round retrieves chunks, extracts seed clues from the search
//! query and lets the model grow short memory fragments from the retrieved
//! text. After the loop, fragments are scored against the original question,
//! filtered into a region and retraced into an ordered memory path that
//! feeds the final answer.

pub mod agent;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod grower;
pub mod llm;
pub mod memory;
pub mod metrics;
pub mod prompts;
pub mod query;
pub mod seeds;
pub mod transport;
