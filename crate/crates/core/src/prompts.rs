//! Prompt templates and placeholder rendering.
//!
//! A placeholder is `{NAME}` where `NAME` is an identifier and the opening
//! brace is not directly preceded by an alphanumeric character. That keeps
//! literals such as `\boxed{YOUR_ANSWER}` intact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BEGIN_SEARCH_QUERY: &str = "<|begin_search_query|>";
pub const END_SEARCH_QUERY: &str = "<|end_search_query|>";
pub const BEGIN_SEARCH_RESULT: &str = "<|begin_search_result|>";
pub const END_SEARCH_RESULT: &str = "<|end_search_result|>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("unbound placeholder `{{{0}}}`")]
    Unbound(String),
}

pub const REASONING_INSTRUCTION: &str = "\
You are a reasoning assistant with the ability to perform searches to help you answer the user's question accurately. When answering, just give the answer and do not output other information.
You have special tools:
- To perform a search: write <|begin_search_query|> your query here <|end_search_query|>.
Then, the system will search and analyze relevant passages, then provide you with helpful information in the format <|begin_search_result|> ...search results... <|end_search_result|>.
If you think the searched information is not enough, you can continue searching. The maximum number of search attempts is limited to {MAX_SEARCH_LIMIT}.
Once you have all the information you need, stop the search and continue your reasoning.
Example:
Question: \"Alice David is the voice of Lara Croft in a video game developed by which company?\"
Assistant thinking steps:
- I need to find out who voices Lara Croft in the video game.
- Then, I need to determine which company developed that video game.
Assistant:
<|begin_search_query|>Alice David Lara Croft voice<|end_search_query|>
(System returns processed information from relevant passages)
Assistant thinks: The search results indicate that Alice David is the voice of Lara Croft in a specific video game. Now, I need to find out which company developed that game.
Assistant:
<|begin_search_query|>video game developed by Alice David Lara Croft<|end_search_query|>
(System returns processed information from relevant passages)
Assistant continues reasoning with the new information...
Remember:
- Use <|begin_search_query|> to request a search and end with <|end_search_query|>.
- When done searching, continue your reasoning.";

pub const GROWTH_INSTRUCTION: &str = "\
Please extract content from the provided text that is useful for answering the given query, specifically with respect to the listed subjects, actions, temporal markers, degree modifiers.

Input:
- List of subjects, actions, temporal markers, degree modifiers: {SEEDS}
- Text: {TEXT}
- Query: {QUERY}

Instructions:
- For each item in the list of subjects, actions, temporal markers or degree descriptions, extract raw, verbatim content from the text that is directly relevant to the query.
- Format each extracted piece as:
    subjects: [exact content from the text about the subjects]
    actions: [exact content from the text describing an action involving the verb]
    temporal markers: [exact content from the text indicating when an event occurred or the time duration]
    degree modifiers: [exact content from the text indicating the characteristics of the actions and subjects.]
- Do not paraphrase, summarize, or use your own words. Use only direct excerpts or minimally truncated phrases that preserve original wording.
- Each subjects/actions/temporal markers/degree modifiers\u{2013}content pair must appear on a separate line.
- Only include content that provides diverse and query-relevant information.
- If no relevant content exists in the text for a given entity, verb, or time expression with respect to the query, omit it entirely.";

pub const ANSWER_INSTRUCTION: &str = "\
Answer the question based on the given system memory of reasoning. Just give the answer and do not output other information.
You should provide your final answer in the format \\boxed{YOUR_ANSWER}.

If the answer is in the context, maintain the illustrations (e.g., examples and specific phrasings) present in the context when formulating the answer.

System memory: {MEMORY}
Question: {QUESTION}

Generate an accurate answer based solely on the provided information.";

pub const MULTIPLE_CHOICE_INSTRUCTION: &str = "\
Please read the provided contexts and answer the question below.
<text>{CONTEXTS}</text>
What is the correct answer to this question: {QUESTION}
Choices:
(A) {CHOICE_A}
(B) {CHOICE_B}
(C) {CHOICE_C}
(D) {CHOICE_D}
Answer the question based on the given context. Just give the answer and do not output other information. Format your response as follows: \"The correct answer is (insert answer here)\".";

/// Framing around the reasoning instruction: the question and the running
/// transcript the model continues.
pub const REASONING_TURN: &str = "{INSTRUCTION}

Please answer the following question.
Question: {QUESTION}

{TRANSCRIPT}";

/// The four instruction templates used by the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub reasoning: String,
    pub growth: String,
    pub answer: String,
    pub multiple_choice: String,
}

impl Default for PromptBundle {
    fn default() -> Self {
        Self {
            reasoning: REASONING_INSTRUCTION.to_string(),
            growth: GROWTH_INSTRUCTION.to_string(),
            answer: ANSWER_INSTRUCTION.to_string(),
            multiple_choice: MULTIPLE_CHOICE_INSTRUCTION.to_string(),
        }
    }
}

impl PromptBundle {
    /// Checks the marker literals and placeholders the agent relies on.
    pub fn validate(&self) -> Result<(), String> {
        for marker in [BEGIN_SEARCH_QUERY, END_SEARCH_QUERY, BEGIN_SEARCH_RESULT, END_SEARCH_RESULT, "{MAX_SEARCH_LIMIT}"] {
            if !self.reasoning.contains(marker) {
                return Err(format!("reasoning instruction lacks `{marker}`"));
            }
        }
        if !self.answer.contains("\\boxed{YOUR_ANSWER}") {
            return Err("answer instruction lacks `\\boxed{YOUR_ANSWER}`".into());
        }
        Ok(())
    }
}

/// Yields `(start, end, name)` for each placeholder, `end` exclusive.
fn placeholders(template: &str) -> Vec<(usize, usize, &str)> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' && (i == 0 || !bytes[i - 1].is_ascii_alphanumeric()) {
            let rest = &template[i + 1..];
            let len = rest
                .bytes()
                .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
                .count();
            let starts_ok = rest.bytes().next().is_some_and(|b| b.is_ascii_alphabetic() || b == b'_');
            if len > 0 && starts_ok && rest.as_bytes().get(len) == Some(&b'}') {
                out.push((i, i + len + 2, &rest[..len]));
                i += len + 2;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Names of all placeholders in the template, in order of first use.
pub fn placeholder_names(template: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for (_, _, name) in placeholders(template) {
        if !names.iter().any(|n| n == name) {
            names.push(name.to_string());
        }
    }
    names
}

/// Substitutes every placeholder. Bound values are inserted verbatim and are
/// not themselves scanned for placeholders.
pub fn render(template: &str, bindings: &BTreeMap<&str, String>) -> Result<String, RenderError> {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for (start, end, name) in placeholders(template) {
        let value = bindings
            .get(name)
            .ok_or_else(|| RenderError::Unbound(name.to_string()))?;
        out.push_str(&template[last..start]);
        out.push_str(value);
        last = end;
    }
    out.push_str(&template[last..]);
    Ok(out)
}
