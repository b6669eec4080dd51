//! The deep-search loop: reason, search, grow memory, retrace, answer.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{retrieve, EmbedError, EmbeddedIndex, Embedder, RetrievalBatch};
use crate::grower::{grow, GrowError, GrowthRequest, MemoryFragment};
use crate::llm::{complete, ChatExchange, ChatProvider, FinishKind, LlmError, Message, ReplayChatProvider};
use crate::memory::{retrace, MemoryError, PathDebug, ScoringConfig};
use crate::prompts::{
    render, PromptBundle, RenderError, BEGIN_SEARCH_QUERY, BEGIN_SEARCH_RESULT, END_SEARCH_QUERY,
    END_SEARCH_RESULT, REASONING_TURN,
};
use crate::query::Query;
use crate::seeds::{extract_seeds, PosTagger, SeedSet};

pub const SESSION_SCHEMA: &str = "memgrow-session/1";

/// Spliced into the transcript when a round yields nothing usable.
pub const NO_RESULTS: &str = "No helpful information found.";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("session parse error: {0}")]
    Parse(String),
    #[error("unsupported session schema `{0}` (expected `{SESSION_SCHEMA}`)")]
    Version(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("reasoning does not end with the end-search-query marker")]
    MissingEnd,
    #[error("end-search-query marker without a matching begin marker")]
    MissingBegin,
    #[error("empty search query between markers")]
    EmptyQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Grown memory, retraced into a path that alone feeds the answer.
    #[default]
    Full,
    /// Grown memory, all consolidated fragments feed the answer unordered.
    NoRetrace,
    /// No growth; raw retrieved chunks stay in the transcript.
    NoMemory,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "full" => Ok(Mode::Full),
            "no_retrace" => Ok(Mode::NoRetrace),
            "no_memory" => Ok(Mode::NoMemory),
            other => Err(format!("unknown mode `{other}` (full, no_retrace, no_memory)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::NoRetrace => "no_retrace",
            Mode::NoMemory => "no_memory",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub n_max: u32,
    pub top_k: usize,
    pub mode: Mode,
    pub scoring: ScoringConfig,
    pub temperature: f64,
    pub prompts: PromptBundle,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            n_max: 5,
            top_k: 3,
            mode: Mode::Full,
            scoring: ScoringConfig::default(),
            temperature: 0.0,
            prompts: PromptBundle::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.n_max == 0 {
            return Err(AgentError::Config("n_max must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(AgentError::Config("top_k must be at least 1".into()));
        }
        self.scoring.validate().map_err(|e| AgentError::Config(e.to_string()))?;
        self.prompts.validate().map_err(AgentError::Config)
    }
}

/// How the final answer is requested and extracted.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AnswerFormat {
    #[default]
    Qa,
    MultipleChoice { choices: [String; 4] },
}

pub struct Services<'a> {
    pub index: &'a EmbeddedIndex,
    pub embedder: &'a Embedder,
    pub tagger: &'a dyn PosTagger,
    pub llm: &'a dyn ChatProvider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    Reasoning,
    Growth,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub purpose: CallPurpose,
    pub round: u32,
    pub exchange: ChatExchange,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
    /// Per-purpose `(prompt, completion)` totals.
    pub by_purpose: BTreeMap<String, (u64, u64)>,
}

impl TokenLedger {
    fn record(&mut self, purpose: CallPurpose, exchange: &ChatExchange) {
        self.prompt_tokens += exchange.prompt_tokens;
        self.completion_tokens += exchange.completion_tokens;
        self.calls += 1;
        let key = serde_json::to_value(purpose).unwrap().as_str().unwrap().to_string();
        let entry = self.by_purpose.entry(key).or_default();
        entry.0 += exchange.prompt_tokens;
        entry.1 += exchange.completion_tokens;
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round: u32,
    pub reasoning: String,
    pub query: String,
    pub retrieval: RetrievalBatch,
    pub seeds: SeedSet,
    pub fragments: Vec<MemoryFragment>,
    /// Text placed between the search-result markers.
    pub search_result: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The model stopped without requesting another search.
    Eos,
    /// The round budget ran out while the model was still searching.
    RoundBudget,
    /// The model broke the marker protocol; the loop went straight to answering.
    Protocol,
    /// A provider or retrieval failure stopped the session.
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Transport,
    Provider,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFailure {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub schema: String,
    pub config: AgentConfig,
    pub original_query: String,
    pub answer_format: AnswerFormat,
    pub rounds: Vec<Round>,
    /// Reasoning of the last call when it ended without a search.
    pub final_reasoning: Option<String>,
    pub transcript: String,
    pub consolidated: Vec<MemoryFragment>,
    /// Scores, region, greedy trace and path; only in `full` mode.
    pub retrace: Option<PathDebug>,
    pub answer_prompt: Option<String>,
    pub answer: Option<String>,
    pub answer_fallback: bool,
    pub termination: Option<Termination>,
    pub failure: Option<SessionFailure>,
    pub warnings: Vec<String>,
    pub calls: Vec<CallRecord>,
    pub token_ledger: TokenLedger,
    /// Effective run configuration, when the caller records one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl Session {
    fn new(question: &str, config: &AgentConfig, format: &AnswerFormat) -> Self {
        Self {
            schema: SESSION_SCHEMA.to_string(),
            config: config.clone(),
            original_query: question.to_string(),
            answer_format: format.clone(),
            rounds: Vec::new(),
            final_reasoning: None,
            transcript: String::new(),
            consolidated: Vec::new(),
            retrace: None,
            answer_prompt: None,
            answer: None,
            answer_fallback: false,
            termination: None,
            failure: None,
            warnings: Vec::new(),
            calls: Vec::new(),
            token_ledger: TokenLedger::default(),
            run_config: None,
        }
    }

    fn record(&mut self, purpose: CallPurpose, round: u32, exchange: ChatExchange) -> String {
        self.token_ledger.record(purpose, &exchange);
        let completion = exchange.completion.clone();
        self.calls.push(CallRecord {
            purpose,
            round,
            exchange,
        });
        completion
    }

    pub fn calls_for(&self, purpose: CallPurpose) -> usize {
        self.calls.iter().filter(|c| c.purpose == purpose).count()
    }

    pub fn is_aborted(&self) -> bool {
        self.failure.is_some()
    }

    /// Path debug dump; empty when the session did not retrace.
    pub fn path_debug(&self) -> PathDebug {
        self.retrace
            .clone()
            .unwrap_or_else(|| PathDebug::empty(self.config.scoring))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| AgentError::Parse(e.to_string()))?;
        match value.get("schema").and_then(|s| s.as_str()) {
            Some(SESSION_SCHEMA) => {}
            Some(other) => return Err(AgentError::Version(other.to_string())),
            None => return Err(AgentError::Parse("missing `schema` field".into())),
        }
        serde_json::from_value(value).map_err(|e| AgentError::Parse(e.to_string()))
    }

    /// A provider that answers every recorded prompt with its recorded
    /// completion.
    pub fn replay_provider(&self) -> ReplayChatProvider {
        ReplayChatProvider::new(self.calls.iter().map(|c| &c.exchange))
    }
}

/// Returns the query between the last begin/end search markers.
pub fn extract_marked_query(reasoning: &str) -> Result<String, ProtocolError> {
    let body = reasoning
        .trim_end()
        .strip_suffix(END_SEARCH_QUERY)
        .ok_or(ProtocolError::MissingEnd)?;
    let start = body.rfind(BEGIN_SEARCH_QUERY).ok_or(ProtocolError::MissingBegin)?;
    let query = body[start + BEGIN_SEARCH_QUERY.len()..].trim();
    if query.is_empty() {
        return Err(ProtocolError::EmptyQuery);
    }
    if query.contains(END_SEARCH_QUERY) {
        return Err(ProtocolError::MissingBegin);
    }
    Ok(query.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedAnswer {
    pub text: String,
    /// Set when no answer pattern was found and the whole completion is used.
    pub fallback: bool,
}

fn last_boxed(completion: &str) -> Option<String> {
    const OPEN: &str = "\\boxed{";
    let mut search_end = completion.len();
    while let Some(start) = completion[..search_end].rfind(OPEN) {
        let content_start = start + OPEN.len();
        let mut depth = 1usize;
        for (offset, ch) in completion[content_start..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(completion[content_start..content_start + offset].trim().to_string());
                    }
                }
                _ => {}
            }
        }
        search_end = start;
    }
    None
}

fn last_choice(completion: &str) -> Option<String> {
    const LEAD: &str = "the correct answer is";
    let lower = completion.to_lowercase();
    let mut search_end = lower.len();
    while let Some(start) = lower[..search_end].rfind(LEAD) {
        let rest = completion[start + LEAD.len()..].trim_start_matches([' ', ':', '*', '"']);
        let rest = rest.strip_prefix('(').unwrap_or(rest);
        let mut chars = rest.chars();
        if let Some(letter) = chars.next().filter(|c| matches!(c.to_ascii_uppercase(), 'A'..='D')) {
            let next = chars.next();
            if next.is_none_or(|c| !c.is_alphanumeric()) {
                return Some(letter.to_ascii_uppercase().to_string());
            }
        }
        search_end = start;
    }
    None
}

/// Pulls the answer out of the final completion. Never fails: without a
/// recognizable pattern the trimmed completion is returned with `fallback`.
pub fn extract_answer(completion: &str, format: &AnswerFormat) -> ExtractedAnswer {
    let found = match format {
        AnswerFormat::Qa => last_boxed(completion),
        AnswerFormat::MultipleChoice { .. } => last_choice(completion).or_else(|| {
            last_boxed(completion)
                .map(|b| b.trim_matches(['(', ')']).to_string())
                .filter(|b| matches!(b.as_str(), "A" | "B" | "C" | "D"))
        }),
    };
    match found {
        Some(text) => ExtractedAnswer { text, fallback: false },
        None => ExtractedAnswer {
            text: completion.trim().to_string(),
            fallback: true,
        },
    }
}

fn failure_of_llm(e: &LlmError) -> SessionFailure {
    SessionFailure {
        kind: if e.is_transport() { FailureKind::Transport } else { FailureKind::Provider },
        message: e.to_string(),
    }
}

fn failure_of_embed(e: &EmbedError) -> SessionFailure {
    SessionFailure {
        kind: if e.is_transport() { FailureKind::Transport } else { FailureKind::Data },
        message: e.to_string(),
    }
}

fn failure_of_grow(e: &GrowError) -> SessionFailure {
    match e {
        GrowError::Llm(e) => failure_of_llm(e),
        GrowError::Embed(e) => failure_of_embed(e),
        other => SessionFailure {
            kind: FailureKind::Data,
            message: other.to_string(),
        },
    }
}

fn failure_of_memory(e: &MemoryError) -> SessionFailure {
    match e {
        MemoryError::Embed(e) => failure_of_embed(e),
        other => SessionFailure {
            kind: FailureKind::Data,
            message: other.to_string(),
        },
    }
}

fn fragment_lines(fragments: &[&MemoryFragment]) -> String {
    fragments
        .iter()
        .map(|f| format!("{}: [{}]", f.category.label(), f.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn search_block(content: &str) -> String {
    format!("\n\n{BEGIN_SEARCH_RESULT}\n{content}\n{END_SEARCH_RESULT}\n\n")
}

struct Loop<'a, 's> {
    question: &'a str,
    config: &'a AgentConfig,
    services: &'a Services<'s>,
    session: Session,
}

enum Step {
    Continue,
    Stop(Termination),
    Abort(SessionFailure),
}

impl Loop<'_, '_> {
    fn reasoning_prompt(&self) -> Result<String, RenderError> {
        let instruction = render(
            &self.config.prompts.reasoning,
            &BTreeMap::from([("MAX_SEARCH_LIMIT", self.config.n_max.to_string())]),
        )?;
        render(
            REASONING_TURN,
            &BTreeMap::from([
                ("INSTRUCTION", instruction),
                ("QUESTION", self.question.to_string()),
                ("TRANSCRIPT", self.session.transcript.clone()),
            ]),
        )
    }

    fn round(&mut self, n: u32) -> Result<Step, AgentError> {
        let prompt = self.reasoning_prompt()?;
        let stops = [END_SEARCH_QUERY.to_string()];
        let exchange = match complete(&[Message::user(prompt)], self.services.llm, &stops, self.config.temperature) {
            Ok(e) => e,
            Err(e) => return Ok(Step::Abort(failure_of_llm(&e))),
        };
        let finish = exchange.finish_kind;
        let reasoning = self.session.record(CallPurpose::Reasoning, n, exchange);
        self.session.transcript.push_str(&reasoning);

        if finish != FinishKind::Marker {
            if finish == FinishKind::Length {
                self.session.warnings.push(format!("round {n}: reasoning hit the length limit"));
            }
            self.session.final_reasoning = Some(reasoning);
            return Ok(Step::Stop(Termination::Eos));
        }
        let query_text = match extract_marked_query(&reasoning) {
            Ok(q) => q,
            Err(e) => {
                self.session.warnings.push(format!("round {n}: protocol error: {e}"));
                self.session.final_reasoning = Some(reasoning);
                return Ok(Step::Stop(Termination::Protocol));
            }
        };
        let query = Query::search(&query_text, n);
        let retrieval = match retrieve(&query, self.services.index, self.services.embedder, self.config.top_k) {
            Ok(r) => r,
            Err(e) => return Ok(Step::Abort(failure_of_embed(&e))),
        };
        let mut seen = HashSet::new();
        let documents: Vec<String> = retrieval
            .hits
            .iter()
            .filter_map(|h| self.services.index.chunk(&h.chunk_id))
            .map(|c| c.text.clone())
            .filter(|t| seen.insert(t.clone()))
            .collect();
        let seeds = extract_seeds(&query, self.services.tagger).unwrap_or_else(|e| {
            self.session.warnings.push(format!("round {n}: tagging failed, using no seeds: {e}"));
            SeedSet {
                query_round: n,
                ..SeedSet::default()
            }
        });

        let (fragments, search_result) = if self.config.mode == Mode::NoMemory {
            (Vec::new(), documents.join("\n\n"))
        } else {
            let request = GrowthRequest {
                seeds: &seeds,
                documents,
                query: &query,
                instruction: &self.config.prompts.growth,
            };
            let outcome = match grow(&request, self.services.llm, self.services.embedder, self.config.temperature) {
                Ok(o) => o,
                Err(e) => return Ok(Step::Abort(failure_of_grow(&e))),
            };
            self.session.record(CallPurpose::Growth, n, outcome.exchange);
            if let Some(w) = outcome.warning {
                self.session.warnings.push(w);
            }
            let lines = fragment_lines(&outcome.fragments.iter().collect::<Vec<_>>());
            (outcome.fragments, lines)
        };
        let search_result = if search_result.trim().is_empty() {
            NO_RESULTS.to_string()
        } else {
            search_result
        };
        self.session.transcript.push_str(&search_block(&search_result));
        self.session.rounds.push(Round {
            round: n,
            reasoning,
            query: query_text,
            retrieval,
            seeds,
            fragments,
            search_result,
        });
        Ok(Step::Continue)
    }

    fn consolidate(&mut self) {
        let mut seen = HashSet::new();
        self.session.consolidated = self
            .session
            .rounds
            .iter()
            .flat_map(|r| r.fragments.iter())
            .filter(|f| seen.insert(f.fragment_id.clone()))
            .cloned()
            .collect();
    }

    fn memory_text(&mut self) -> Result<String, SessionFailure> {
        match self.config.mode {
            Mode::NoMemory => Ok(self.session.transcript.trim().to_string()),
            Mode::NoRetrace => Ok(fragment_lines(&self.session.consolidated.iter().collect::<Vec<_>>())),
            Mode::Full => {
                let q_o = self.services.embedder.embed(self.question).map_err(|e| failure_of_embed(&e))?;
                let debug = retrace(&self.session.consolidated, &q_o, &self.config.scoring)
                    .map_err(|e| failure_of_memory(&e))?;
                let by_id: BTreeMap<&str, &MemoryFragment> = self
                    .session
                    .consolidated
                    .iter()
                    .map(|f| (f.fragment_id.as_str(), f))
                    .collect();
                let ordered: Vec<&MemoryFragment> = debug.path.fragment_ids().iter().map(|id| by_id[id]).collect();
                let text = fragment_lines(&ordered);
                self.session.retrace = Some(debug);
                Ok(text)
            }
        }
    }

    fn answer(&mut self) -> Result<Option<SessionFailure>, AgentError> {
        let memory = match self.memory_text() {
            Ok(m) => m,
            Err(f) => return Ok(Some(f)),
        };
        let prompts = &self.config.prompts;
        let prompt = match &self.session.answer_format {
            AnswerFormat::Qa => render(
                &prompts.answer,
                &BTreeMap::from([("MEMORY", memory), ("QUESTION", self.question.to_string())]),
            )?,
            AnswerFormat::MultipleChoice { choices } => render(
                &prompts.multiple_choice,
                &BTreeMap::from([
                    ("CONTEXTS", memory),
                    ("QUESTION", self.question.to_string()),
                    ("CHOICE_A", choices[0].clone()),
                    ("CHOICE_B", choices[1].clone()),
                    ("CHOICE_C", choices[2].clone()),
                    ("CHOICE_D", choices[3].clone()),
                ]),
            )?,
        };
        self.session.answer_prompt = Some(prompt.clone());
        let exchange = match complete(&[Message::user(prompt)], self.services.llm, &[], self.config.temperature) {
            Ok(e) => e,
            Err(e) => return Ok(Some(failure_of_llm(&e))),
        };
        let round = self.session.rounds.len() as u32 + 1;
        let completion = self.session.record(CallPurpose::Answer, round, exchange);
        let extracted = extract_answer(&completion, &self.session.answer_format);
        if extracted.fallback {
            self.session.warnings.push("answer pattern not found; using the whole completion".into());
        }
        self.session.answer = Some(extracted.text);
        self.session.answer_fallback = extracted.fallback;
        Ok(None)
    }
}

/// Runs one question end to end. Provider and retrieval failures do not
/// return `Err`: they end the session early with `failure` set and the
/// partial transcript kept.
pub fn run(
    question: &str,
    format: &AnswerFormat,
    config: &AgentConfig,
    services: &Services<'_>,
) -> Result<Session, AgentError> {
    config.validate()?;
    if question.trim().is_empty() {
        return Err(AgentError::EmptyQuestion);
    }
    let mut state = Loop {
        question,
        config,
        services,
        session: Session::new(question, config, format),
    };
    let mut termination = Termination::RoundBudget;
    for n in 1..=config.n_max {
        match state.round(n)? {
            Step::Continue => {}
            Step::Stop(t) => {
                termination = t;
                break;
            }
            Step::Abort(failure) => {
                state.session.termination = Some(Termination::Aborted);
                state.session.failure = Some(failure);
                return Ok(state.session);
            }
        }
    }
    state.consolidate();
    if let Some(failure) = state.answer()? {
        state.session.termination = Some(Termination::Aborted);
        state.session.failure = Some(failure);
        return Ok(state.session);
    }
    state.session.termination = Some(termination);
    Ok(state.session)
}
