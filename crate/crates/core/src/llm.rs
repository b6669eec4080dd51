//! Chat-completion providers and the marker-aware `complete` call.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::tokenize;
use crate::prompts::{BEGIN_SEARCH_QUERY, END_SEARCH_QUERY};
use crate::transport::{JsonClient, RetryPolicy, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("chat transport error: {0}")]
    Transport(#[from] TransportError),
    #[error("chat provider error: {0}")]
    Provider(String),
    #[error("no messages to send")]
    NoMessages,
}

impl LlmError {
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            LlmError::Transport(TransportError::Exhausted { .. } | TransportError::Rejected { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub stop: Vec<String>,
}

impl ChatRequest {
    pub fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

/// What a provider returned before marker handling.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProviderReply {
    pub text: String,
    /// True when generation hit the token limit.
    pub truncated: bool,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub attempts: u32,
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ProviderReply, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishKind {
    Stop,
    Length,
    Marker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<Message>,
    pub completion: String,
    pub finish_kind: FinishKind,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub attempts: u32,
}

/// Cuts `text` just after the earliest occurrence of any marker.
pub fn truncate_at_marker(text: &str, markers: &[String]) -> Option<String> {
    markers
        .iter()
        .filter(|m| !m.is_empty())
        .filter_map(|m| text.find(m.as_str()).map(|pos| pos + m.len()))
        .min()
        .map(|end| text[..end].to_string())
}

fn count_tokens(messages: &[Message]) -> u64 {
    messages.iter().map(|m| tokenize(&m.content).len() as u64).sum()
}

/// Sends the conversation and applies the stop-marker contract: the
/// completion is cut after the first stop marker, which is kept.
pub fn complete(
    messages: &[Message],
    provider: &dyn ChatProvider,
    stop_markers: &[String],
    temperature: f64,
) -> Result<ChatExchange, LlmError> {
    if messages.is_empty() {
        return Err(LlmError::NoMessages);
    }
    let request = ChatRequest {
        messages: messages.to_vec(),
        temperature,
        stop: stop_markers.to_vec(),
    };
    let reply = provider.chat(&request)?;
    let (completion, finish_kind) = match truncate_at_marker(&reply.text, stop_markers) {
        Some(cut) => (cut, FinishKind::Marker),
        None if reply.truncated => (reply.text, FinishKind::Length),
        None => (reply.text, FinishKind::Stop),
    };
    Ok(ChatExchange {
        prompt_tokens: reply.prompt_tokens.unwrap_or_else(|| count_tokens(messages)),
        completion_tokens: reply
            .completion_tokens
            .unwrap_or_else(|| tokenize(&completion).len() as u64),
        messages: messages.to_vec(),
        completion,
        finish_kind,
        attempts: reply.attempts,
    })
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChatProvider {
    client: JsonClient,
    model: String,
    max_tokens: Option<u32>,
    server_stop: bool,
}

impl HttpChatProvider {
    pub fn new(url: &str, model: &str, api_key: Option<String>, policy: RetryPolicy) -> Self {
        Self {
            client: JsonClient::new(url, api_key, policy),
            model: model.to_string(),
            max_tokens: None,
            server_stop: true,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = Some(max_tokens);
        self
    }

    /// Disables server-side stop sequences; markers are then cut client-side.
    pub fn without_server_stop(mut self) -> Self {
        self.server_stop = false;
        self
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "stop": if self.server_stop { request.stop.clone() } else { Vec::new() },
        });
        if let Some(n) = self.max_tokens {
            body["max_tokens"] = json!(n);
        }
        body
    }
}

/// Servers drop the matched stop sequence from the returned text. If the
/// reply leaves a search query open, the end marker is restored so callers
/// see the same text as with client-side truncation.
fn restore_end_marker(text: String, stops: &[String]) -> String {
    if !stops.iter().any(|s| s == END_SEARCH_QUERY) {
        return text;
    }
    match (text.rfind(BEGIN_SEARCH_QUERY), text.rfind(END_SEARCH_QUERY)) {
        (Some(b), e) if e.is_none_or(|e| e < b) => format!("{text}{END_SEARCH_QUERY}"),
        _ => text,
    }
}

pub(crate) fn parse_chat_response(body: &Value) -> Result<(String, bool, Option<u64>, Option<u64>), LlmError> {
    let malformed = |m: &str| LlmError::Transport(TransportError::Malformed(m.to_string()));
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| malformed("response has no choices"))?;
    let text = choice
        .get("message")
        .and_then(|m| m.get("content"))
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("choice has no text content"))?
        .to_string();
    let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
    let usage = body.get("usage");
    let count = |key: &str| usage.and_then(|u| u.get(key)).and_then(Value::as_u64);
    Ok((text, truncated, count("prompt_tokens"), count("completion_tokens")))
}

impl ChatProvider for HttpChatProvider {
    fn chat(&self, request: &ChatRequest) -> Result<ProviderReply, LlmError> {
        let (value, attempts) = self.client.post(&self.body(request))?;
        let (text, truncated, prompt_tokens, completion_tokens) = parse_chat_response(&value)?;
        let text = if self.server_stop {
            restore_end_marker(text, &request.stop)
        } else {
            text
        };
        Ok(ProviderReply {
            text,
            truncated,
            prompt_tokens,
            completion_tokens,
            attempts,
        })
    }
}

/// One scripted reply. `matches` is a substring of the last user message;
/// an empty string matches everything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matches: String,
    pub response: String,
    #[serde(default)]
    pub once: bool,
}

impl MockRule {
    pub fn new(matches: &str, response: &str) -> Self {
        Self {
            matches: matches.into(),
            response: response.into(),
            once: false,
        }
    }

    pub fn once(matches: &str, response: &str) -> Self {
        Self {
            once: true,
            ..Self::new(matches, response)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScenario {
    pub rules: Vec<MockRule>,
}

impl MockScenario {
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        // a bare rule list is accepted too
        if let Ok(rules) = serde_json::from_str::<Vec<MockRule>>(text) {
            return Ok(Self { rules });
        }
        serde_json::from_str(text).map_err(|e| LlmError::Provider(format!("bad scenario: {e}")))
    }
}

/// Scripted provider: the first rule whose pattern occurs in the last user
/// message answers; `once` rules are consumed when they fire.
#[derive(Debug)]
pub struct MockChatProvider {
    rules: Mutex<Vec<(MockRule, bool)>>,
    calls: Mutex<usize>,
}

impl MockChatProvider {
    pub fn new(scenario: MockScenario) -> Self {
        Self {
            rules: Mutex::new(scenario.rules.into_iter().map(|r| (r, false)).collect()),
            calls: Mutex::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl ChatProvider for MockChatProvider {
    fn chat(&self, request: &ChatRequest) -> Result<ProviderReply, LlmError> {
        let prompt = request.last_user_message();
        let mut rules = self.rules.lock().unwrap();
        *self.calls.lock().unwrap() += 1;
        let (rule, used) = rules
            .iter_mut()
            .find(|(rule, used)| !*used && prompt.contains(rule.matches.as_str()))
            .ok_or_else(|| {
                let head: String = prompt.chars().take(80).collect();
                LlmError::Provider(format!("no mock rule matches prompt starting {head:?}"))
            })?;
        if rule.once {
            *used = true;
        }
        Ok(ProviderReply {
            text: rule.response.clone(),
            attempts: 1,
            ..Default::default()
        })
    }
}

/// Replays recorded exchanges keyed by the exact last user message; repeated
/// prompts are answered in recorded order.
#[derive(Debug, Default)]
pub struct ReplayChatProvider {
    recorded: Mutex<HashMap<String, Vec<String>>>,
}

impl ReplayChatProvider {
    pub fn new<'a>(exchanges: impl IntoIterator<Item = &'a ChatExchange>) -> Self {
        let mut recorded: HashMap<String, Vec<String>> = HashMap::new();
        for exchange in exchanges {
            let request = ChatRequest {
                messages: exchange.messages.clone(),
                temperature: 0.0,
                stop: Vec::new(),
            };
            recorded
                .entry(request.last_user_message().to_string())
                .or_default()
                .push(exchange.completion.clone());
        }
        for queue in recorded.values_mut() {
            queue.reverse();
        }
        Self {
            recorded: Mutex::new(recorded),
        }
    }
}

impl ChatProvider for ReplayChatProvider {
    fn chat(&self, request: &ChatRequest) -> Result<ProviderReply, LlmError> {
        let mut recorded = self.recorded.lock().unwrap();
        let text = recorded
            .get_mut(request.last_user_message())
            .and_then(Vec::pop)
            .ok_or_else(|| LlmError::Provider("prompt not present in recording".into()))?;
        Ok(ProviderReply {
            text,
            attempts: 1,
            ..Default::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::testing::serve;

    fn stops() -> Vec<String> {
        vec![END_SEARCH_QUERY.to_string()]
    }

    fn mock(rules: Vec<MockRule>) -> MockChatProvider {
        MockChatProvider::new(MockScenario { rules })
    }

    #[test]
    fn truncates_at_marker() {
        let provider = mock(vec![MockRule::new("", "x <|end_search_query|> y")]);
        let ex = complete(&[Message::user("q")], &provider, &stops(), 0.0).unwrap();
        assert_eq!(ex.completion, "x <|end_search_query|>");
        assert_eq!(ex.finish_kind, FinishKind::Marker);
    }

    #[test]
    fn natural_stop() {
        let provider = mock(vec![MockRule::new("", "done.")]);
        let ex = complete(&[Message::user("q")], &provider, &stops(), 0.0).unwrap();
        assert_eq!(ex.completion, "done.");
        assert_eq!(ex.finish_kind, FinishKind::Stop);
        assert_eq!(ex.completion_tokens, 2);
        assert_eq!(ex.prompt_tokens, 1);
    }

    #[test]
    fn earliest_marker_wins_and_is_never_split() {
        let markers = vec!["<|b|>".to_string(), "<|a|>".to_string()];
        assert_eq!(truncate_at_marker("1<|a|>2<|b|>", &markers).unwrap(), "1<|a|>");
        assert_eq!(truncate_at_marker("nothing", &markers), None);
    }

    #[test]
    fn once_rules_are_consumed_in_order() {
        let provider = mock(vec![
            MockRule::once("hi", "first"),
            MockRule::once("hi", "second"),
            MockRule::new("hi", "rest"),
        ]);
        let say = || complete(&[Message::user("hi")], &provider, &[], 0.0).unwrap().completion;
        assert_eq!(say(), "first");
        assert_eq!(say(), "second");
        assert_eq!(say(), "rest");
        assert_eq!(say(), "rest");
        assert_eq!(provider.calls(), 4);
    }

    #[test]
    fn unmatched_prompt_is_provider_error() {
        let provider = mock(vec![MockRule::new("zzz", "x")]);
        assert!(matches!(
            complete(&[Message::user("q")], &provider, &[], 0.0),
            Err(LlmError::Provider(_))
        ));
        assert!(matches!(complete(&[], &provider, &[], 0.0), Err(LlmError::NoMessages)));
    }

    #[test]
    fn scenario_file_formats() {
        let a = MockScenario::from_json(r#"{"rules":[{"match":"a","response":"b","once":true}]}"#).unwrap();
        let b = MockScenario::from_json(r#"[{"match":"a","response":"b","once":true}]"#).unwrap();
        assert_eq!(a, b);
        assert!(a.rules[0].once);
    }

    #[test]
    fn http_retries_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"content":"done."},"finish_reason":"stop"}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#;
        let server = serve(vec![(500, "{}".into()), (500, "{}".into()), (200, ok.into())]);
        let policy = RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 1,
            timeout_secs: 5,
        };
        let provider = HttpChatProvider::new(&server.url, "m", Some("k".into()), policy);
        let ex = complete(&[Message::user("q")], &provider, &stops(), 0.0).unwrap();
        assert_eq!(ex.attempts, 3);
        assert_eq!(ex.completion, "done.");
        assert_eq!(ex.prompt_tokens, 7);
        let sent: Value = serde_json::from_str(&server.requests.lock().unwrap()[2]).unwrap();
        assert_eq!(sent["model"], "m");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["stop"], json!([END_SEARCH_QUERY]));
        assert_eq!(sent["messages"], json!([{"role": "user", "content": "q"}]));
    }

    #[test]
    fn server_side_stop_restores_marker() {
        let body = r#"{"choices":[{"message":{"content":"think <|begin_search_query|>who"},"finish_reason":"stop"}]}"#;
        let server = serve(vec![(200, body.into())]);
        let provider = HttpChatProvider::new(&server.url, "m", None, RetryPolicy::default());
        let ex = complete(&[Message::user("q")], &provider, &stops(), 0.0).unwrap();
        assert_eq!(ex.completion, "think <|begin_search_query|>who<|end_search_query|>");
        assert_eq!(ex.finish_kind, FinishKind::Marker);
    }

    #[test]
    fn length_finish() {
        let body = r#"{"choices":[{"message":{"content":"abc"},"finish_reason":"length"}]}"#;
        let server = serve(vec![(200, body.into())]);
        let provider = HttpChatProvider::new(&server.url, "m", None, RetryPolicy::default());
        let ex = complete(&[Message::user("q")], &provider, &stops(), 0.0).unwrap();
        assert_eq!(ex.finish_kind, FinishKind::Length);
    }

    #[test]
    fn replay_returns_recorded_completions() {
        let exchange = |prompt: &str, out: &str| ChatExchange {
            messages: vec![Message::user(prompt)],
            completion: out.into(),
            finish_kind: FinishKind::Stop,
            prompt_tokens: 0,
            completion_tokens: 0,
            attempts: 1,
        };
        let recorded = [exchange("p", "one"), exchange("p", "two"), exchange("q", "three")];
        let replay = ReplayChatProvider::new(&recorded);
        let ask = |p: &str| complete(&[Message::user(p)], &replay, &[], 0.0).map(|e| e.completion);
        assert_eq!(ask("p").unwrap(), "one");
        assert_eq!(ask("q").unwrap(), "three");
        assert_eq!(ask("p").unwrap(), "two");
        assert!(ask("p").is_err());
    }
}
