//! Blocking JSON-over-HTTP POST with bounded retries, shared by the chat and
//! embedding clients.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    /// Retryable failures (connection errors, 429, 5xx) that outlasted the
    /// retry budget.
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Exhausted { attempts: u32, message: String },
    /// Non-retryable HTTP status (4xx other than 429).
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay_ms: 500,
            timeout_secs: 120,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << attempt.min(10)))
    }
}

pub struct JsonClient {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    policy: RetryPolicy,
}

impl JsonClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>, policy: RetryPolicy) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(policy.timeout_secs))
            .build()
            .expect("http client builds");
        Self {
            client,
            url: url.into(),
            api_key,
            policy,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Posts `body` and parses the JSON response. Returns the parsed value
    /// and the number of attempts it took.
    pub fn post(&self, body: &Value) -> Result<(Value, u32), TransportError> {
        let max = self.policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max {
            let mut req = self.client.post(&self.url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        let value = serde_json::from_str(&text)
                            .map_err(|e| TransportError::Malformed(e.to_string()))?;
                        return Ok((value, attempt));
                    }
                    if status.as_u16() != 429 && !status.is_server_error() {
                        return Err(TransportError::Rejected {
                            status: status.as_u16(),
                            body: text,
                        });
                    }
                    last = format!("HTTP {}", status.as_u16());
                }
                Err(e) => last = e.to_string(),
            }
            if attempt < max {
                log::warn!("{}: attempt {attempt} failed ({last}), retrying", self.url);
                thread::sleep(self.policy.delay(attempt - 1));
            }
        }
        Err(TransportError::Exhausted {
            attempts: max,
            message: last,
        })
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! Minimal scripted HTTP server for transport tests.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread;

    pub struct ScriptedServer {
        pub url: String,
        pub requests: Arc<Mutex<Vec<String>>>,
    }

    /// Serves one canned `(status, body)` per incoming request, in order.
    pub fn serve(responses: Vec<(u16, String)>) -> ScriptedServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0u8; length];
                reader.read_exact(&mut buf).ok();
                log.lock().unwrap().push(String::from_utf8_lossy(&buf).into_owned());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).ok();
            }
        });
        ScriptedServer { url, requests }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::serve;
    use super::*;

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 1,
            timeout_secs: 5,
        }
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let server = serve(vec![
            (500, "{}".into()),
            (500, "{}".into()),
            (200, "{\"ok\":true}".into()),
        ]);
        let client = JsonClient::new(&server.url, None, fast());
        let (value, attempts) = client.post(&serde_json::json!({"x": 1})).unwrap();
        assert_eq!(attempts, 3);
        assert_eq!(value["ok"], true);
        assert_eq!(server.requests.lock().unwrap().len(), 3);
    }

    #[test]
    fn exhausts_budget() {
        let server = serve(vec![(503, "{}".into()); 3]);
        let client = JsonClient::new(&server.url, None, fast());
        match client.post(&serde_json::json!({})) {
            Err(TransportError::Exhausted { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn client_errors_are_not_retried() {
        let server = serve(vec![(400, "bad".into())]);
        let client = JsonClient::new(&server.url, None, fast());
        assert!(matches!(
            client.post(&serde_json::json!({})),
            Err(TransportError::Rejected { status: 400, .. })
        ));
    }

    #[test]
    fn malformed_json_is_fatal() {
        let server = serve(vec![(200, "not json".into())]);
        let client = JsonClient::new(&server.url, None, fast());
        assert!(matches!(
            client.post(&serde_json::json!({})),
            Err(TransportError::Malformed(_))
        ));
    }
}
