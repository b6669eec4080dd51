//! Run configuration: built-in defaults, then a JSON config file, then
//! command-line overrides. Provider keys come from the environment only.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Mode};
use crate::memory::ScoringConfig;
use crate::prompts::PromptBundle;
use crate::transport::RetryPolicy;

pub const LLM_KEY_ENV: &str = "MEMGROW_LLM_KEY";
pub const EMBED_KEY_ENV: &str = "MEMGROW_EMBED_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_max: u32,
    pub top_k: usize,
    pub chunk_tokens: usize,
    pub tau_s: f64,
    pub tau_r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub k_max: usize,
    pub mode: Mode,
    pub temperature: f64,

    pub llm_url: Option<String>,
    pub llm_model: String,
    /// Scenario file, or a directory of `<example_id>.json` scenarios for eval.
    pub llm_mock: Option<PathBuf>,
    pub max_tokens: Option<u32>,
    pub embed_url: Option<String>,
    pub embed_model: String,
    /// `hash` for the hashing embedder, or a scenario file path.
    pub embed_mock: Option<String>,
    pub embed_dim: usize,
    pub max_attempts: u32,
    pub retry_base_ms: u64,
    pub request_timeout_secs: u64,
    /// External `token<TAB>UPOS` tagger command; the rule tagger otherwise.
    pub tagger_command: Option<String>,

    pub corpus_path: PathBuf,
    pub cache_path: Option<PathBuf>,
    pub dataset_path: Option<PathBuf>,
    pub dataset_format: String,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    pub skip_errors: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scoring = ScoringConfig::default();
        Self {
            n_max: 5,
            top_k: 3,
            chunk_tokens: 256,
            tau_s: scoring.tau_s,
            tau_r: scoring.tau_r,
            alpha: scoring.alpha,
            beta: scoring.beta,
            lambda: scoring.lambda,
            k_max: scoring.k_max,
            mode: Mode::Full,
            temperature: 0.0,
            llm_url: None,
            llm_model: "default".into(),
            llm_mock: None,
            max_tokens: None,
            embed_url: None,
            embed_model: "bge-m3".into(),
            embed_mock: None,
            embed_dim: 256,
            max_attempts: 4,
            retry_base_ms: 500,
            request_timeout_secs: 120,
            tagger_command: None,
            corpus_path: PathBuf::from("corpus.jsonl"),
            cache_path: None,
            dataset_path: None,
            dataset_format: "longbench".into(),
            output_dir: PathBuf::from("out"),
            parallelism: 1,
            skip_errors: false,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            alpha: self.alpha,
            beta: self.beta,
            tau_s: self.tau_s,
            tau_r: self.tau_r,
            lambda: self.lambda,
            k_max: self.k_max,
        }
    }

    pub fn agent(&self) -> AgentConfig {
        AgentConfig {
            n_max: self.n_max,
            top_k: self.top_k,
            mode: self.mode,
            scoring: self.scoring(),
            temperature: self.temperature,
            prompts: PromptBundle::default(),
        }
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_delay_ms: self.retry_base_ms,
            timeout_secs: self.request_timeout_secs,
        }
    }

    /// Embedding cache location: next to the corpus unless set.
    pub fn cache_file(&self) -> PathBuf {
        self.cache_path.clone().unwrap_or_else(|| {
            let mut name = self.corpus_path.as_os_str().to_owned();
            name.push(".emb.jsonl");
            PathBuf::from(name)
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.chunk_tokens == 0 {
            return Err("chunk_tokens must be at least 1".into());
        }
        if self.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        if self.embed_dim == 0 {
            return Err("embed_dim must be at least 1".into());
        }
        self.agent().validate().map_err(|e| e.to_string())
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = RunConfig::default();
        assert_eq!((c.n_max, c.top_k, c.chunk_tokens, c.k_max), (5, 3, 256, 10));
        assert_eq!((c.tau_s, c.tau_r, c.alpha, c.beta, c.lambda), (0.3, 0.3, 0.6, 0.4, 1.0));
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"top_k": 5, "mode": "no_retrace"}"#).unwrap();
        let c = RunConfig::from_file(&path).unwrap();
        assert_eq!(c.top_k, 5);
        assert_eq!(c.mode, Mode::NoRetrace);
        assert_eq!(c.n_max, 5);
    }

    #[test]
    fn secrets_are_not_accepted_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"llm_key": "sk-123"}"#).unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn cache_sits_beside_corpus() {
        let c = RunConfig {
            corpus_path: PathBuf::from("data/c.jsonl"),
            ..Default::default()
        };
        assert_eq!(c.cache_file(), PathBuf::from("data/c.jsonl.emb.jsonl"));
    }
}
