//! Batch evaluation over QA datasets with per-example corpora.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{run, AgentConfig, AnswerFormat, FailureKind, Services, Session, Termination};
use crate::corpus::{ingest, Document};
use crate::embedding::{EmbeddedIndex, Embedder};
use crate::llm::ChatProvider;
use crate::metrics::{exact_match, qa_f1, rouge_l, Language};
use crate::seeds::PosTagger;

pub const REPORT_SCHEMA: &str = "memgrow-report/1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("dataset line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("unknown dataset format `{0}` (expected `longbench` or `longbench-v2`)")]
    Format(String),
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Qa,
    MultipleChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub example_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub context: String,
    pub language: Language,
    pub task_kind: TaskKind,
    pub choices: Option<[String; 4]>,
}

impl QaExample {
    pub fn answer_format(&self) -> AnswerFormat {
        match &self.choices {
            Some(choices) => AnswerFormat::MultipleChoice {
                choices: choices.clone(),
            },
            None => AnswerFormat::Qa,
        }
    }
}

fn field<'a>(record: &'a Value, name: &str, line: usize) -> Result<&'a Value, EvalError> {
    record
        .get(name)
        .filter(|v| !v.is_null())
        .ok_or_else(|| EvalError::MissingField {
            line,
            field: name.to_string(),
        })
}

fn string_field(record: &Value, name: &str, line: usize) -> Result<String, EvalError> {
    match field(record, name, line)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(EvalError::Record {
            line,
            message: format!("field `{name}` must be a string"),
        }),
    }
}

/// Parses one JSONL record with fields `_id`, `input`, `answers`, `context`,
/// optional `language` and optional `choice_A`..`choice_D`.
pub fn parse_record(line_text: &str, line: usize, require_choices: bool) -> Result<QaExample, EvalError> {
    let record: Value = serde_json::from_str(line_text).map_err(|e| EvalError::Record {
        line,
        message: e.to_string(),
    })?;
    let example_id = string_field(&record, "_id", line)?;
    let question = string_field(&record, "input", line)?;
    let gold_answers = match field(&record, "answers", line)? {
        Value::Array(items) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                other => Ok(other.to_string()),
            })
            .collect::<Result<Vec<_>, EvalError>>()?,
        Value::String(s) => vec![s.clone()],
        _ => {
            return Err(EvalError::Record {
                line,
                message: "field `answers` must be a list of strings".into(),
            })
        }
    };
    if gold_answers.is_empty() {
        return Err(EvalError::Record {
            line,
            message: "field `answers` is empty".into(),
        });
    }
    let context = string_field(&record, "context", line)?;
    if context.trim().is_empty() {
        return Err(EvalError::Record {
            line,
            message: "field `context` is empty".into(),
        });
    }
    let language = match record.get("language").and_then(Value::as_str) {
        None | Some("en") => Language::En,
        Some("zh") => Language::Zh,
        Some(other) => {
            return Err(EvalError::Record {
                line,
                message: format!("unsupported language `{other}`"),
            })
        }
    };
    let names = ["choice_A", "choice_B", "choice_C", "choice_D"];
    let present = names.iter().filter(|n| record.get(**n).is_some()).count();
    let choices = if present > 0 || require_choices {
        let mut out: [String; 4] = Default::default();
        for (slot, name) in out.iter_mut().zip(names) {
            *slot = string_field(&record, name, line)?;
        }
        Some(out)
    } else {
        None
    };
    Ok(QaExample {
        example_id,
        question,
        gold_answers,
        context,
        language,
        task_kind: if choices.is_some() { TaskKind::MultipleChoice } else { TaskKind::Qa },
        choices,
    })
}

/// Loads a JSONL dataset. `longbench` accepts QA and multiple-choice records;
/// `longbench-v2` requires the four choices on every record.
pub fn load_dataset(path: &Path, format_tag: &str) -> Result<Vec<QaExample>, EvalError> {
    let require_choices = match format_tag {
        "longbench" | "jsonl" => false,
        "longbench-v2" => true,
        other => return Err(EvalError::Format(other.to_string())),
    };
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l, i + 1, require_choices))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRow {
    pub example_id: String,
    pub task_kind: TaskKind,
    pub prediction: String,
    /// Metric values are percentages in [0, 100].
    pub qa_f1: f64,
    pub exact_match: f64,
    pub rouge_l: f64,
    pub rounds: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub termination: Option<Termination>,
    pub error: Option<String>,
    /// Excluded from the aggregate (only with `skip_errors`).
    pub skipped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub qa_f1: f64,
    pub exact_match: f64,
    pub rouge_l: f64,
    /// Letter accuracy over multiple-choice rows, if any.
    pub accuracy: Option<f64>,
    pub scored: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub mean_prompt: f64,
    pub mean_completion: f64,
    pub mean_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub config: Value,
    pub examples: Vec<ExampleRow>,
    pub aggregate: Aggregate,
    pub tokens: TokenStats,
}

/// Builds a chat provider for one example.
pub type ProviderFactory<'a> = dyn Fn(&QaExample) -> Result<Arc<dyn ChatProvider>, String> + Sync + 'a;

pub struct EvalEnv<'a> {
    pub embedder: &'a Embedder,
    pub tagger: &'a dyn PosTagger,
    pub provider_for: &'a ProviderFactory<'a>,
    pub chunk_size: usize,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub parallelism: usize,
    pub skip_errors: bool,
    /// Echoed into the report; defaults to the agent config when null.
    pub config_snapshot: Value,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            skip_errors: false,
            config_snapshot: Value::Null,
        }
    }
}

fn failed_row(example: &QaExample, error: String, skip: bool, session: Option<&Session>) -> ExampleRow {
    ExampleRow {
        example_id: example.example_id.clone(),
        task_kind: example.task_kind,
        prediction: String::new(),
        qa_f1: 0.0,
        exact_match: 0.0,
        rouge_l: 0.0,
        rounds: session.map_or(0, |s| s.rounds.len()),
        prompt_tokens: session.map_or(0, |s| s.token_ledger.prompt_tokens),
        completion_tokens: session.map_or(0, |s| s.token_ledger.completion_tokens),
        termination: session.and_then(|s| s.termination),
        error: Some(error),
        skipped: skip,
    }
}

/// Runs one example on its own corpus and scores it.
pub fn evaluate_example(
    example: &QaExample,
    config: &AgentConfig,
    env: &EvalEnv<'_>,
    skip_errors: bool,
) -> (ExampleRow, Option<Session>) {
    let docs = [Document::new(example.example_id.clone(), example.context.clone())];
    let index = match ingest(&docs, env.chunk_size)
        .map_err(|e| e.to_string())
        .and_then(|c| EmbeddedIndex::build(&c, env.embedder).map_err(|e| e.to_string()))
    {
        Ok(i) => i,
        Err(e) => return (failed_row(example, e, skip_errors, None), None),
    };
    let provider = match (env.provider_for)(example) {
        Ok(p) => p,
        Err(e) => return (failed_row(example, e, skip_errors, None), None),
    };
    let services = Services {
        index: &index,
        embedder: env.embedder,
        tagger: env.tagger,
        llm: provider.as_ref(),
    };
    let session = match run(&example.question, &example.answer_format(), config, &services) {
        Ok(s) => s,
        Err(e) => return (failed_row(example, e.to_string(), skip_errors, None), None),
    };
    if let Some(failure) = &session.failure {
        let kind = match failure.kind {
            FailureKind::Transport => "transport",
            FailureKind::Provider => "provider",
            FailureKind::Data => "data",
        };
        let row = failed_row(example, format!("{kind}: {}", failure.message), skip_errors, Some(&session));
        return (row, Some(session));
    }
    let prediction = session.answer.clone().unwrap_or_default();
    let golds = &example.gold_answers;
    let lang = example.language;
    let row = ExampleRow {
        example_id: example.example_id.clone(),
        task_kind: example.task_kind,
        qa_f1: 100.0 * qa_f1(&prediction, golds, lang),
        exact_match: 100.0 * exact_match(&prediction, golds, lang),
        rouge_l: 100.0 * rouge_l(&prediction, golds, lang),
        prediction,
        rounds: session.rounds.len(),
        prompt_tokens: session.token_ledger.prompt_tokens,
        completion_tokens: session.token_ledger.completion_tokens,
        termination: session.termination,
        error: None,
        skipped: false,
    };
    (row, Some(session))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Aggregates rows; skipped rows are left out of every mean.
pub fn summarize(rows: &[ExampleRow]) -> (Aggregate, TokenStats) {
    let counted: Vec<&ExampleRow> = rows.iter().filter(|r| !r.skipped).collect();
    let mc: Vec<&&ExampleRow> = counted.iter().filter(|r| r.task_kind == TaskKind::MultipleChoice).collect();
    let aggregate = Aggregate {
        qa_f1: mean(counted.iter().map(|r| r.qa_f1)),
        exact_match: mean(counted.iter().map(|r| r.exact_match)),
        rouge_l: mean(counted.iter().map(|r| r.rouge_l)),
        accuracy: (!mc.is_empty()).then(|| mean(mc.iter().map(|r| r.exact_match))),
        scored: counted.len(),
        failed: rows.iter().filter(|r| r.error.is_some()).count(),
    };
    let tokens = TokenStats {
        mean_prompt: mean(counted.iter().map(|r| r.prompt_tokens as f64)),
        mean_completion: mean(counted.iter().map(|r| r.completion_tokens as f64)),
        mean_total: mean(counted.iter().map(|r| (r.prompt_tokens + r.completion_tokens) as f64)),
    };
    (aggregate, tokens)
}

/// Evaluates every example on a bounded worker pool. Rows and sessions come
/// back sorted by example id, so the report does not depend on scheduling.
pub fn run_eval(
    dataset: &[QaExample],
    config: &AgentConfig,
    env: &EvalEnv<'_>,
    options: &EvalOptions,
) -> Result<(EvalReport, Vec<(String, Session)>), EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let mut results: Vec<(ExampleRow, Option<Session>)> = pool.install(|| {
        dataset
            .par_iter()
            .map(|example| evaluate_example(example, config, env, options.skip_errors))
            .collect()
    });
    results.sort_by(|a, b| a.0.example_id.cmp(&b.0.example_id));
    let sessions: Vec<(String, Session)> = results
        .iter_mut()
        .filter_map(|(row, session)| session.take().map(|s| (row.example_id.clone(), s)))
        .collect();
    let rows: Vec<ExampleRow> = results.into_iter().map(|(row, _)| row).collect();
    let (aggregate, tokens) = summarize(&rows);
    let config_snapshot = if options.config_snapshot.is_null() {
        serde_json::to_value(config).expect("config serializes")
    } else {
        options.config_snapshot.clone()
    };
    Ok((
        EvalReport {
            schema: REPORT_SCHEMA.to_string(),
            config: config_snapshot,
            examples: rows,
            aggregate,
            tokens,
        },
        sessions,
    ))
}

impl EvalReport {
    /// Aligned plain-text table with one row per example and a mean row.
    pub fn to_table(&self) -> String {
        let id_width = self
            .examples
            .iter()
            .map(|r| r.example_id.len())
            .chain(["example".len(), "mean".len()])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        writeln!(
            out,
            "{:<id_width$}  {:>7}  {:>7}  {:>7}  {:>6}  {:>9}  status",
            "example", "F1", "EM", "ROUGE-L", "rounds", "tokens"
        )
        .unwrap();
        for r in &self.examples {
            let status = match (&r.error, r.skipped) {
                (Some(_), true) => "skipped",
                (Some(_), false) => "failed",
                _ => "ok",
            };
            writeln!(
                out,
                "{:<id_width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>6}  {:>9}  {status}",
                r.example_id,
                r.qa_f1,
                r.exact_match,
                r.rouge_l,
                r.rounds,
                r.prompt_tokens + r.completion_tokens
            )
            .unwrap();
        }
        writeln!(
            out,
            "{:<id_width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>6}  {:>9.1}",
            "mean", self.aggregate.qa_f1, self.aggregate.exact_match, self.aggregate.rouge_l, "", self.tokens.mean_total
        )
        .unwrap();
        if let Some(acc) = self.aggregate.accuracy {
            writeln!(out, "multiple-choice accuracy: {acc:.2}").unwrap();
        }
        out
    }

    /// One-line summary.
    pub fn headline(&self) -> String {
        format!(
            "examples={} scored={} failed={} F1={:.2} EM={:.2} ROUGE-L={:.2} mean_tokens={:.1}",
            self.examples.len(),
            self.aggregate.scored,
            self.aggregate.failed,
            self.aggregate.qa_f1,
            self.aggregate.exact_match,
            self.aggregate.rouge_l,
            self.tokens.mean_total
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_qa_record() {
        let ex = parse_record(
            r#"{"_id":"x1","input":"Who?","answers":["Ann"],"context":"Ann did it.","language":"en"}"#,
            1,
            false,
        )
        .unwrap();
        assert_eq!(ex.task_kind, TaskKind::Qa);
        assert_eq!(ex.gold_answers, vec!["Ann"]);
    }

    #[test]
    fn missing_answers_names_field_and_line() {
        let err = parse_record(r#"{"_id":"x","input":"q","context":"c"}"#, 7, false).unwrap_err();
        match err {
            EvalError::MissingField { line, field } => {
                assert_eq!(line, 7);
                assert_eq!(field, "answers");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn choices_make_multiple_choice() {
        let ex = parse_record(
            r#"{"_id":"m","input":"q","answers":["B"],"context":"c","choice_A":"1","choice_B":"2","choice_C":"3","choice_D":"4"}"#,
            1,
            false,
        )
        .unwrap();
        assert_eq!(ex.task_kind, TaskKind::MultipleChoice);
        assert_eq!(ex.choices.as_ref().unwrap()[1], "2");
        assert!(parse_record(r#"{"_id":"m","input":"q","answers":["B"],"context":"c"}"#, 1, true).is_err());
    }

    #[test]
    fn summary_skips_only_flagged_rows() {
        let row = |id: &str, f1: f64, err: bool, skipped: bool| ExampleRow {
            example_id: id.into(),
            task_kind: TaskKind::Qa,
            prediction: String::new(),
            qa_f1: f1,
            exact_match: 0.0,
            rouge_l: 0.0,
            rounds: 0,
            prompt_tokens: 10,
            completion_tokens: 2,
            termination: None,
            error: err.then(|| "boom".to_string()),
            skipped,
        };
        let (agg, tokens) = summarize(&[row("a", 100.0, false, false), row("b", 0.0, true, false)]);
        assert_eq!(agg.qa_f1, 50.0);
        assert_eq!(agg.failed, 1);
        assert_eq!(tokens.mean_total, 12.0);
        let (agg, _) = summarize(&[row("a", 100.0, false, false), row("b", 0.0, true, true)]);
        assert_eq!(agg.qa_f1, 100.0);
        assert_eq!(agg.scored, 1);
    }
}
