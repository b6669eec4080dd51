//! The `memgrow` command line: `ingest`, `ask`, `eval` and `path-debug`.
//!
//! Exit codes: 0 success, 2 configuration or usage, 3 transport, 4 data or
//! parse errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::agent::{run, AnswerFormat, FailureKind, Mode, Services, Session};
use crate::config::{RunConfig, EMBED_KEY_ENV, LLM_KEY_ENV};
use crate::corpus::{documents_from_plain_text, ingest, load_corpus, save_corpus, Document};
use crate::embedding::{EmbeddedIndex, Embedder, EmbeddingProvider, HashEmbedder, HttpEmbeddingProvider, ScenarioEmbedder};
use crate::eval::{load_dataset, run_eval, EvalEnv, EvalOptions, QaExample};
use crate::llm::{ChatProvider, HttpChatProvider, MockChatProvider, MockScenario};
use crate::seeds::{ExternalTagger, PosTagger, RuleTagger};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;
pub const EXIT_DATA: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    fn transport(message: impl Into<String>) -> Self {
        Self { code: EXIT_TRANSPORT, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "memgrow", version, about = "Deep search with grown memory fragments and memory path retracing")]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk and embed documents into a corpus file plus embedding cache.
    Ingest {
        /// JSONL documents (`doc_id`, `text`) or plain text split at blank lines.
        input: PathBuf,
    },
    /// Answer one question against the corpus.
    Ask {
        question: String,
        /// Four answer options; switches to multiple-choice answering.
        #[arg(long, num_args = 4, value_names = ["A", "B", "C", "D"])]
        choices: Option<Vec<String>>,
    },
    /// Evaluate a dataset and write report files.
    Eval {
        dataset: Option<PathBuf>,
    },
    /// Write the memory path debug dump of a saved session.
    PathDebug {
        session: PathBuf,
        /// Output file; defaults to `<output_dir>/path_debug.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub n_max: Option<u32>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub chunk_tokens: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tau_s: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tau_r: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub k_max: Option<usize>,
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true)]
    pub skip_errors: bool,
    #[arg(long, global = true, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub cache: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset_format: Option<String>,
    #[arg(long, global = true)]
    pub llm_url: Option<String>,
    #[arg(long, global = true)]
    pub llm_model: Option<String>,
    /// Scripted chat scenario file, or a directory of per-example scenarios.
    #[arg(long, global = true, value_name = "PATH")]
    pub llm_mock: Option<PathBuf>,
    #[arg(long, global = true)]
    pub embed_url: Option<String>,
    #[arg(long, global = true)]
    pub embed_model: Option<String>,
    /// `hash` for the hashing embedder, or a vector scenario file.
    #[arg(long, global = true)]
    pub embed_mock: Option<String>,
    #[arg(long, global = true)]
    pub tagger_command: Option<String>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        fn set_opt<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
            if value.is_some() {
                *slot = value.clone();
            }
        }
        set(&mut config.n_max, &self.n_max);
        set(&mut config.top_k, &self.top_k);
        set(&mut config.chunk_tokens, &self.chunk_tokens);
        set(&mut config.tau_s, &self.tau_s);
        set(&mut config.tau_r, &self.tau_r);
        set(&mut config.alpha, &self.alpha);
        set(&mut config.beta, &self.beta);
        set(&mut config.lambda, &self.lambda);
        set(&mut config.k_max, &self.k_max);
        set(&mut config.mode, &self.mode);
        set(&mut config.temperature, &self.temperature);
        set(&mut config.parallelism, &self.parallelism);
        if self.skip_errors {
            config.skip_errors = true;
        }
        set(&mut config.corpus_path, &self.corpus);
        set_opt(&mut config.cache_path, &self.cache);
        set(&mut config.output_dir, &self.output_dir);
        set(&mut config.dataset_format, &self.dataset_format);
        set_opt(&mut config.llm_url, &self.llm_url);
        set(&mut config.llm_model, &self.llm_model);
        set_opt(&mut config.llm_mock, &self.llm_mock);
        set_opt(&mut config.embed_url, &self.embed_url);
        set(&mut config.embed_model, &self.embed_model);
        set_opt(&mut config.embed_mock, &self.embed_mock);
        set_opt(&mut config.tagger_command, &self.tagger_command);
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Effective config: defaults, then the config file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path).map_err(CliError::config)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut config);
    config.validate().map_err(CliError::config)?;
    Ok(config)
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let config = resolve_config(&cli)?;
    match &cli.command {
        Command::Ingest { input } => cmd_ingest(input, &config),
        Command::Ask { question, choices } => {
            let format = match choices {
                Some(c) => AnswerFormat::MultipleChoice {
                    choices: [c[0].clone(), c[1].clone(), c[2].clone(), c[3].clone()],
                },
                None => AnswerFormat::Qa,
            };
            cmd_ask(question, &format, &config)
        }
        Command::Eval { dataset } => cmd_eval(dataset.as_deref(), &config),
        Command::PathDebug { session, out } => cmd_path_debug(session, out.as_deref(), &config),
    }
}

fn env_key(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|k| !k.is_empty())
}

/// Embedding provider from the config: a mock when set, else the endpoint.
pub fn embedding_provider(config: &RunConfig) -> Result<Arc<dyn EmbeddingProvider>, CliError> {
    if let Some(mock) = &config.embed_mock {
        if mock == "hash" {
            return Ok(Arc::new(HashEmbedder::new(config.embed_dim)));
        }
        let text = fs::read_to_string(mock).map_err(|e| CliError::config(format!("{mock}: {e}")))?;
        let scenario = ScenarioEmbedder::from_json(&text).map_err(|e| CliError::config(format!("{mock}: {e}")))?;
        return Ok(Arc::new(scenario));
    }
    match &config.embed_url {
        Some(url) => Ok(Arc::new(HttpEmbeddingProvider::new(
            url,
            &config.embed_model,
            env_key(EMBED_KEY_ENV),
            config.retry(),
        ))),
        None => Err(CliError::config("no embedding provider configured (set embed_url or embed_mock)")),
    }
}

fn load_scenario(path: &Path) -> Result<MockScenario, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    MockScenario::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn http_chat(config: &RunConfig, url: &str) -> HttpChatProvider {
    let provider = HttpChatProvider::new(url, &config.llm_model, env_key(LLM_KEY_ENV), config.retry());
    match config.max_tokens {
        Some(n) => provider.with_max_tokens(n),
        None => provider,
    }
}

/// Chat provider for a single question.
pub fn chat_provider(config: &RunConfig) -> Result<Arc<dyn ChatProvider>, CliError> {
    if let Some(mock) = &config.llm_mock {
        if mock.is_dir() {
            return Err(CliError::config(format!(
                "{}: a scenario directory only applies to eval",
                mock.display()
            )));
        }
        return Ok(Arc::new(MockChatProvider::new(load_scenario(mock)?)));
    }
    match &config.llm_url {
        Some(url) => Ok(Arc::new(http_chat(config, url))),
        None => Err(CliError::config("no chat provider configured (set llm_url or llm_mock)")),
    }
}

pub fn tagger(config: &RunConfig) -> Result<Box<dyn PosTagger>, CliError> {
    match &config.tagger_command {
        Some(command) => {
            let mut words = command.split_whitespace().map(str::to_string);
            let program = words.next().ok_or_else(|| CliError::config("tagger_command is empty"))?;
            Ok(Box::new(ExternalTagger {
                program,
                args: words.collect(),
            }))
        }
        None => Ok(Box::new(RuleTagger)),
    }
}

fn embed_error(e: crate::embedding::EmbedError) -> CliError {
    if e.is_transport() {
        CliError::transport(e.to_string())
    } else {
        CliError::data(e.to_string())
    }
}

fn embedder_with_cache(config: &RunConfig, cache: &Path) -> Result<Embedder, CliError> {
    let embedder = Embedder::new(embedding_provider(config)?);
    if cache.exists() {
        embedder.load_cache(cache).map_err(|e| CliError::data(e.to_string()))?;
    }
    Ok(embedder)
}

/// Eval builds per-example corpora, so its cache does not sit beside the
/// configured corpus unless a cache path is given explicitly.
fn eval_cache_file(config: &RunConfig) -> PathBuf {
    config
        .cache_path
        .clone()
        .unwrap_or_else(|| config.output_dir.join("eval.emb.jsonl"))
}

fn read_documents(input: &Path) -> Result<Vec<Document>, CliError> {
    let text = fs::read_to_string(input).map_err(|e| CliError::data(format!("{}: {e}", input.display())))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.trim_start().starts_with('{') {
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(line)
                .map_err(|e| CliError::data(format!("{}:{}: {e}", input.display(), i + 1)))?;
            docs.push(doc);
        }
        Ok(docs)
    } else {
        let prefix = input.file_stem().and_then(|s| s.to_str()).unwrap_or("doc");
        Ok(documents_from_plain_text(&text, prefix))
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn cmd_ingest(input: &Path, config: &RunConfig) -> Result<(), CliError> {
    let cache = config.cache_file();
    let embedder = embedder_with_cache(config, &cache)?;
    let documents = read_documents(input)?;
    let collection = ingest(&documents, config.chunk_tokens).map_err(|e| CliError::data(e.to_string()))?;
    let index = EmbeddedIndex::build(&collection, &embedder).map_err(embed_error)?;
    if let Some(parent) = config.corpus_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_corpus(&collection, &config.corpus_path).map_err(|e| CliError::data(e.to_string()))?;
    embedder.save_cache(&cache).map_err(|e| CliError::data(e.to_string()))?;
    let stats = embedder.stats();
    println!(
        "documents: {}  chunks: {}  tokens: {}  dim: {}",
        collection.document_count(),
        collection.len(),
        collection.token_count(),
        index.dim()
    );
    println!(
        "embeddings: {} new, {} cached, {} provider calls",
        stats.misses, stats.hits, stats.provider_calls
    );
    println!("corpus: {}", config.corpus_path.display());
    println!("cache: {}", cache.display());
    Ok(())
}

fn failure_error(session: &Session) -> Option<CliError> {
    session.failure.as_ref().map(|f| match f.kind {
        FailureKind::Transport | FailureKind::Provider => CliError::transport(f.message.clone()),
        FailureKind::Data => CliError::data(f.message.clone()),
    })
}

pub fn cmd_ask(question: &str, format: &AnswerFormat, config: &RunConfig) -> Result<(), CliError> {
    let llm = chat_provider(config)?;
    let tagger = tagger(config)?;
    let embedder = embedder_with_cache(config, &config.cache_file())?;
    let collection = load_corpus(&config.corpus_path)
        .map_err(|e| CliError::data(format!("{}: {e}", config.corpus_path.display())))?;
    let index = EmbeddedIndex::build(&collection, &embedder).map_err(embed_error)?;
    let services = Services {
        index: &index,
        embedder: &embedder,
        tagger: tagger.as_ref(),
        llm: llm.as_ref(),
    };
    let mut session = run(question, format, &config.agent(), &services).map_err(|e| CliError::config(e.to_string()))?;
    session.run_config = Some(config.snapshot());
    let path = config.output_dir.join("session.json");
    write_file(&path, &session.to_json())?;
    // Query embeddings are worth keeping; a failed save is not fatal.
    if let Err(e) = embedder.save_cache(&config.cache_file()) {
        log::warn!("could not update embedding cache: {e}");
    }
    for warning in &session.warnings {
        eprintln!("warning: {warning}");
    }
    if let Some(err) = failure_error(&session) {
        eprintln!("session saved to {}", path.display());
        return Err(err);
    }
    println!("{}", session.answer.as_deref().unwrap_or(""));
    Ok(())
}

type Factory = Box<dyn Fn(&QaExample) -> Result<Arc<dyn ChatProvider>, String> + Sync>;

fn eval_provider_factory(config: &RunConfig) -> Result<Factory, CliError> {
    if let Some(mock) = &config.llm_mock {
        if mock.is_dir() {
            let dir = mock.clone();
            return Ok(Box::new(move |example: &QaExample| {
                let path = dir.join(format!("{}.json", example.example_id));
                let scenario = load_scenario(&path).map_err(|e| e.message)?;
                Ok(Arc::new(MockChatProvider::new(scenario)) as Arc<dyn ChatProvider>)
            }));
        }
        let scenario = load_scenario(mock)?;
        // Each example gets a fresh copy so `once` rules start unused.
        return Ok(Box::new(move |_: &QaExample| {
            Ok(Arc::new(MockChatProvider::new(scenario.clone())) as Arc<dyn ChatProvider>)
        }));
    }
    match &config.llm_url {
        Some(url) => {
            let shared: Arc<dyn ChatProvider> = Arc::new(http_chat(config, url));
            Ok(Box::new(move |_: &QaExample| Ok(shared.clone())))
        }
        None => Err(CliError::config("no chat provider configured (set llm_url or llm_mock)")),
    }
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

pub fn cmd_eval(dataset: Option<&Path>, config: &RunConfig) -> Result<(), CliError> {
    let path = dataset
        .map(Path::to_path_buf)
        .or_else(|| config.dataset_path.clone())
        .ok_or_else(|| CliError::config("no dataset given (argument or dataset_path)"))?;
    let factory = eval_provider_factory(config)?;
    let tagger = tagger(config)?;
    let cache = eval_cache_file(config);
    let embedder = embedder_with_cache(config, &cache)?;
    let examples = load_dataset(&path, &config.dataset_format).map_err(|e| match e {
        crate::eval::EvalError::Format(_) => CliError::config(e.to_string()),
        other => CliError::data(format!("{}: {other}", path.display())),
    })?;
    let env = EvalEnv {
        embedder: &embedder,
        tagger: tagger.as_ref(),
        provider_for: factory.as_ref(),
        chunk_size: config.chunk_tokens,
    };
    let snapshot = config.snapshot();
    let options = EvalOptions {
        parallelism: config.parallelism,
        skip_errors: config.skip_errors,
        config_snapshot: snapshot.clone(),
    };
    let (report, sessions) =
        run_eval(&examples, &config.agent(), &env, &options).map_err(|e| CliError::config(e.to_string()))?;

    let out = &config.output_dir;
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&out.join("report.json"), &report_json)?;
    write_file(&out.join("report.txt"), &report.to_table())?;
    for (id, mut session) in sessions {
        session.run_config = Some(snapshot.clone());
        write_file(&out.join("sessions").join(format!("{}.json", file_safe(&id))), &session.to_json())?;
    }
    if let Err(e) = embedder.save_cache(&cache) {
        log::warn!("could not update embedding cache: {e}");
    }
    println!("{}", report.headline());

    if !config.skip_errors {
        let errors: Vec<&String> = report.examples.iter().filter_map(|r| r.error.as_ref()).collect();
        if !errors.is_empty() {
            let message = format!("{} example(s) failed; first: {}", errors.len(), errors[0]);
            let transport = errors
                .iter()
                .any(|e| e.starts_with("transport:") || e.starts_with("provider:"));
            return Err(if transport {
                CliError::transport(message)
            } else {
                CliError::data(message)
            });
        }
    }
    Ok(())
}

pub fn cmd_path_debug(session_path: &Path, out: Option<&Path>, config: &RunConfig) -> Result<(), CliError> {
    let text = fs::read_to_string(session_path)
        .map_err(|e| CliError::data(format!("{}: {e}", session_path.display())))?;
    let session = Session::from_json(&text).map_err(|e| CliError::data(format!("{}: {e}", session_path.display())))?;
    let debug = session.path_debug();
    let mut value = serde_json::to_value(&debug).expect("path debug serializes");
    if let Value::Object(map) = &mut value {
        map.insert("run_config".into(), config.snapshot());
    }
    let target = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.join("path_debug.json"));
    write_file(&target, &serde_json::to_string_pretty(&value).expect("json serializes"))?;
    println!(
        "path: {} step(s), objective {:.6}, region {} of {} fragment(s) -> {}",
        debug.path.len(),
        debug.path.objective,
        debug.region.members.len(),
        debug.fragments.len(),
        target.display()
    );
    Ok(())
}
