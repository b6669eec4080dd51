//! Embedding providers, the content-addressed embedding cache, and flat
//! cosine top-k retrieval over an embedded chunk collection.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{tokenize, Chunk, ChunkCollection};
use crate::query::Query;
use crate::transport::{JsonClient, RetryPolicy, TransportError};

pub const EMBED_CACHE_SCHEMA: &str = "memgrow-embcache/1";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding transport error: {0}")]
    Transport(#[from] TransportError),
    #[error("embedding provider error: {0}")]
    Provider(String),
    #[error("embedding dimension mismatch: index has {expected}, provider returned {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector domain error: {0}")]
    Domain(String),
    #[error("index is not embedded: {0}")]
    Unembedded(String),
    #[error("embedding cache error at line {line}: {message}")]
    Cache { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EmbedError {
    /// Errors a caller may retry later; everything else is a configuration
    /// or data problem.
    pub fn is_transport(&self) -> bool {
        matches!(self, EmbedError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVector")]
pub struct EmbeddingVector {
    values: Vec<f64>,
    dim: usize,
    normalized: bool,
}

#[derive(Deserialize)]
struct RawVector {
    values: Vec<f64>,
    normalized: bool,
}

impl TryFrom<RawVector> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(raw: RawVector) -> Result<Self, Self::Error> {
        let mut v = EmbeddingVector::new(raw.values)?;
        if raw.normalized {
            if (v.norm() - 1.0).abs() > 1e-6 {
                return Err(EmbedError::Domain("vector flagged normalized is not unit length".into()));
            }
            v.normalized = true;
        }
        Ok(v)
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Domain("zero-dimensional vector".into()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::Domain("non-finite component".into()));
        }
        Ok(Self {
            dim: values.len(),
            values,
            normalized: false,
        })
    }

    /// Builds a unit vector from raw components.
    pub fn unit(values: Vec<f64>) -> Result<Self, EmbedError> {
        Self::new(values)?.normalize()
    }

    /// Reloads a persisted vector, keeping its bits when it is already unit
    /// length so that reloaded caches reproduce identical scores.
    fn stored(values: Vec<f64>) -> Result<Self, EmbedError> {
        let mut v = Self::new(values)?;
        if (v.norm() - 1.0).abs() <= 1e-9 {
            v.normalized = true;
            Ok(v)
        } else {
            v.normalize()
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn normalize(self) -> Result<Self, EmbedError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(EmbedError::Domain("cannot normalize a zero vector".into()));
        }
        if self.normalized {
            return Ok(self);
        }
        Ok(Self {
            values: self.values.iter().map(|x| x / norm).collect(),
            dim: self.dim,
            normalized: true,
        })
    }
}

/// Cosine similarity, clamped to [-1, 1]. For two normalized vectors this is
/// their dot product.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    if u.dim != v.dim {
        return Err(EmbedError::Domain(format!(
            "dimension mismatch: {} vs {}",
            u.dim, v.dim
        )));
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    let sim = if u.normalized && v.normalized {
        dot
    } else {
        let (nu, nv) = (u.norm(), v.norm());
        if nu == 0.0 || nv == 0.0 {
            return Err(EmbedError::Domain("zero vector".into()));
        }
        dot / (nu * nv)
    };
    Ok(sim.clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    /// Identifies the model; part of the cache key.
    fn model(&self) -> &str;

    /// One raw vector per input, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbeddingProvider {
    client: JsonClient,
    model: String,
}

impl HttpEmbeddingProvider {
    pub fn new(url: &str, model: &str, api_key: Option<String>, policy: RetryPolicy) -> Self {
        Self {
            client: JsonClient::new(url, api_key, policy),
            model: model.to_string(),
        }
    }
}

fn parse_vector(value: &Value) -> Option<Vec<f64>> {
    value.as_array()?.iter().map(Value::as_f64).collect()
}

/// Accepts `{"data": [{"embedding": [...], "index": i}]}` or
/// `{"embeddings": [[...]]}`.
pub(crate) fn parse_embedding_response(body: &Value, expected: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let malformed = |m: &str| EmbedError::Transport(TransportError::Malformed(m.to_string()));
    let vectors: Vec<Vec<f64>> = if let Some(data) = body.get("data").and_then(Value::as_array) {
        let mut indexed = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let vector = item
                .get("embedding")
                .and_then(parse_vector)
                .ok_or_else(|| malformed("data item without numeric `embedding`"))?;
            let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            indexed.push((index, vector));
        }
        indexed.sort_by_key(|(i, _)| *i);
        indexed.into_iter().map(|(_, v)| v).collect()
    } else if let Some(list) = body.get("embeddings").and_then(Value::as_array) {
        list.iter()
            .map(|v| parse_vector(v).ok_or_else(|| malformed("non-numeric embedding")))
            .collect::<Result<_, _>>()?
    } else {
        return Err(malformed("response has neither `data` nor `embeddings`"));
    };
    if vectors.len() != expected {
        return Err(malformed(&format!(
            "expected {expected} vectors, got {}",
            vectors.len()
        )));
    }
    Ok(vectors)
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let body = json!({ "model": self.model, "input": texts });
        let (value, _) = self.client.post(&body)?;
        parse_embedding_response(&value, texts.len())
    }
}

fn sha256(bytes: &[u8]) -> Vec<u8> {
    Sha256::digest(bytes).to_vec()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic feature-hashing embedder: each lowercased token adds one
/// count to a hashed bucket. Texts sharing vocabulary get positive cosine.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    model: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hash embedder needs a positive dimension");
        Self {
            dim,
            model: format!("hash-{dim}"),
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let digest = sha256(token.to_lowercase().as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) % self.dim as u64;
            v[bucket as usize] += 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Scenario embedder: exact-string vectors with an optional hashing fallback.
#[derive(Debug, Clone)]
pub struct ScenarioEmbedder {
    vectors: HashMap<String, Vec<f64>>,
    fallback: Option<HashEmbedder>,
    model: String,
}

#[derive(Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    vectors: HashMap<String, Vec<f64>>,
    #[serde(default)]
    fallback_dim: Option<usize>,
}

impl ScenarioEmbedder {
    pub fn new(vectors: HashMap<String, Vec<f64>>, fallback_dim: Option<usize>) -> Self {
        Self {
            vectors,
            fallback: fallback_dim.map(HashEmbedder::new),
            model: "scenario".into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, EmbedError> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| EmbedError::Provider(e.to_string()))?;
        Ok(Self::new(file.vectors, file.fallback_dim))
    }
}

impl EmbeddingProvider for ScenarioEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts
            .iter()
            .map(|t| match (self.vectors.get(t), &self.fallback) {
                (Some(v), _) => Ok(v.clone()),
                (None, Some(h)) => Ok(h.vector(t)),
                (None, None) => Err(EmbedError::Provider(format!("no scenario vector for {t:?}"))),
            })
            .collect()
    }
}

/// Content-addressed cache in front of a provider. Stored vectors are
/// L2-normalized; the first vector fixes the dimension.
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    cache: Mutex<BTreeMap<String, EmbeddingVector>>,
    dim: Mutex<Option<usize>>,
    batch_size: usize,
    hits: AtomicUsize,
    misses: AtomicUsize,
    provider_calls: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub provider_calls: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    schema: String,
    model: String,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    vector: Vec<f64>,
}

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            provider,
            cache: Mutex::new(BTreeMap::new()),
            dim: Mutex::new(None),
            batch_size: 32,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            provider_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn model(&self) -> &str {
        self.provider.model()
    }

    pub fn dim(&self) -> Option<usize> {
        *self.dim.lock().unwrap()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            provider_calls: self.provider_calls.load(Ordering::Relaxed),
        }
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    fn key(&self, text: &str) -> String {
        let mut bytes = self.provider.model().as_bytes().to_vec();
        bytes.push(0);
        bytes.extend_from_slice(text.as_bytes());
        hex(&sha256(&bytes))
    }

    fn check_dim(&self, found: usize) -> Result<(), EmbedError> {
        let mut dim = self.dim.lock().unwrap();
        match *dim {
            Some(expected) if expected != found => Err(EmbedError::DimensionMismatch { expected, found }),
            Some(_) => Ok(()),
            None => {
                *dim = Some(found);
                Ok(())
            }
        }
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_many(&[text.to_string()])?.remove(0))
    }

    /// Embeds texts, calling the provider only for cache misses.
    pub fn embed_many(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let keys: Vec<String> = texts.iter().map(|t| self.key(t)).collect();
        let mut missing: Vec<(String, String)> = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            for (key, text) in keys.iter().zip(texts) {
                if cache.contains_key(key) || missing.iter().any(|(k, _)| k == key) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                } else {
                    missing.push((key.clone(), text.clone()));
                }
            }
        }
        for batch in missing.chunks(self.batch_size) {
            let inputs: Vec<String> = batch.iter().map(|(_, t)| t.clone()).collect();
            self.provider_calls.fetch_add(1, Ordering::Relaxed);
            let raw = self.provider.embed_batch(&inputs)?;
            if raw.len() != inputs.len() {
                return Err(EmbedError::Provider(format!(
                    "provider returned {} vectors for {} inputs",
                    raw.len(),
                    inputs.len()
                )));
            }
            for ((key, _), values) in batch.iter().zip(raw) {
                self.check_dim(values.len())?;
                let vector = EmbeddingVector::unit(values)?;
                self.misses.fetch_add(1, Ordering::Relaxed);
                self.cache.lock().unwrap().insert(key.clone(), vector);
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(keys.iter().map(|k| cache[k].clone()).collect())
    }

    pub fn save_cache(&self, path: &Path) -> Result<(), EmbedError> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        let header = CacheHeader {
            schema: EMBED_CACHE_SCHEMA.into(),
            model: self.model().to_string(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).unwrap())?;
        for (key, vector) in self.cache.lock().unwrap().iter() {
            let record = CacheRecord {
                key: key.clone(),
                vector: vector.values().to_vec(),
            };
            writeln!(out, "{}", serde_json::to_string(&record).unwrap())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Loads a cache file written for the same model. A cache written for a
    /// different model is ignored; returns the number of entries loaded.
    pub fn load_cache(&self, path: &Path) -> Result<usize, EmbedError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let Some(first) = lines.next() else { return Ok(0) };
        let header: CacheHeader = serde_json::from_str(&first?).map_err(|e| EmbedError::Cache {
            line: 1,
            message: e.to_string(),
        })?;
        if header.schema != EMBED_CACHE_SCHEMA {
            return Err(EmbedError::Cache {
                line: 1,
                message: format!("unsupported schema `{}`", header.schema),
            });
        }
        if header.model != self.model() {
            return Ok(0);
        }
        let mut loaded = 0;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CacheRecord = serde_json::from_str(&line).map_err(|e| EmbedError::Cache {
                line: i + 2,
                message: e.to_string(),
            })?;
            self.check_dim(record.vector.len())?;
            let vector = EmbeddingVector::stored(record.vector)?;
            self.cache.lock().unwrap().insert(record.key, vector);
            loaded += 1;
        }
        Ok(loaded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBatch {
    pub query: Query,
    pub hits: Vec<Hit>,
    pub k: usize,
}

/// Chunk collection with one normalized vector per chunk.
#[derive(Debug, Clone)]
pub struct EmbeddedIndex {
    chunks: Vec<Chunk>,
    vectors: Vec<EmbeddingVector>,
    positions: HashMap<String, usize>,
}

impl EmbeddedIndex {
    pub fn build(collection: &ChunkCollection, embedder: &Embedder) -> Result<Self, EmbedError> {
        let texts: Vec<String> = collection.chunks().iter().map(|c| c.text.clone()).collect();
        let vectors = embedder.embed_many(&texts)?;
        Self::from_parts(collection.chunks().to_vec(), vectors)
    }

    pub fn from_parts(chunks: Vec<Chunk>, vectors: Vec<EmbeddingVector>) -> Result<Self, EmbedError> {
        if chunks.is_empty() {
            return Err(EmbedError::Unembedded("index has no chunks".into()));
        }
        if chunks.len() != vectors.len() {
            return Err(EmbedError::Unembedded(format!(
                "{} chunks but {} vectors",
                chunks.len(),
                vectors.len()
            )));
        }
        let dim = vectors[0].dim();
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        let vectors = vectors
            .into_iter()
            .map(EmbeddingVector::normalize)
            .collect::<Result<Vec<_>, _>>()?;
        let positions = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
        Ok(Self {
            chunks,
            vectors,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.positions.get(chunk_id).map(|&i| &self.chunks[i])
    }

    /// Exhaustive top-k by cosine; ties go to the smaller chunk id.
    pub fn search(&self, query: &Query, query_vector: &EmbeddingVector, k: usize) -> Result<RetrievalBatch, EmbedError> {
        if query_vector.dim() != self.dim() {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim(),
                found: query_vector.dim(),
            });
        }
        let mut hits = self
            .chunks
            .iter()
            .zip(&self.vectors)
            .map(|(chunk, v)| {
                Ok(Hit {
                    chunk_id: chunk.chunk_id.clone(),
                    score: cosine(query_vector, v)?,
                })
            })
            .collect::<Result<Vec<_>, EmbedError>>()?;
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
        hits.truncate(k);
        Ok(RetrievalBatch {
            query: query.clone(),
            hits,
            k,
        })
    }
}

/// Embeds the query and returns the `k` most similar chunks.
pub fn retrieve(query: &Query, index: &EmbeddedIndex, embedder: &Embedder, k: usize) -> Result<RetrievalBatch, EmbedError> {
    if k == 0 {
        return Err(EmbedError::Domain("k must be at least 1".into()));
    }
    let vector = embedder.embed(&query.text)?;
    index.search(query, &vector, k)
}
