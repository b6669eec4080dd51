//! Document ingestion, tokenization and fixed-window chunking.
//!
//! Chunks are windows of `chunk_size` tokens taken in document order. The
//! collection is persisted as JSON lines: a schema header followed by one
//! chunk record per line.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CORPUS_SCHEMA: &str = "memgrow-corpus/1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("chunk size must be at least 1")]
    ZeroChunkSize,
    #[error("no documents supplied")]
    NoDocuments,
    #[error("documents with empty text: {}", .0.join(", "))]
    EmptyDocuments(Vec<String>),
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("corpus parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported corpus schema `{found}` (expected `{CORPUS_SCHEMA}`)")]
    Version { found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
            source_tag: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub tokens: usize,
    pub text: String,
}

/// Immutable, ordered set of chunks. Documents appear in ingestion order and
/// chunks of a document in ordinal order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChunkCollection {
    chunks: Vec<Chunk>,
}

impl ChunkCollection {
    pub fn from_chunks(chunks: Vec<Chunk>) -> Self {
        Self { chunks }
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn document_count(&self) -> usize {
        self.chunks
            .iter()
            .map(|c| c.doc_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn token_count(&self) -> usize {
        self.chunks.iter().map(|c| c.tokens).sum()
    }

    /// Chunks of one document, in ordinal order.
    pub fn document_chunks<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a Chunk> + 'a {
        self.chunks.iter().filter(move |c| c.doc_id == doc_id)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Space,
    Word,
    Cjk,
    Punct,
}

/// Codepoints segmented one character per token.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x2E80..=0x2FDF     // radicals
        | 0x3000..=0x303F   // CJK symbols and punctuation
        | 0x3040..=0x30FF   // hiragana, katakana
        | 0x3100..=0x312F   // bopomofo
        | 0x3400..=0x4DBF   // extension A
        | 0x4E00..=0x9FFF   // unified ideographs
        | 0xAC00..=0xD7AF   // hangul syllables
        | 0xF900..=0xFAFF   // compatibility ideographs
        | 0xFF00..=0xFFEF   // halfwidth and fullwidth forms
        | 0x20000..=0x2FA1F)
}

fn classify(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if is_cjk(c) {
        CharClass::Cjk
    } else if c.is_alphanumeric() {
        CharClass::Word
    } else {
        CharClass::Punct
    }
}

/// Splits text into tokens: runs of alphanumerics form one token, every
/// punctuation or symbol character is its own token, every CJK codepoint is
/// its own token, and whitespace only separates.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        match classify(c) {
            CharClass::Word => word.push(c),
            class => {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                if class != CharClass::Space {
                    tokens.push(c.to_string());
                }
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn no_space_before(token: &str) -> bool {
    matches!(token, "," | "." | "!" | "?" | ";" | ":" | ")" | "]" | "}" | "%")
}

fn no_space_after(token: &str) -> bool {
    matches!(token, "(" | "[" | "{")
}

fn is_cjk_token(token: &str) -> bool {
    token.chars().next().is_some_and(is_cjk)
}

/// Inverse of [`tokenize`] on token sequences: `tokenize(&join(&t)) == t` for
/// any `t` produced by `tokenize`. CJK text without spaces is reproduced
/// exactly.
pub fn join<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for token in tokens {
        let token = token.as_ref();
        if let Some(p) = prev {
            let glue = is_cjk_token(p)
                || is_cjk_token(token)
                || no_space_before(token)
                || no_space_after(p);
            if !glue {
                out.push(' ');
            }
        }
        out.push_str(token);
        prev = Some(token);
    }
    out
}

/// Splits every document into consecutive windows of `chunk_size` tokens.
pub fn ingest(documents: &[Document], chunk_size: usize) -> Result<ChunkCollection, CorpusError> {
    if chunk_size == 0 {
        return Err(CorpusError::ZeroChunkSize);
    }
    if documents.is_empty() {
        return Err(CorpusError::NoDocuments);
    }
    let mut seen = HashSet::new();
    for doc in documents {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(CorpusError::DuplicateDocId(doc.doc_id.clone()));
        }
    }
    let empty: Vec<String> = documents
        .iter()
        .filter(|d| tokenize(&d.text).is_empty())
        .map(|d| d.doc_id.clone())
        .collect();
    if !empty.is_empty() {
        return Err(CorpusError::EmptyDocuments(empty));
    }

    let mut chunks = Vec::new();
    for doc in documents {
        let tokens = tokenize(&doc.text);
        for (ordinal, window) in tokens.chunks(chunk_size).enumerate() {
            chunks.push(Chunk {
                chunk_id: format!("{}#{}", doc.doc_id, ordinal),
                doc_id: doc.doc_id.clone(),
                ordinal,
                tokens: window.len(),
                text: join(window),
            });
        }
    }
    Ok(ChunkCollection { chunks })
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
}

pub fn save_corpus(collection: &ChunkCollection, path: &Path) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let header = Header {
        schema: CORPUS_SCHEMA.to_string(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for chunk in &collection.chunks {
        writeln!(out, "{}", serde_json::to_string(chunk).expect("chunk serializes"))?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a corpus file. Any malformed line fails the whole load.
pub fn load_corpus(path: &Path) -> Result<ChunkCollection, CorpusError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(CorpusError::Parse {
                line: 1,
                message: "missing schema header".into(),
            })
        }
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| CorpusError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.schema != CORPUS_SCHEMA {
        return Err(CorpusError::Version {
            found: header.schema,
        });
    }
    let mut chunks = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: Chunk = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        chunks.push(chunk);
    }
    Ok(ChunkCollection { chunks })
}

/// Splits plain text into documents at blank lines. Document ids are
/// `{prefix}-{n}` counting from 0.
pub fn documents_from_plain_text(text: &str, prefix: &str) -> Vec<Document> {
    let mut docs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, docs: &mut Vec<Document>| {
        if !current.is_empty() {
            let id = format!("{}-{}", prefix, docs.len());
            docs.push(Document::new(id, current.join("\n")));
            current.clear();
        }
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut current, &mut docs);
        } else {
            current.push(line);
        }
    }
    flush(&mut current, &mut docs);
    docs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn tokenize_collapses_whitespace() {
        assert_eq!(tokenize("a b  c"), vec!["a", "b", "c"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \n\t ").is_empty());
    }

    #[test]
    fn tokenize_cjk_per_character_round_trips() {
        let tokens = tokenize("北京很大");
        assert_eq!(tokens, vec!["北", "京", "很", "大"]);
        assert_eq!(join(&tokens), "北京很大");
    }

    #[test]
    fn tokenize_splits_punctuation() {
        let tokens = tokenize("Hello, world (again)!");
        assert_eq!(tokens, vec!["Hello", ",", "world", "(", "again", ")", "!"]);
        assert_eq!(join(&tokens), "Hello, world (again)!");
        assert_eq!(tokenize(&join(&tokens)), tokens);
    }

    #[test]
    fn chunk_counts_follow_remainder() {
        let docs = [Document::new("d", words(600))];
        let c = ingest(&docs, 256).unwrap();
        let counts: Vec<_> = c.chunks().iter().map(|c| c.tokens).collect();
        assert_eq!(counts, vec![256, 256, 88]);
        let ordinals: Vec<_> = c.chunks().iter().map(|c| c.ordinal).collect();
        assert_eq!(ordinals, vec![0, 1, 2]);
    }

    #[test]
    fn exact_window_yields_single_chunk() {
        let c = ingest(&[Document::new("d", words(256))], 256).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.chunks()[0].tokens, 256);
    }

    #[test]
    fn small_documents_get_one_chunk_each() {
        let docs = [Document::new("a", words(10)), Document::new("b", words(10))];
        let c = ingest(&docs, 256).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.document_count(), 2);
    }

    #[test]
    fn rejects_empty_and_duplicate_documents() {
        let docs = [
            Document::new("a", "  "),
            Document::new("b", "fine"),
            Document::new("c", ""),
        ];
        match ingest(&docs, 4) {
            Err(CorpusError::EmptyDocuments(ids)) => assert_eq!(ids, vec!["a", "c"]),
            other => panic!("unexpected {other:?}"),
        }
        let docs = [Document::new("a", "x"), Document::new("a", "y")];
        match ingest(&docs, 4) {
            Err(CorpusError::DuplicateDocId(id)) => assert_eq!(id, "a"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(ingest(&[], 4), Err(CorpusError::NoDocuments)));
        assert!(matches!(
            ingest(&[Document::new("a", "x")], 0),
            Err(CorpusError::ZeroChunkSize)
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let c = ingest(&[Document::new("d", words(9))], 3).unwrap();
        assert_eq!(c.len(), 3);
        save_corpus(&c, &path).unwrap();
        let first = fs::read_to_string(&path).unwrap();
        assert!(first.starts_with("{\"schema\":\"memgrow-corpus/1\"}\n"));
        assert_eq!(load_corpus(&path).unwrap(), c);
    }

    #[test]
    fn truncated_file_fails_closed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let c = ingest(&[Document::new("d", words(9))], 3).unwrap();
        save_corpus(&c, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() - 20]).unwrap();
        match load_corpus(&path) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_schema_is_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        fs::write(&path, "{\"schema\":\"memgrow-corpus/9\"}\n").unwrap();
        assert!(matches!(load_corpus(&path), Err(CorpusError::Version { .. })));
    }

    #[test]
    fn plain_text_splits_on_blank_lines() {
        let docs = documents_from_plain_text("one\ntwo\n\n\nthree\n", "f");
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].doc_id, "f-0");
        assert_eq!(docs[0].text, "one\ntwo");
        assert_eq!(docs[1].text, "three");
    }
}
