//! Error types shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corpus line {line}: {message}")]
    CorpusSchema { line: usize, message: String },

    #[error("document {doc_id}: {message}")]
    Document { doc_id: String, message: String },

    #[error("duplicate chunk id: {0}")]
    DuplicateChunkId(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index format version mismatch: expected {expected}, found {found}")]
    IndexVersion { expected: u32, found: u32 },

    #[error("index load: {0}")]
    IndexFormat(String),

    #[error("embedding provider: {0}")]
    Embedding(String),

    #[error("no scripted rule matches prompt starting with: {prompt_head:?}")]
    ScriptedRuleMiss { prompt_head: String },

    #[error("backend transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("backend returned status {status}: {message}")]
    BackendStatus { status: u16, message: String },

    #[error("parse failure in {stage}: {message}; raw output: {raw:?}")]
    Parse {
        stage: &'static str,
        message: String,
        raw: String,
    },

    #[error("missing placeholder {placeholder:?} in template {template:?}")]
    MissingPlaceholder {
        template: String,
        placeholder: String,
    },

    #[error("pipeline stage {stage} failed after retry: {message}")]
    Stage { stage: &'static str, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
