//! Corpus loading and recursive chunking.
//!
//! Documents come in as JSONL records, get split first on blank-line
//! paragraphs, then on sentence boundaries when a paragraph exceeds the
//! token limit, with a hard token-boundary split as the last resort.
//! Q&A answer chunks are prefixed with bilingual question/answer markers,
//! and the prefix counts toward the token budget.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Chunk, ChunkKind};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_TOKENS: usize = 378;

/// Marker prepended before the original user question on qa chunks.
pub const QA_QUESTION_MARKER: &str = "(سؤال کاربر):";
/// Marker separating the question from the expert answer body.
pub const QA_ANSWER_MARKER: &str = "(پاسخ کارشناس):";

/// One corpus record, prior to chunking.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceDocument {
    pub id: String,
    pub kind: ChunkKind,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub question: Option<String>,
    pub source_url: String,
}

/// Deterministic, pure text → tokens contract.
///
/// Implementations must expose byte spans so the chunker can hard-split
/// over-long sentences at token boundaries.
pub trait Tokenizer: Send + Sync {
    /// Byte ranges of tokens within `text`, in order.
    fn token_spans(&self, text: &str) -> Vec<(usize, usize)>;

    fn tokenize(&self, text: &str) -> Vec<String> {
        self.token_spans(text)
            .into_iter()
            .map(|(a, b)| normalize_token(&text[a..b]))
            .collect()
    }

    fn count(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }
}

fn normalize_token(raw: &str) -> String {
    // ASCII-only case folding; non-Latin scripts pass through untouched.
    raw.chars()
        .map(|c| if c.is_ascii_uppercase() { c.to_ascii_lowercase() } else { c })
        .collect()
}

/// Default tokenizer: maximal runs of Unicode alphanumerics; whitespace
/// and punctuation are separators. No stemming.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn token_spans(&self, text: &str) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut start: Option<usize> = None;
        for (idx, ch) in text.char_indices() {
            if ch.is_alphanumeric() {
                if start.is_none() {
                    start = Some(idx);
                }
            } else if let Some(s) = start.take() {
                spans.push((s, idx));
            }
        }
        if let Some(s) = start {
            spans.push((s, text.len()));
        }
        spans
    }
}

/// Sentence terminators covering Persian and Latin punctuation.
const SENTENCE_TERMINATORS: [char; 6] = ['.', '؟', '!', '?', '…', '۔'];

/// Split `text` into sentences on a terminator followed by whitespace
/// (or end of text). Terminators stay attached to their sentence.
fn split_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((idx, ch)) = chars.next() {
        if SENTENCE_TERMINATORS.contains(&ch) {
            let end = idx + ch.len_utf8();
            let at_boundary = match chars.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                let s = text[start..end].trim();
                if !s.is_empty() {
                    sentences.push(s);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

fn split_paragraphs(text: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                paragraphs.push(current.trim().to_string());
            }
            current.clear();
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    if !current.trim().is_empty() {
        paragraphs.push(current.trim().to_string());
    }
    paragraphs
}

/// Hard-split a single over-long sentence at token boundaries so each
/// piece holds at most `budget` tokens.
fn hard_split<'a>(sentence: &'a str, budget: usize, tok: &dyn Tokenizer) -> Vec<&'a str> {
    let spans = tok.token_spans(sentence);
    if spans.is_empty() {
        return vec![sentence];
    }
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < spans.len() {
        let last = (i + budget).min(spans.len()) - 1;
        let start = spans[i].0;
        let end = if last + 1 == spans.len() {
            sentence.len()
        } else {
            spans[last].1
        };
        pieces.push(sentence[start..end].trim());
        i = last + 1;
    }
    pieces
}

/// Split one paragraph into bodies of at most `budget` tokens each,
/// greedily packing whole sentences.
fn split_paragraph(paragraph: &str, budget: usize, tok: &dyn Tokenizer) -> Vec<String> {
    if tok.count(paragraph) <= budget {
        return vec![paragraph.to_string()];
    }
    let mut bodies = Vec::new();
    let mut current = String::new();
    let mut current_tokens = 0;
    for sentence in split_sentences(paragraph) {
        let n = tok.count(sentence);
        if n > budget {
            if !current.is_empty() {
                bodies.push(std::mem::take(&mut current));
                current_tokens = 0;
            }
            for piece in hard_split(sentence, budget, tok) {
                bodies.push(piece.to_string());
            }
            continue;
        }
        if current_tokens + n > budget && !current.is_empty() {
            bodies.push(std::mem::take(&mut current));
            current_tokens = 0;
        }
        if !current.is_empty() {
            current.push(' ');
        }
        current.push_str(sentence);
        current_tokens += n;
    }
    if !current.is_empty() {
        bodies.push(current);
    }
    bodies
}

fn qa_prefix(question: &str) -> String {
    format!("{QA_QUESTION_MARKER} {question}\n{QA_ANSWER_MARKER}\n")
}

/// Strip the qa markers from a chunk text, returning the answer body.
/// Encyclopedia chunk texts pass through unchanged.
pub fn strip_qa_markers(text: &str) -> &str {
    if let Some(rest) = text.strip_prefix(QA_QUESTION_MARKER) {
        if let Some(pos) = rest.find(QA_ANSWER_MARKER) {
            return rest[pos + QA_ANSWER_MARKER.len()..].trim_start_matches('\n');
        }
    }
    text
}

/// Apply the recursive chunking strategy to one document.
pub fn chunk_document(
    doc: &SourceDocument,
    max_tokens: usize,
    tok: &dyn Tokenizer,
) -> Result<Vec<Chunk>> {
    if max_tokens < 16 {
        return Err(Error::Config(format!(
            "max_tokens {max_tokens} below minimum of 16"
        )));
    }
    let prefix = match doc.kind {
        ChunkKind::Qa => {
            let question = doc
                .question
                .as_deref()
                .map(str::trim)
                .filter(|q| !q.is_empty())
                .ok_or_else(|| Error::Document {
                    doc_id: doc.id.clone(),
                    message: "qa document requires a non-empty question".to_string(),
                })?;
            Some(qa_prefix(question))
        }
        ChunkKind::Encyclopedia => None,
    };
    let prefix_tokens = prefix.as_deref().map_or(0, |p| tok.count(p));
    let budget = max_tokens.checked_sub(prefix_tokens).filter(|b| *b >= 1).ok_or_else(|| {
        Error::Document {
            doc_id: doc.id.clone(),
            message: format!(
                "qa question prefix uses {prefix_tokens} tokens, leaving no budget under {max_tokens}"
            ),
        }
    })?;

    let mut chunks = Vec::new();
    for paragraph in split_paragraphs(&doc.text) {
        for body in split_paragraph(&paragraph, budget, tok) {
            let text = match &prefix {
                Some(p) => format!("{p}{body}"),
                None => body,
            };
            let token_count = tok.count(&text);
            chunks.push(Chunk {
                id: format!("{}#{}", doc.id, chunks.len()),
                text,
                source_url: doc.source_url.clone(),
                token_count,
                kind: doc.kind,
                embedding: None,
            });
        }
    }
    Ok(chunks)
}

/// Load a JSONL corpus and chunk every document, in file order.
/// Malformed lines abort with the 1-based line number.
pub fn load_corpus(path: &Path, max_tokens: usize, tok: &dyn Tokenizer) -> Result<Vec<Chunk>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut chunks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: SourceDocument =
            serde_json::from_str(&line).map_err(|e| Error::CorpusSchema {
                line: i + 1,
                message: e.to_string(),
            })?;
        chunks.extend(chunk_document(&doc, max_tokens, tok)?);
    }
    Ok(chunks)
}
