//! In-process hybrid index: BM25 over an inverted index, exhaustive cosine
//! search over stored vectors, and Reciprocal Rank Fusion.
//!
//! Corpora here are small enough that exact search beats any ANN structure,
//! and exactness is what makes the brute-force oracle tests meaningful.
//! Ties everywhere break by lexicographic chunk id so traces reproduce.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::Chunk;
use crate::error::{Error, Result};
use crate::ingest::Tokenizer;

pub const INDEX_FORMAT_VERSION: u32 = 1;

/// BM25 and fusion parameters. Robertson–Zaragoza defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    pub k1: f64,
    pub b: f64,
    pub rrf_k: u32,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams {
            k1: 1.2,
            b: 0.75,
            rrf_k: 60,
        }
    }
}

/// Descending-score result list; ranks are 1-based positions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList(pub Vec<(String, f64)>);

impl RankedList {
    pub fn ids(&self) -> Vec<&str> {
        self.0.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

/// Text → dense vector contract. Implementations must be deterministic.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

/// Deterministic bag-of-tokens hashing embedder. Not a semantic model;
/// stands in where precomputed vectors or a real provider are absent.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let mut v = vec![0.0f32; self.dim];
        for token in crate::ingest::WordTokenizer.tokenize(text) {
            let h = fnv1a(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x = (*x as f64 / norm) as f32;
            }
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenseStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct HeaderFile {
    version: u32,
    params: IndexParams,
    dimension: Option<usize>,
    chunk_count: usize,
}

#[derive(Serialize, Deserialize)]
struct PostingsFile {
    postings: BTreeMap<String, Vec<(String, u32)>>,
    doc_len: BTreeMap<String, usize>,
    avg_len: f64,
}

/// Immutable hybrid index. Concurrent reads are safe after build.
pub struct Index {
    params: IndexParams,
    chunks: BTreeMap<String, Chunk>,
    postings: BTreeMap<String, Vec<(String, u32)>>,
    doc_len: BTreeMap<String, usize>,
    avg_len: f64,
    dense: Option<DenseStore>,
    tokenizer: Arc<dyn Tokenizer>,
}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Index")
            .field("params", &self.params)
            .field("chunks", &self.chunks.len())
            .field("terms", &self.postings.len())
            .field("avg_len", &self.avg_len)
            .field("dense", &self.dense.as_ref().map(|d| d.dim))
            .finish()
    }
}

impl Index {
    /// Build an index over `chunks`. Duplicate ids are rejected, not
    /// deduplicated: corpus files own identity.
    pub fn build(
        chunks: Vec<Chunk>,
        params: IndexParams,
        tokenizer: Arc<dyn Tokenizer>,
    ) -> Result<Index> {
        let mut by_id = BTreeMap::new();
        let mut postings: BTreeMap<String, Vec<(String, u32)>> = BTreeMap::new();
        let mut doc_len = BTreeMap::new();
        let mut dense: Option<DenseStore> = None;

        for mut chunk in chunks {
            if by_id.contains_key(&chunk.id) {
                return Err(Error::DuplicateChunkId(chunk.id));
            }
            let tokens = tokenizer.tokenize(&chunk.text);
            doc_len.insert(chunk.id.clone(), tokens.len());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, f) in tf {
                postings.entry(term).or_default().push((chunk.id.clone(), f));
            }
            if let Some(vector) = chunk.embedding.take() {
                let store = dense.get_or_insert_with(|| DenseStore {
                    dim: vector.len(),
                    vectors: BTreeMap::new(),
                });
                if vector.len() != store.dim {
                    return Err(Error::DimensionMismatch {
                        expected: store.dim,
                        got: vector.len(),
                    });
                }
                store.vectors.insert(chunk.id.clone(), vector);
            }
            by_id.insert(chunk.id.clone(), chunk);
        }

        let avg_len = if doc_len.is_empty() {
            0.0
        } else {
            doc_len.values().sum::<usize>() as f64 / doc_len.len() as f64
        };

        Ok(Index {
            params,
            chunks: by_id,
            postings,
            doc_len,
            avg_len,
            dense,
            tokenizer,
        })
    }

    pub fn params(&self) -> IndexParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dense.as_ref().map(|d| d.dim)
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.chunks.get(id)
    }

    pub fn chunk_ids(&self) -> impl Iterator<Item = &str> {
        self.chunks.keys().map(String::as_str)
    }

    /// BM25 ranking over the inverted index. Only positive scores are
    /// returned; an empty or fully out-of-vocabulary query yields an
    /// empty list.
    pub fn bm25_search(&self, query: &str, k: usize) -> RankedList {
        let n_docs = self.chunks.len() as f64;
        if n_docs == 0.0 {
            return RankedList::default();
        }
        let mut terms = self.tokenizer.tokenize(query);
        terms.sort();
        terms.dedup();

        let mut scores: HashMap<&str, f64> = HashMap::new();
        for term in &terms {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let n_t = postings.len() as f64;
            let idf = (1.0 + (n_docs - n_t + 0.5) / (n_t + 0.5)).ln();
            for (id, tf) in postings {
                let f = *tf as f64;
                let len = self.doc_len[id] as f64;
                let denom =
                    f + self.params.k1 * (1.0 - self.params.b + self.params.b * len / self.avg_len);
                let contrib = idf * f * (self.params.k1 + 1.0) / denom;
                *scores.entry(id.as_str()).or_default() += contrib;
            }
        }

        let mut ranked: Vec<(String, f64)> = scores
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(id, s)| (id.to_string(), s))
            .collect();
        sort_ranked(&mut ranked);
        ranked.truncate(k);
        RankedList(ranked)
    }

    /// Exhaustive cosine-similarity search over the dense store.
    pub fn dense_search(&self, query_vec: &[f32], k: usize) -> Result<RankedList> {
        let store = self.dense.as_ref().ok_or_else(|| {
            Error::Embedding("index has no dense store".to_string())
        })?;
        if query_vec.len() != store.dim {
            return Err(Error::DimensionMismatch {
                expected: store.dim,
                got: query_vec.len(),
            });
        }
        let mut ranked: Vec<(String, f64)> = store
            .vectors
            .iter()
            .map(|(id, v)| (id.clone(), cosine(query_vec, v)))
            .collect();
        sort_ranked(&mut ranked);
        ranked.truncate(k);
        Ok(RankedList(ranked))
    }

    /// Top-3 sparse and top-3 dense, RRF-fused, top-3 returned.
    ///
    /// Without a dense store (or without a provider) the fusion runs over
    /// the sparse list alone. A provider failure propagates unless
    /// `sparse_only_fallback` is set.
    pub fn hybrid_retrieve(
        &self,
        sub_query: &str,
        provider: Option<&dyn EmbeddingProvider>,
        sparse_only_fallback: bool,
        top_k: usize,
    ) -> Result<Vec<Chunk>> {
        let sparse = self.bm25_search(sub_query, top_k);
        let mut lists = vec![sparse];
        if self.dense.is_some() {
            if let Some(provider) = provider {
                match provider.embed(sub_query).and_then(|v| self.dense_search(&v, top_k)) {
                    Ok(dense) => lists.push(dense),
                    Err(e) if sparse_only_fallback => {
                        let _ = e;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let fused = rrf_fuse(&lists, self.params.rrf_k);
        Ok(fused
            .0
            .into_iter()
            .take(top_k)
            .filter_map(|(id, _)| self.chunks.get(&id).cloned())
            .collect())
    }

    /// Persist as a directory: header, postings, chunks, optional vectors.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = HeaderFile {
            version: INDEX_FORMAT_VERSION,
            params: self.params,
            dimension: self.dimension(),
            chunk_count: self.chunks.len(),
        };
        fs::write(dir.join("header.json"), serde_json::to_vec_pretty(&header)?)?;
        let postings = PostingsFile {
            postings: self.postings.clone(),
            doc_len: self.doc_len.clone(),
            avg_len: self.avg_len,
        };
        fs::write(dir.join("postings.json"), serde_json::to_vec(&postings)?)?;
        let mut out = fs::File::create(dir.join("chunks.jsonl"))?;
        for chunk in self.chunks.values() {
            serde_json::to_writer(&mut out, chunk)?;
            out.write_all(b"\n")?;
        }
        if let Some(dense) = &self.dense {
            fs::write(dir.join("vectors.json"), serde_json::to_vec(dense)?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, tokenizer: Arc<dyn Tokenizer>) -> Result<Index> {
        let header: HeaderFile = serde_json::from_slice(&fs::read(dir.join("header.json"))?)?;
        if header.version != INDEX_FORMAT_VERSION {
            return Err(Error::IndexVersion {
                expected: INDEX_FORMAT_VERSION,
                found: header.version,
            });
        }
        let postings: PostingsFile = serde_json::from_slice(&fs::read(dir.join("postings.json"))?)?;
        let mut chunks = BTreeMap::new();
        let reader = BufReader::new(fs::File::open(dir.join("chunks.jsonl"))?);
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: Chunk = serde_json::from_str(&line)?;
            chunks.insert(chunk.id.clone(), chunk);
        }
        if chunks.len() != header.chunk_count {
            return Err(Error::IndexFormat(format!(
                "header declares {} chunks, found {}",
                header.chunk_count,
                chunks.len()
            )));
        }
        let vectors_path = dir.join("vectors.json");
        let dense = if vectors_path.exists() {
            Some(serde_json::from_slice(&fs::read(vectors_path)?)?)
        } else {
            None
        };
        Ok(Index {
            params: header.params,
            chunks,
            postings: postings.postings,
            doc_len: postings.doc_len,
            avg_len: postings.avg_len,
            dense,
            tokenizer,
        })
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        dot += *x as f64 * *y as f64;
        na += (*x as f64).powi(2);
        nb += (*y as f64).powi(2);
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn sort_ranked(ranked: &mut [(String, f64)]) {
    ranked.sort_by(|(id_a, s_a), (id_b, s_b)| {
        s_b.partial_cmp(s_a).unwrap_or(std::cmp::Ordering::Equal).then_with(|| id_a.cmp(id_b))
    });
}

/// Reciprocal Rank Fusion: score(d) = Σ over lists containing d of
/// 1/(rrf_k + rank), ranks 1-based. Ties break by lexicographic id.
pub fn rrf_fuse(lists: &[RankedList], rrf_k: u32) -> RankedList {
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for list in lists {
        for (rank, (id, _)) in list.0.iter().enumerate() {
            *scores.entry(id.as_str()).or_default() += 1.0 / (rrf_k as f64 + rank as f64 + 1.0);
        }
    }
    let mut ranked: Vec<(String, f64)> =
        scores.into_iter().map(|(id, s)| (id.to_string(), s)).collect();
    sort_ranked(&mut ranked);
    RankedList(ranked)
}
