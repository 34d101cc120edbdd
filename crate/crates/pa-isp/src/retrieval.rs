//! Embedding index over case full texts and exact cosine retrieval for
//! few-shot augmentation.
//!
//! The index is a row-major little-endian f32 matrix (`index.bin`) with a
//! JSON sidecar of case ids, dimension, and provider (`index.meta.json`).
//! Search is exhaustive; at the corpus sizes involved a scan beats any
//! approximate structure.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClinicalCase, Corpus};
use crate::gateway::{cosine_f32, EmbeddingProvider, GatewayError};
use crate::prompting::render_example_pairs;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot build an index from zero cases")]
    EmptyBuild,
    #[error("index is empty, nothing to retrieve")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("case '{case_id}': embedding dimension {got} drifted from {expected}")]
    DimDrift { case_id: String, expected: usize, got: usize },
    #[error("query embedding dimension {got} does not match index dimension {expected}")]
    QueryDim { expected: usize, got: usize },
    #[error("duplicate case_id '{case_id}' in index build")]
    DuplicateCase { case_id: String },
    #[error("embedder returned {got} vectors for {expected} texts")]
    BatchShape { expected: usize, got: usize },
    #[error("cannot access '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("index metadata '{path}': {message}")]
    Meta { path: String, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub const DEFAULT_TOP_K: usize = 3;
const EMBED_BATCH: usize = 64;
pub const TEST_INPUT_FENCE: &str = "=== TEST INPUT: FULL TEXT ===";

#[derive(Debug, Serialize, Deserialize)]
struct IndexMeta {
    dim: usize,
    provider_id: String,
    case_ids: Vec<String>,
}

/// Immutable embedding matrix keyed by case id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    provider_id: String,
    case_ids: Vec<String>,
    data: Vec<f32>,
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.case_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.case_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn case_ids(&self) -> &[String] {
        &self.case_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Write `index.bin` and `index.meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        std::fs::create_dir_all(dir).map_err(|source| RetrievalError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let bin_path = dir.join("index.bin");
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&bin_path, bytes).map_err(|source| RetrievalError::Io {
            path: bin_path.display().to_string(),
            source,
        })?;
        let meta = IndexMeta {
            dim: self.dim,
            provider_id: self.provider_id.clone(),
            case_ids: self.case_ids.clone(),
        };
        let meta_path = dir.join("index.meta.json");
        let json = serde_json::to_string_pretty(&meta).expect("index metadata serializes");
        std::fs::write(&meta_path, json).map_err(|source| RetrievalError::Io {
            path: meta_path.display().to_string(),
            source,
        })
    }

    /// Reload an index saved by [`VectorIndex::save`], bit for bit.
    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let meta_path = dir.join("index.meta.json");
        let raw = std::fs::read_to_string(&meta_path).map_err(|source| RetrievalError::Io {
            path: meta_path.display().to_string(),
            source,
        })?;
        let meta: IndexMeta = serde_json::from_str(&raw).map_err(|e| RetrievalError::Meta {
            path: meta_path.display().to_string(),
            message: e.to_string(),
        })?;
        let bin_path = dir.join("index.bin");
        let bytes = std::fs::read(&bin_path).map_err(|source| RetrievalError::Io {
            path: bin_path.display().to_string(),
            source,
        })?;
        let expected = meta.case_ids.len() * meta.dim * 4;
        if bytes.len() != expected {
            return Err(RetrievalError::Meta {
                path: bin_path.display().to_string(),
                message: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(VectorIndex {
            dim: meta.dim,
            provider_id: meta.provider_id,
            case_ids: meta.case_ids,
            data,
        })
    }
}

/// Embed every case's full text (in batches) into one index row each.
pub fn build_index(
    cases: &[&ClinicalCase],
    embedder: &dyn EmbeddingProvider,
) -> Result<VectorIndex, RetrievalError> {
    if cases.is_empty() {
        return Err(RetrievalError::EmptyBuild);
    }
    let mut seen = HashSet::new();
    for case in cases {
        if !seen.insert(case.case_id.as_str()) {
            return Err(RetrievalError::DuplicateCase { case_id: case.case_id.clone() });
        }
    }
    let dim = embedder.dim();
    let mut data = Vec::with_capacity(cases.len() * dim);
    for chunk in cases.chunks(EMBED_BATCH) {
        let texts: Vec<String> = chunk.iter().map(|c| c.full_text.clone()).collect();
        let vectors = embedder.embed(&texts)?;
        if vectors.len() != texts.len() {
            return Err(RetrievalError::BatchShape {
                expected: texts.len(),
                got: vectors.len(),
            });
        }
        for (case, vector) in chunk.iter().zip(vectors) {
            if vector.dim != dim {
                return Err(RetrievalError::DimDrift {
                    case_id: case.case_id.clone(),
                    expected: dim,
                    got: vector.dim,
                });
            }
            data.extend(vector.values);
        }
    }
    Ok(VectorIndex {
        dim,
        provider_id: embedder.provider_id().to_string(),
        case_ids: cases.iter().map(|c| c.case_id.clone()).collect(),
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub case_id: String,
    pub similarity: f64,
}

/// Top hits for one query, best first. Never contains the query's own id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub query_case_id: String,
    pub hits: Vec<Hit>,
}

/// Exhaustive cosine scan: descending similarity, ties by ascending case id.
/// Asking for more hits than the index holds returns everything available.
pub fn retrieve(
    query_case_id: &str,
    query_text: &str,
    index: &VectorIndex,
    embedder: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Retrieval, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let query = embedder
        .embed(&[query_text.to_string()])?
        .pop()
        .ok_or(RetrievalError::BatchShape { expected: 1, got: 0 })?;
    if query.dim != index.dim {
        return Err(RetrievalError::QueryDim { expected: index.dim, got: query.dim });
    }
    let mut hits: Vec<Hit> = index
        .case_ids
        .iter()
        .enumerate()
        .filter(|(_, id)| id.as_str() != query_case_id)
        .map(|(i, id)| Hit {
            case_id: id.clone(),
            similarity: cosine_f32(&query.values, index.row(i)),
        })
        .collect();
    hits.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.case_id.cmp(&b.case_id))
    });
    if k > hits.len() {
        log::warn!("asked for top {k} but only {} candidates are indexed", hits.len());
    }
    hits.truncate(k);
    Ok(Retrieval { query_case_id: query_case_id.to_string(), hits })
}

/// Render retrieved cases as fenced demonstrations ahead of the test input.
/// Hits without a usable summary are skipped with a warning; duplicate ids
/// keep their first occurrence.
pub fn augment_few_shot(
    base_prompt: &str,
    hits: &Retrieval,
    corpus: &Corpus,
    test_input: &str,
) -> String {
    let mut seen = HashSet::new();
    let mut pairs: Vec<(&str, &str)> = Vec::new();
    for hit in &hits.hits {
        if !seen.insert(hit.case_id.as_str()) {
            continue;
        }
        let Some(case) = corpus.get(&hit.case_id) else {
            log::warn!("retrieved case '{}' is not in the corpus, skipped", hit.case_id);
            continue;
        };
        match case.summary.as_deref().filter(|s| !s.trim().is_empty()) {
            Some(summary) => pairs.push((case.full_text.as_str(), summary)),
            None => log::warn!("retrieved case '{}' has no summary, skipped", hit.case_id),
        }
    }
    let mut sections: Vec<String> = Vec::new();
    if !base_prompt.trim().is_empty() {
        sections.push(base_prompt.trim_end_matches('\n').to_string());
    }
    if !pairs.is_empty() {
        let mut block = String::from("Worked examples from similar cases:\n");
        block.push_str(&render_example_pairs(&pairs));
        sections.push(block);
    }
    sections.push(format!(
        "{TEST_INPUT_FENCE}\n{}",
        test_input.trim_end_matches('\n')
    ));
    sections.join("\n\n")
}
