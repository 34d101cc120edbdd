//! Versioned on-disk prompt storage: `v{N}.txt` per version plus
//! `index.json` for lineage and scores. Writes go through a temp file and
//! rename, so a crash never leaves a half-written artifact behind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BatchScores, PromptStage, PromptVersion};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot access '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index '{path}': {message}")]
    CorruptIndex { path: String, message: String },
    #[error("version {version_id} listed in index but '{path}' is missing")]
    MissingVersionFile { version_id: u32, path: String },
    #[error("version ids must be contiguous from 1: expected {expected}, found {found}")]
    VersionGap { expected: u32, found: u32 },
    #[error("version {version_id}: {message}")]
    BadLineage { version_id: u32, message: String },
    #[error("no prompt version {version_id} in store")]
    NotFound { version_id: u32 },
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    version_id: u32,
    parent: Option<u32>,
    created_by_stage: PromptStage,
    epoch: Option<u32>,
    batch_scores: Option<BatchScores>,
    #[serde(default)]
    no_change: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexFile {
    versions: Vec<IndexEntry>,
}

/// Single-writer store of the prompt lineage rooted at version 1.
#[derive(Debug)]
pub struct PromptStore {
    dir: PathBuf,
    versions: Vec<PromptVersion>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

impl PromptStore {
    /// Open (or create) a store directory. A directory without an index is
    /// an empty store.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let index_path = dir.join("index.json");
        if !index_path.exists() {
            return Ok(PromptStore { dir: dir.to_path_buf(), versions: Vec::new() });
        }
        let raw = std::fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
        let index: IndexFile = serde_json::from_str(&raw).map_err(|e| StoreError::CorruptIndex {
            path: index_path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut versions = Vec::with_capacity(index.versions.len());
        for (i, entry) in index.versions.into_iter().enumerate() {
            let expected = i as u32 + 1;
            if entry.version_id != expected {
                return Err(StoreError::VersionGap { expected, found: entry.version_id });
            }
            validate_lineage(entry.version_id, entry.parent, entry.created_by_stage)?;
            let text_path = dir.join(format!("v{}.txt", entry.version_id));
            let text = std::fs::read_to_string(&text_path).map_err(|_| {
                StoreError::MissingVersionFile {
                    version_id: entry.version_id,
                    path: text_path.display().to_string(),
                }
            })?;
            versions.push(PromptVersion {
                version_id: entry.version_id,
                text,
                parent: entry.parent,
                created_by_stage: entry.created_by_stage,
                epoch: entry.epoch,
                batch_scores: entry.batch_scores,
                no_change: entry.no_change,
            });
        }
        Ok(PromptStore { dir: dir.to_path_buf(), versions })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    pub fn versions(&self) -> &[PromptVersion] {
        &self.versions
    }

    pub fn latest(&self) -> Option<&PromptVersion> {
        self.versions.last()
    }

    pub fn get(&self, version_id: u32) -> Result<&PromptVersion, StoreError> {
        self.versions
            .get(version_id.checked_sub(1).ok_or(StoreError::NotFound { version_id })? as usize)
            .ok_or(StoreError::NotFound { version_id })
    }

    /// Persist version 1. Only valid on an empty store.
    pub fn append_init(&mut self, text: String) -> Result<&PromptVersion, StoreError> {
        if !self.versions.is_empty() {
            return Err(StoreError::BadLineage {
                version_id: 1,
                message: "store already holds version 1".into(),
            });
        }
        self.append(PromptVersion {
            version_id: 1,
            text,
            parent: None,
            created_by_stage: PromptStage::Init,
            epoch: None,
            batch_scores: None,
            no_change: false,
        })
    }

    /// Persist a refined version. `parent` must be the current latest id;
    /// text identical to the parent's is accepted but flagged `no_change`.
    pub fn append_refined(
        &mut self,
        text: String,
        parent: u32,
        epoch: u32,
    ) -> Result<&PromptVersion, StoreError> {
        let latest = self.latest().ok_or(StoreError::BadLineage {
            version_id: parent + 1,
            message: "cannot refine an empty store".into(),
        })?;
        if latest.version_id != parent {
            return Err(StoreError::BadLineage {
                version_id: parent + 1,
                message: format!(
                    "parent {parent} is not the latest version {}",
                    latest.version_id
                ),
            });
        }
        let no_change = latest.text == text;
        if no_change {
            log::warn!("refined prompt v{} is identical to v{parent}", parent + 1);
        }
        self.append(PromptVersion {
            version_id: parent + 1,
            text,
            parent: Some(parent),
            created_by_stage: PromptStage::Refine,
            epoch: Some(epoch),
            batch_scores: None,
            no_change,
        })
    }

    /// Backfill batch scores once a version has been evaluated on the
    /// refinement batch.
    pub fn record_batch_scores(
        &mut self,
        version_id: u32,
        scores: BatchScores,
    ) -> Result<(), StoreError> {
        let idx = version_id
            .checked_sub(1)
            .filter(|&i| (i as usize) < self.versions.len())
            .ok_or(StoreError::NotFound { version_id })? as usize;
        self.versions[idx].batch_scores = Some(scores);
        self.write_index()
    }

    fn append(&mut self, version: PromptVersion) -> Result<&PromptVersion, StoreError> {
        let text_path = self.dir.join(format!("v{}.txt", version.version_id));
        write_atomic(&text_path, &version.text)?;
        self.versions.push(version);
        self.write_index()?;
        Ok(self.versions.last().expect("just pushed"))
    }

    fn write_index(&self) -> Result<(), StoreError> {
        let entries: Vec<IndexEntry> = self
            .versions
            .iter()
            .map(|v| IndexEntry {
                version_id: v.version_id,
                parent: v.parent,
                created_by_stage: v.created_by_stage,
                epoch: v.epoch,
                batch_scores: v.batch_scores,
                no_change: v.no_change,
            })
            .collect();
        let json = serde_json::to_string_pretty(&IndexFile { versions: entries })
            .expect("index serializes");
        write_atomic(&self.dir.join("index.json"), &json)
    }
}

fn validate_lineage(
    version_id: u32,
    parent: Option<u32>,
    stage: PromptStage,
) -> Result<(), StoreError> {
    match (version_id, parent, stage) {
        (1, None, PromptStage::Init) => Ok(()),
        (1, _, _) => Err(StoreError::BadLineage {
            version_id: 1,
            message: "version 1 must be stage=init with no parent".into(),
        }),
        (v, Some(p), PromptStage::Refine) if p == v - 1 => Ok(()),
        (v, p, s) => Err(StoreError::BadLineage {
            version_id: v,
            message: format!("stage {s:?} with parent {p:?} breaks the chain"),
        }),
    }
}
