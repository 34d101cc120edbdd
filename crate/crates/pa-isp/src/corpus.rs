//! Case-report ingestion and the deterministic gold-set partition.
//!
//! Cases arrive through a JSONL manifest, one object per case, with text
//! either inline (`full_text`, `summary`) or in referenced UTF-8 files
//! (`full_text_path`, `summary_path`, resolved relative to the manifest).
//! [`partition_gold`] splits the gold_train cases, sorted by case id, into
//! the three-seed, fifty-case refinement, and structure-statistics buckets.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("case '{case_id}': test-split cases must not carry a summary")]
    TestWithSummary { case_id: String },
    #[error("duplicate case_id '{case_id}'")]
    DuplicateId { case_id: String },
    #[error("case '{case_id}': full_text is empty")]
    EmptyFullText { case_id: String },
    #[error("case '{case_id}': split '{split}' requires a summary")]
    MissingSummary { case_id: String, split: Split },
    #[error("case '{case_id}': gold_train summary is whitespace-only")]
    BlankGoldSummary { case_id: String },
    #[error("partition requires at least {required} gold_train cases, found {found}")]
    NotEnoughGold { found: usize, required: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    GoldTrain,
    LargeTrain,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Split::GoldTrain => "gold_train",
            Split::LargeTrain => "large_train",
            Split::Test => "test",
        };
        f.write_str(name)
    }
}

/// One case report with its split label. Test cases carry no summary;
/// training cases always do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalCase {
    pub case_id: String,
    pub full_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub gold_train: usize,
    pub large_train: usize,
    pub test: usize,
}

/// Validated, immutable case collection with id lookup.
#[derive(Debug, Clone)]
pub struct Corpus {
    cases: Vec<ClinicalCase>,
    by_id: HashMap<String, usize>,
    flagged: Vec<String>,
}

impl Corpus {
    /// Validate and index cases. Whitespace-only summaries are errors in
    /// gold_train but only flagged in large_train, where the source data is
    /// known to be noisier.
    pub fn from_cases(cases: Vec<ClinicalCase>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(cases.len());
        let mut flagged = Vec::new();
        for (i, case) in cases.iter().enumerate() {
            if by_id.insert(case.case_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { case_id: case.case_id.clone() });
            }
            if case.full_text.trim().is_empty() {
                return Err(CorpusError::EmptyFullText { case_id: case.case_id.clone() });
            }
            match (case.split, &case.summary) {
                (Split::Test, Some(_)) => {
                    return Err(CorpusError::TestWithSummary { case_id: case.case_id.clone() })
                }
                (Split::Test, None) => {}
                (split, None) => {
                    return Err(CorpusError::MissingSummary {
                        case_id: case.case_id.clone(),
                        split,
                    })
                }
                (Split::GoldTrain, Some(s)) if s.trim().is_empty() => {
                    return Err(CorpusError::BlankGoldSummary { case_id: case.case_id.clone() })
                }
                (Split::LargeTrain, Some(s)) if s.trim().is_empty() => {
                    flagged.push(case.case_id.clone());
                }
                _ => {}
            }
        }
        if !flagged.is_empty() {
            log::warn!("{} large_train case(s) have whitespace-only summaries", flagged.len());
        }
        Ok(Corpus { cases, by_id, flagged })
    }

    pub fn cases(&self) -> &[ClinicalCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, case_id: &str) -> Option<&ClinicalCase> {
        self.by_id.get(case_id).map(|&i| &self.cases[i])
    }

    pub fn cases_in_split(&self, split: Split) -> impl Iterator<Item = &ClinicalCase> {
        self.cases.iter().filter(move |c| c.split == split)
    }

    pub fn split_counts(&self) -> SplitCounts {
        let mut counts = SplitCounts { gold_train: 0, large_train: 0, test: 0 };
        for case in &self.cases {
            match case.split {
                Split::GoldTrain => counts.gold_train += 1,
                Split::LargeTrain => counts.large_train += 1,
                Split::Test => counts.test += 1,
            }
        }
        counts
    }

    /// large_train case ids whose summaries are whitespace-only.
    pub fn flagged_whitespace_summaries(&self) -> &[String] {
        &self.flagged
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    case_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    full_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    full_text_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary_path: Option<String>,
    split: Split,
}

fn read_text(base: &Path, rel: &str) -> Result<String, CorpusError> {
    let path: PathBuf = if Path::new(rel).is_absolute() {
        rel.into()
    } else {
        base.join(rel)
    };
    std::fs::read_to_string(&path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

fn resolve_field(
    line: usize,
    name: &str,
    inline: Option<String>,
    path: Option<String>,
    base: &Path,
) -> Result<Option<String>, CorpusError> {
    match (inline, path) {
        (Some(_), Some(_)) => Err(CorpusError::Manifest {
            line,
            message: format!("both {name} and {name}_path given"),
        }),
        (Some(text), None) => Ok(Some(text)),
        (None, Some(rel)) => read_text(base, &rel).map(Some),
        (None, None) => Ok(None),
    }
}

/// Load and validate a JSONL manifest. Relative `*_path` fields resolve
/// against the manifest's directory.
pub fn ingest(manifest_path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|source| CorpusError::Io {
        path: manifest_path.display().to_string(),
        source,
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut cases = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(raw)
            .map_err(|e| CorpusError::Manifest { line, message: e.to_string() })?;
        let full_text =
            resolve_field(line, "full_text", record.full_text, record.full_text_path, base)?
                .ok_or_else(|| CorpusError::Manifest {
                    line,
                    message: "needs full_text or full_text_path".into(),
                })?;
        let summary = resolve_field(line, "summary", record.summary, record.summary_path, base)?;
        cases.push(ClinicalCase { case_id: record.case_id, full_text, summary, split: record.split });
    }
    Corpus::from_cases(cases)
}

/// Write the corpus back as a JSONL manifest with inline texts.
/// `ingest(write_manifest(c))` reproduces `c` field for field.
pub fn write_manifest(corpus: &Corpus, manifest_path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    for case in corpus.cases() {
        let record = ManifestRecord {
            case_id: case.case_id.clone(),
            full_text: Some(case.full_text.clone()),
            full_text_path: None,
            summary: case.summary.clone(),
            summary_path: None,
            split: case.split,
        };
        out.push_str(&serde_json::to_string(&record).expect("manifest record serializes"));
        out.push('\n');
    }
    std::fs::write(manifest_path, out).map_err(|source| CorpusError::Io {
        path: manifest_path.display().to_string(),
        source,
    })
}

pub const FEW_SHOT_SEED_LEN: usize = 3;
pub const REFINE_BATCH_LEN: usize = 50;
pub const MIN_GOLD_FOR_PARTITION: usize = FEW_SHOT_SEED_LEN + REFINE_BATCH_LEN;

/// The gold_train set split by 1-based position after sorting by case id:
/// positions 1-3 seed the meta-prompt, 4-53 form the refinement batch, and
/// the remainder feeds structure statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPartition {
    pub few_shot_seed: Vec<String>,
    pub refine_batch: Vec<String>,
    pub structure_pool: Vec<String>,
    pub ordering_key: String,
}

impl CorpusPartition {
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let json = serde_json::to_string_pretty(self).expect("partition serializes");
        std::fs::write(path, json).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CorpusError::Manifest { line: 0, message: e.to_string() })
    }
}

/// Partition the gold_train cases. Requires at least 53 of them.
pub fn partition_gold(corpus: &Corpus) -> Result<CorpusPartition, CorpusError> {
    let mut ids: Vec<String> = corpus
        .cases_in_split(Split::GoldTrain)
        .map(|c| c.case_id.clone())
        .collect();
    if ids.len() < MIN_GOLD_FOR_PARTITION {
        return Err(CorpusError::NotEnoughGold {
            found: ids.len(),
            required: MIN_GOLD_FOR_PARTITION,
        });
    }
    ids.sort_unstable();
    let structure_pool = ids.split_off(MIN_GOLD_FOR_PARTITION);
    let refine_batch = ids.split_off(FEW_SHOT_SEED_LEN);
    Ok(CorpusPartition {
        few_shot_seed: ids,
        refine_batch,
        structure_pool,
        ordering_key: "lexicographic_case_id".to_string(),
    })
}
