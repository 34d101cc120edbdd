//! The iterative self-prompting loop: generate summaries for the refinement
//! batch with the current prompt, score them, select the worst cases,
//! collect reflections, and refine the prompt. Repeats for a fixed number of
//! epochs or until scores plateau with no invalid summaries left.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClinicalCase, Corpus, CorpusPartition};
use crate::gateway::{stage, ChatRequest, EmbeddingProvider, Gateway, GatewayError};
use crate::metrics::{self, CaseScore, MetricTriple, MetricsError};
use crate::prompting::{
    build_refinement_instruction, fmt_triple, BatchScores, PromptError, PromptStore,
    PromptVersion, ReflectionFeedback, StoreError, WorstCaseEntry,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("epoch {epoch} aborted: {n_invalid} of {batch} summaries invalid (more than half)")]
    TooManyInvalid { epoch: u32, n_invalid: usize, batch: usize },
    #[error("cannot select {wanted} worst cases from {available} entries")]
    SelectionShortfall { wanted: usize, available: usize },
    #[error("batch case '{case_id}' not present in corpus")]
    MissingCase { case_id: String },
    #[error("batch case '{case_id}' has no reference summary")]
    MissingSummary { case_id: String },
    #[error("prompt store has no version 1; initialize the prompt first")]
    StoreNotInitialized,
    #[error("prompt v{expected} is no longer the latest version in the store")]
    StaleParent { expected: u32 },
    #[error("no epoch logs to select from")]
    EmptyLogs,
    #[error("cannot write '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A generated summary with its scores and, once collected, its reflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSummary {
    pub case_id: String,
    pub text: String,
    pub score: CaseScore,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reflection: Option<ReflectionFeedback>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochAggregate {
    pub rouge_l: MetricTriple,
    pub bert_score: MetricTriple,
}

/// Persisted record of one epoch over the refinement batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub prompt_version: u32,
    pub case_scores: Vec<CaseScore>,
    pub aggregate: EpochAggregate,
    pub n_invalid: usize,
    pub worst_k_ids: Vec<String>,
}

pub const DEFAULT_EPOCHS: u32 = 5;
pub const DEFAULT_WORST_K: usize = 15;
pub const DEFAULT_PLATEAU_DELTA: f64 = 0.01;
/// Total asks per reflection before falling back to the raw reply.
pub const DEFAULT_REFLECT_ASKS: u32 = 2;

fn default_reflect_asks() -> u32 {
    DEFAULT_REFLECT_ASKS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub epochs: u32,
    pub worst_k: usize,
    /// Case ids to refine over; empty means the partition's refine batch.
    #[serde(default)]
    pub batch: Vec<String>,
    pub plateau_delta: f64,
    #[serde(default = "default_reflect_asks")]
    pub reflect_asks: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: DEFAULT_EPOCHS,
            worst_k: DEFAULT_WORST_K,
            batch: Vec::new(),
            plateau_delta: DEFAULT_PLATEAU_DELTA,
            reflect_asks: DEFAULT_REFLECT_ASKS,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.epochs < 1 {
            return Err(EngineError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.worst_k < 1 {
            return Err(EngineError::InvalidConfig("worst_k must be at least 1".into()));
        }
        if self.reflect_asks < 1 {
            return Err(EngineError::InvalidConfig("reflect_asks must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct EpochOutcome {
    pub log: EpochLog,
    /// Generated texts, parallel to `log.case_scores`.
    pub summaries: Vec<ScoredSummary>,
}

/// Generate and score one summary per batch case with the given prompt.
/// Transport failures and empty replies mark the case invalid and the epoch
/// continues; more than half invalid aborts it.
pub fn run_epoch(
    epoch: u32,
    prompt: &PromptVersion,
    batch: &[&ClinicalCase],
    gateway: &Gateway,
    embedder: &dyn EmbeddingProvider,
    worst_k: usize,
) -> Result<EpochOutcome, EngineError> {
    let mut summaries = Vec::with_capacity(batch.len());
    for case in batch {
        let reference = case
            .summary
            .as_deref()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| EngineError::MissingSummary { case_id: case.case_id.clone() })?;
        let request = ChatRequest::new(stage::SUMMARIZE, &prompt.text, &case.full_text);
        let summary = match gateway.complete(&request) {
            Ok(response) => ScoredSummary {
                case_id: case.case_id.clone(),
                score: metrics::score_case(&case.case_id, &response.text, reference, embedder),
                text: response.text,
                reflection: None,
            },
            Err(
                err @ (GatewayError::Transport { .. } | GatewayError::EmptyResponse { .. }),
            ) => {
                log::warn!("epoch {epoch}, case {}: {err}; marked invalid", case.case_id);
                ScoredSummary {
                    case_id: case.case_id.clone(),
                    text: String::new(),
                    score: CaseScore::invalid(&case.case_id),
                    reflection: None,
                }
            }
            Err(err) => return Err(err.into()),
        };
        summaries.push(summary);
    }
    let case_scores: Vec<CaseScore> = summaries.iter().map(|s| s.score.clone()).collect();
    let n_invalid = case_scores.iter().filter(|s| !s.valid).count();
    if n_invalid * 2 > batch.len() {
        return Err(EngineError::TooManyInvalid { epoch, n_invalid, batch: batch.len() });
    }
    let agg = metrics::aggregate(&case_scores)?;
    let worst_k_ids = select_worst(&case_scores, worst_k.min(case_scores.len()))?;
    Ok(EpochOutcome {
        log: EpochLog {
            epoch,
            prompt_version: prompt.version_id,
            case_scores,
            aggregate: EpochAggregate { rouge_l: agg.rouge_l, bert_score: agg.bert_score },
            n_invalid,
            worst_k_ids,
        },
        summaries,
    })
}

/// The k worst case ids: invalid entries first (by case id), then valid
/// entries by ascending ROUGE-L F1, ties by case id.
pub fn select_worst(scores: &[CaseScore], k: usize) -> Result<Vec<String>, EngineError> {
    if scores.len() < k {
        return Err(EngineError::SelectionShortfall { wanted: k, available: scores.len() });
    }
    let mut order: Vec<&CaseScore> = scores.iter().collect();
    order.sort_by(|a, b| match (a.valid, b.valid) {
        (false, true) => Ordering::Less,
        (true, false) => Ordering::Greater,
        (false, false) => a.case_id.cmp(&b.case_id),
        (true, true) => {
            let fa = a.rouge_l.expect("valid case has scores").f1;
            let fb = b.rouge_l.expect("valid case has scores").f1;
            fa.partial_cmp(&fb)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.case_id.cmp(&b.case_id))
        }
    });
    Ok(order.into_iter().take(k).map(|s| s.case_id.clone()).collect())
}

fn reflection_request_text(reference: &str, generated: &str, score: &CaseScore) -> String {
    let generated_block =
        if generated.trim().is_empty() { "(no usable output was generated)" } else { generated };
    format!(
        "Reference summary:\n{reference}\n\nGenerated summary:\n{generated_block}\n\n\
Scores:\nROUGE-L: {}\nBERTScore: {}\n\n\
Explain briefly why the generated summary scored this way, then propose one \
concrete change to the summarization prompt. End with a line starting with \
\"SUGGESTION:\" followed by the proposed change.\n",
        fmt_triple(&score.rouge_l),
        fmt_triple(&score.bert_score),
    )
}

fn parse_reflection(text: &str) -> Option<(String, String)> {
    let idx = text.find("SUGGESTION:")?;
    let reflection = text[..idx].trim();
    let suggestion = text[idx + "SUGGESTION:".len()..].trim();
    if reflection.is_empty() || suggestion.is_empty() {
        return None;
    }
    Some((reflection.to_string(), suggestion.to_string()))
}

/// One reflection per worst case, order preserved. A reply without a usable
/// "SUGGESTION:" marker is re-asked up to `max_asks` total times, then falls
/// back to the raw reply with suggestion "(none)".
pub fn collect_reflections(
    worst: &[(&ClinicalCase, &ScoredSummary)],
    gateway: &Gateway,
    max_asks: u32,
) -> Result<Vec<ReflectionFeedback>, EngineError> {
    let mut out = Vec::with_capacity(worst.len());
    for (case, scored) in worst {
        let reference = case
            .summary
            .as_deref()
            .ok_or_else(|| EngineError::MissingSummary { case_id: case.case_id.clone() })?;
        let user_text = reflection_request_text(reference, &scored.text, &scored.score);
        let mut last_reply = String::new();
        let mut parsed = None;
        for _ in 0..max_asks.max(1) {
            match gateway.complete(&ChatRequest::new(stage::REFLECT, "", &user_text)) {
                Ok(response) => {
                    if let Some(pair) = parse_reflection(&response.text) {
                        parsed = Some(pair);
                        break;
                    }
                    last_reply = response.text;
                }
                Err(
                    err @ (GatewayError::Transport { .. } | GatewayError::EmptyResponse { .. }),
                ) => {
                    log::warn!("case {}: reflection request failed: {err}", case.case_id);
                }
                Err(err) => return Err(err.into()),
            }
        }
        let (reflection, suggestion) = parsed.unwrap_or_else(|| {
            log::warn!(
                "case {}: no SUGGESTION marker after {max_asks} ask(s), using raw reply",
                case.case_id
            );
            let raw = if last_reply.trim().is_empty() {
                "(no reflection obtained)".to_string()
            } else {
                last_reply.clone()
            };
            (raw, "(none)".to_string())
        });
        out.push(ReflectionFeedback {
            case_id: case.case_id.clone(),
            reflection,
            suggestion,
            rouge_l_f1: scored.score.rouge_l.map(|t| t.f1).unwrap_or(0.0),
        });
    }
    Ok(out)
}

/// Ask the model to revise `previous` given the worst-case bundle and persist
/// the reply as the next version. The store is untouched on failure.
pub fn refine_prompt(
    previous: &PromptVersion,
    worst: &[WorstCaseEntry],
    epoch: u32,
    gateway: &Gateway,
    store: &mut PromptStore,
) -> Result<PromptVersion, EngineError> {
    match store.latest() {
        Some(latest) if latest.version_id == previous.version_id => {}
        _ => return Err(EngineError::StaleParent { expected: previous.version_id }),
    }
    let instruction = build_refinement_instruction(previous, worst)?;
    let response = gateway.complete(&ChatRequest::new(stage::REFINE, "", &instruction))?;
    Ok(store.append_refined(response.text, previous.version_id, epoch)?.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EngineError> {
    let json = serde_json::to_string_pretty(value).expect("engine artifacts serialize");
    let tmp = path.with_extension("tmp");
    let io = |source| EngineError::Io { path: path.display().to_string(), source };
    std::fs::write(&tmp, json).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Run the full loop. Each completed epoch persists `epoch_{N}.json` under
/// `run_dir` and produces one refined prompt version; the effective config is
/// echoed to `config.json`. Stops early once ROUGE-L F1 improves by less than
/// `plateau_delta` for two consecutive epochs and the latest epoch had no
/// invalid summaries.
pub fn run(
    config: &RunConfig,
    partition: &CorpusPartition,
    corpus: &Corpus,
    gateway: &Gateway,
    embedder: &dyn EmbeddingProvider,
    store: &mut PromptStore,
    run_dir: &Path,
) -> Result<Vec<EpochLog>, EngineError> {
    config.validate()?;
    let batch_ids: &[String] =
        if config.batch.is_empty() { &partition.refine_batch } else { &config.batch };
    if batch_ids.is_empty() {
        return Err(EngineError::InvalidConfig("refinement batch is empty".into()));
    }
    if config.worst_k > batch_ids.len() {
        return Err(EngineError::InvalidConfig(format!(
            "worst_k {} exceeds batch size {}",
            config.worst_k,
            batch_ids.len()
        )));
    }
    let batch: Vec<&ClinicalCase> = batch_ids
        .iter()
        .map(|id| corpus.get(id).ok_or_else(|| EngineError::MissingCase { case_id: id.clone() }))
        .collect::<Result<_, _>>()?;
    if store.is_empty() {
        return Err(EngineError::StoreNotInitialized);
    }
    std::fs::create_dir_all(run_dir).map_err(|source| EngineError::Io {
        path: run_dir.display().to_string(),
        source,
    })?;
    let echoed = RunConfig { batch: batch_ids.to_vec(), ..config.clone() };
    write_json(&run_dir.join("config.json"), &echoed)?;

    let mut logs: Vec<EpochLog> = Vec::new();
    let mut f1_history: Vec<f64> = Vec::new();
    for epoch in 1..=config.epochs {
        let prompt = store.latest().expect("store checked non-empty").clone();
        let mut outcome = run_epoch(epoch, &prompt, &batch, gateway, embedder, config.worst_k)?;
        write_json(&run_dir.join(format!("epoch_{epoch}.json")), &outcome.log)?;
        store.record_batch_scores(
            prompt.version_id,
            BatchScores {
                rouge_l_f1_mean: outcome.log.aggregate.rouge_l.f1,
                bert_f1_mean: outcome.log.aggregate.bert_score.f1,
                n_invalid: outcome.log.n_invalid,
            },
        )?;

        let reflections = {
            let worst_pairs: Vec<(&ClinicalCase, &ScoredSummary)> = outcome
                .log
                .worst_k_ids
                .iter()
                .map(|id| {
                    let case = corpus.get(id).expect("worst id came from the batch");
                    let scored = outcome
                        .summaries
                        .iter()
                        .find(|s| &s.case_id == id)
                        .expect("worst id was scored");
                    (case, scored)
                })
                .collect();
            collect_reflections(&worst_pairs, gateway, config.reflect_asks)?
        };
        for feedback in &reflections {
            if let Some(s) = outcome.summaries.iter_mut().find(|s| s.case_id == feedback.case_id)
            {
                s.reflection = Some(feedback.clone());
            }
        }
        let entries: Vec<WorstCaseEntry> = reflections
            .iter()
            .map(|feedback| {
                let case = corpus.get(&feedback.case_id).expect("worst id came from the batch");
                let scored = outcome
                    .summaries
                    .iter()
                    .find(|s| s.case_id == feedback.case_id)
                    .expect("worst id was scored");
                WorstCaseEntry {
                    case_id: feedback.case_id.clone(),
                    reference_summary: case.summary.clone().unwrap_or_default(),
                    generated_summary: if scored.text.trim().is_empty() {
                        "(no usable output was generated)".to_string()
                    } else {
                        scored.text.clone()
                    },
                    rouge_l: scored.score.rouge_l,
                    bert_score: scored.score.bert_score,
                    reflection: feedback.reflection.clone(),
                    suggestion: feedback.suggestion.clone(),
                }
            })
            .collect();
        refine_prompt(&prompt, &entries, epoch, gateway, store)?;

        f1_history.push(outcome.log.aggregate.rouge_l.f1);
        let n_invalid = outcome.log.n_invalid;
        logs.push(outcome.log);

        if epoch < config.epochs && f1_history.len() >= 3 {
            let n = f1_history.len();
            let latest_gain = f1_history[n - 1] - f1_history[n - 2];
            let previous_gain = f1_history[n - 2] - f1_history[n - 3];
            if latest_gain < config.plateau_delta
                && previous_gain < config.plateau_delta
                && n_invalid == 0
            {
                log::info!("ROUGE-L plateau after epoch {epoch}, stopping early");
                break;
            }
        }
    }
    Ok(logs)
}

/// The best prompt version across epoch logs: fewest invalid summaries, then
/// highest aggregate ROUGE-L F1, then the earliest version.
pub fn select_best(logs: &[EpochLog]) -> Result<u32, EngineError> {
    logs.iter()
        .min_by(|a, b| {
            a.n_invalid
                .cmp(&b.n_invalid)
                .then_with(|| {
                    b.aggregate
                        .rouge_l
                        .f1
                        .partial_cmp(&a.aggregate.rouge_l.f1)
                        .unwrap_or(Ordering::Equal)
                })
                .then_with(|| a.prompt_version.cmp(&b.prompt_version))
        })
        .map(|log| log.prompt_version)
        .ok_or(EngineError::EmptyLogs)
}
