//! Test-set summary generation with the length guard: a summary must be
//! shorter (in characters) than its source text, with up to five attempts
//! and a full-text fallback after the fifth.
//!
//! Attempt 1 runs at temperature 0; once the guard trips, later attempts use
//! a small positive temperature so a deterministic provider does not loop on
//! the same over-length output. Each attempt's temperature is logged.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClinicalCase, Corpus, Split};
use crate::gateway::{stage, ChatRequest, EmbeddingProvider, Gateway, GatewayError};
use crate::prompting::PromptVersion;
use crate::retrieval::{augment_few_shot, retrieve, RetrievalError, VectorIndex};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("case '{case_id}' is not in the test split")]
    NotATestCase { case_id: String },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("record for case '{case_id}' has no matching corpus case")]
    UnknownCase { case_id: String },
    #[error("no inference records to analyze")]
    NoRecords,
    #[error("cannot access '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt records file '{path}' at line {line}: {message}")]
    CorruptRecords { path: String, line: usize, message: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub const MAX_ATTEMPTS: u32 = 5;
/// Temperature for attempts after the guard has rejected an output.
pub const RETRY_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceOutcome {
    Accepted,
    FallbackFullText,
}

/// One test case's result. An accepted record always satisfies
/// `char_len_output < char_len_input`; a fallback record carries the full
/// text itself after five failed attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub case_id: String,
    pub summary: String,
    pub attempts: u32,
    pub outcome: InferenceOutcome,
    pub char_len_input: usize,
    pub char_len_output: usize,
    pub retrieval_used: bool,
}

/// Everything needed to augment requests with retrieved demonstrations.
pub struct RetrievalContext<'a> {
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn EmbeddingProvider,
    pub corpus: &'a Corpus,
    pub k: usize,
}

/// Output length with header-like lines removed, for logging only: the
/// guard itself always compares full raw lengths.
fn header_stripped_len(text: &str) -> usize {
    text.lines()
        .filter(|line| {
            let t = line.trim();
            !(t.len() <= 60 && (t.ends_with(':') || t.starts_with('#')))
        })
        .map(|line| line.chars().count() + 1)
        .sum::<usize>()
        .saturating_sub(1)
}

/// Generate a summary for one test case under the length guard.
pub fn infer_case(
    case: &ClinicalCase,
    prompt: &PromptVersion,
    gateway: &Gateway,
    retrieval: Option<&RetrievalContext<'_>>,
) -> Result<InferenceRecord, InferenceError> {
    if case.split != Split::Test {
        return Err(InferenceError::NotATestCase { case_id: case.case_id.clone() });
    }
    let input_chars = case.full_text.chars().count();
    let user_text = match retrieval {
        None => case.full_text.clone(),
        Some(ctx) => {
            let hits = retrieve(&case.case_id, &case.full_text, ctx.index, ctx.embedder, ctx.k)?;
            augment_few_shot("", &hits, ctx.corpus, &case.full_text)
        }
    };
    for attempt in 1..=MAX_ATTEMPTS {
        let temperature = if attempt == 1 { 0.0 } else { RETRY_TEMPERATURE };
        log::debug!("case {}: attempt {attempt} at temperature {temperature}", case.case_id);
        let request = ChatRequest::new(stage::SUMMARIZE, &prompt.text, &user_text)
            .with_temperature(temperature);
        match gateway.complete(&request) {
            Ok(response) => {
                let output_chars = response.text.chars().count();
                if output_chars < input_chars {
                    log::debug!(
                        "case {}: accepted at attempt {attempt} ({output_chars} chars, {} header-stripped)",
                        case.case_id,
                        header_stripped_len(&response.text)
                    );
                    return Ok(InferenceRecord {
                        case_id: case.case_id.clone(),
                        summary: response.text,
                        attempts: attempt,
                        outcome: InferenceOutcome::Accepted,
                        char_len_input: input_chars,
                        char_len_output: output_chars,
                        retrieval_used: retrieval.is_some(),
                    });
                }
                log::warn!(
                    "case {}: attempt {attempt} output ({output_chars} chars) not shorter than input ({input_chars} chars)",
                    case.case_id
                );
            }
            Err(err @ (GatewayError::Transport { .. } | GatewayError::EmptyResponse { .. })) => {
                log::warn!("case {}: attempt {attempt} failed: {err}", case.case_id);
            }
            Err(err) => return Err(err.into()),
        }
    }
    log::error!(
        "case {}: no valid summary after {MAX_ATTEMPTS} attempts, falling back to full text",
        case.case_id
    );
    Ok(InferenceRecord {
        case_id: case.case_id.clone(),
        summary: case.full_text.clone(),
        attempts: MAX_ATTEMPTS,
        outcome: InferenceOutcome::FallbackFullText,
        char_len_input: input_chars,
        char_len_output: input_chars,
        retrieval_used: retrieval.is_some(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRunStats {
    pub n_cases: usize,
    pub n_fallback: usize,
    /// Accepted after more than one attempt.
    pub n_regenerated: usize,
    pub mean_input_words: f64,
    pub mean_output_words: f64,
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> InferenceError + '_ {
    move |source| InferenceError::Io { path: path.display().to_string(), source }
}

fn load_records(path: &Path) -> Result<Vec<InferenceRecord>, InferenceError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| InferenceError::CorruptRecords {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Run [`infer_case`] over the test set, persisting each result as it lands:
/// `<case_id>.txt` with the summary plus one JSONL line in `records.jsonl`.
/// Cases already present in `records.jsonl` are skipped, so an interrupted
/// run resumes where it stopped.
pub fn infer_all(
    testset: &[&ClinicalCase],
    prompt: &PromptVersion,
    gateway: &Gateway,
    retrieval: Option<&RetrievalContext<'_>>,
    out_dir: &Path,
) -> Result<InferenceRunStats, InferenceError> {
    if testset.is_empty() {
        return Err(InferenceError::EmptyTestSet);
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let records_path = out_dir.join("records.jsonl");
    let mut records = load_records(&records_path)?;
    let done: HashSet<String> = records.iter().map(|r| r.case_id.clone()).collect();
    let mut records_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&records_path)
        .map_err(io_err(&records_path))?;

    for case in testset {
        if done.contains(&case.case_id) {
            log::debug!("case {}: already inferred, skipping", case.case_id);
            continue;
        }
        let record = infer_case(case, prompt, gateway, retrieval)?;
        let text_path = out_dir.join(format!("{}.txt", case.case_id));
        let tmp = text_path.with_extension("txt.tmp");
        std::fs::write(&tmp, &record.summary).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &text_path).map_err(io_err(&text_path))?;
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(records_file, "{line}").map_err(io_err(&records_path))?;
        records_file.flush().map_err(io_err(&records_path))?;
        records.push(record);
    }

    let testset_ids: HashSet<&str> = testset.iter().map(|c| c.case_id.as_str()).collect();
    let relevant: Vec<&InferenceRecord> =
        records.iter().filter(|r| testset_ids.contains(r.case_id.as_str())).collect();
    let by_id = |id: &str| testset.iter().find(|c| c.case_id == id).expect("record id in testset");
    let n = relevant.len();
    Ok(InferenceRunStats {
        n_cases: n,
        n_fallback: relevant
            .iter()
            .filter(|r| r.outcome == InferenceOutcome::FallbackFullText)
            .count(),
        n_regenerated: relevant
            .iter()
            .filter(|r| r.outcome == InferenceOutcome::Accepted && r.attempts > 1)
            .count(),
        mean_input_words: relevant
            .iter()
            .map(|r| word_count(&by_id(&r.case_id).full_text) as f64)
            .sum::<f64>()
            / n as f64,
        mean_output_words: relevant.iter().map(|r| word_count(&r.summary) as f64).sum::<f64>()
            / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordStats {
    pub mean_input_words: f64,
    /// Absent when no case fell back to its full text.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_fallback_input_words: Option<f64>,
}

/// Mean input length in whitespace-delimited words, over all records and
/// over the fallback subset.
pub fn word_stats(
    records: &[InferenceRecord],
    corpus: &Corpus,
) -> Result<WordStats, InferenceError> {
    if records.is_empty() {
        return Err(InferenceError::NoRecords);
    }
    let mut all = Vec::with_capacity(records.len());
    let mut fallback = Vec::new();
    for record in records {
        let case = corpus
            .get(&record.case_id)
            .ok_or_else(|| InferenceError::UnknownCase { case_id: record.case_id.clone() })?;
        let words = word_count(&case.full_text) as f64;
        all.push(words);
        if record.outcome == InferenceOutcome::FallbackFullText {
            fallback.push(words);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(WordStats {
        mean_input_words: mean(&all),
        mean_fallback_input_words: if fallback.is_empty() { None } else { Some(mean(&fallback)) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{RetryPolicy, TranscriptEntry, TranscriptProvider};
    use crate::prompting::PromptStage;
    use std::sync::Arc;

    fn test_case(id: &str, chars: usize) -> ClinicalCase {
        ClinicalCase {
            case_id: id.to_string(),
            full_text: "x".repeat(chars),
            summary: None,
            split: Split::Test,
        }
    }

    fn prompt() -> PromptVersion {
        PromptVersion {
            version_id: 2,
            text: "BEST PROMPT".to_string(),
            parent: Some(1),
            created_by_stage: PromptStage::Refine,
            epoch: Some(1),
            batch_scores: None,
            no_change: false,
        }
    }

    fn scripted(entries: Vec<TranscriptEntry>) -> (Gateway, Arc<TranscriptProvider>) {
        let provider = Arc::new(TranscriptProvider::from_entries(entries).unwrap());
        let gateway = Gateway::builder()
            .bind_all(provider.clone())
            .retry(RetryPolicy::immediate(1))
            .build();
        (gateway, provider)
    }

    #[test]
    fn short_output_accepted_first_attempt() {
        let case = test_case("t1", 500);
        let (gateway, _) = scripted(vec![TranscriptEntry::reply(
            stage::SUMMARIZE,
            "a".repeat(50),
        )]);
        let record = infer_case(&case, &prompt(), &gateway, None).unwrap();
        assert_eq!(record.outcome, InferenceOutcome::Accepted);
        assert_eq!(record.attempts, 1);
        assert_eq!(record.char_len_output, 50);
        assert_eq!(record.char_len_input, 500);
        assert!(!record.retrieval_used);
    }

    #[test]
    fn long_long_short_accepted_third_attempt() {
        let case = test_case("t1", 100);
        let (gateway, _) = scripted(vec![
            TranscriptEntry::reply(stage::SUMMARIZE, "l".repeat(150)),
            TranscriptEntry::reply(stage::SUMMARIZE, "l".repeat(120)),
            TranscriptEntry::reply(stage::SUMMARIZE, "s".repeat(20)),
        ]);
        let record = infer_case(&case, &prompt(), &gateway, None).unwrap();
        assert_eq!(record.outcome, InferenceOutcome::Accepted);
        assert_eq!(record.attempts, 3);
        assert_eq!(record.char_len_output, 20);
    }

    #[test]
    fn always_long_falls_back_to_full_text_after_five() {
        let case = test_case("t1", 100);
        let entries = (0..5)
            .map(|_| TranscriptEntry::reply(stage::SUMMARIZE, "l".repeat(200)))
            .collect();
        let (gateway, provider) = scripted(entries);
        let record = infer_case(&case, &prompt(), &gateway, None).unwrap();
        assert_eq!(record.outcome, InferenceOutcome::FallbackFullText);
        assert_eq!(record.attempts, 5);
        assert_eq!(record.summary, case.full_text);
        assert_eq!(record.char_len_output, record.char_len_input);
        assert_eq!(provider.remaining(), 0);
    }

    #[test]
    fn equal_length_output_is_rejected_by_the_guard() {
        let case = test_case("t1", 100);
        let (gateway, _) = scripted(vec![
            TranscriptEntry::reply(stage::SUMMARIZE, "e".repeat(100)),
            TranscriptEntry::reply(stage::SUMMARIZE, "s".repeat(99)),
        ]);
        let record = infer_case(&case, &prompt(), &gateway, None).unwrap();
        assert_eq!(record.attempts, 2);
        assert_eq!(record.char_len_output, 99);
    }

    #[test]
    fn transport_errors_count_as_attempts() {
        let case = test_case("t1", 100);
        let (gateway, _) = scripted(vec![
            TranscriptEntry::fail(stage::SUMMARIZE, "down"),
            TranscriptEntry::fail(stage::SUMMARIZE, "down"),
            TranscriptEntry::reply(stage::SUMMARIZE, "ok short"),
        ]);
        let record = infer_case(&case, &prompt(), &gateway, None).unwrap();
        assert_eq!(record.outcome, InferenceOutcome::Accepted);
        assert_eq!(record.attempts, 3);
    }

    #[test]
    fn five_transport_errors_fall_back() {
        let case = test_case("t1", 100);
        let entries = (0..5).map(|_| TranscriptEntry::fail(stage::SUMMARIZE, "down")).collect();
        let (gateway, _) = scripted(entries);
        let record = infer_case(&case, &prompt(), &gateway, None).unwrap();
        assert_eq!(record.outcome, InferenceOutcome::FallbackFullText);
        assert_eq!(record.attempts, 5);
    }

    #[test]
    fn retry_attempts_use_positive_temperature() {
        let case = test_case("t1", 100);
        let (gateway, provider) = scripted(vec![
            TranscriptEntry::reply(stage::SUMMARIZE, "l".repeat(150)),
            TranscriptEntry::reply(stage::SUMMARIZE, "short"),
        ]);
        infer_case(&case, &prompt(), &gateway, None).unwrap();
        let requests = provider.recorded_requests();
        assert_eq!(requests.len(), 2);
        assert_eq!(requests[0].temperature, 0.0);
        assert_eq!(requests[1].temperature, RETRY_TEMPERATURE);
        assert_eq!(requests[0].system_text, "BEST PROMPT");
        assert_eq!(requests[0].user_text, case.full_text);
    }

    #[test]
    fn non_test_case_is_rejected() {
        let mut case = test_case("g1", 100);
        case.split = Split::GoldTrain;
        case.summary = Some("s".to_string());
        let (gateway, _) = scripted(vec![]);
        assert!(matches!(
            infer_case(&case, &prompt(), &gateway, None),
            Err(InferenceError::NotATestCase { .. })
        ));
    }

    fn testset(n: usize) -> Vec<ClinicalCase> {
        (1..=n).map(|i| test_case(&format!("t{i:03}"), 200 + i)).collect()
    }

    fn short_replies(n: usize) -> Vec<TranscriptEntry> {
        (0..n)
            .map(|i| TranscriptEntry::reply(stage::SUMMARIZE, format!("summary {i}")))
            .collect()
    }

    #[test]
    fn batch_of_34_all_short_has_no_fallbacks() {
        let cases = testset(34);
        let refs: Vec<&ClinicalCase> = cases.iter().collect();
        let (gateway, _) = scripted(short_replies(34));
        let dir = tempfile::tempdir().unwrap();
        let stats = infer_all(&refs, &prompt(), &gateway, None, dir.path()).unwrap();
        assert_eq!(stats.n_cases, 34);
        assert_eq!(stats.n_fallback, 0);
        assert!(dir.path().join("t001.txt").exists());
        assert!(dir.path().join("t034.txt").exists());
        let lines = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 34);
    }

    #[test]
    fn one_stubborn_case_in_ten_yields_one_fallback() {
        let cases = testset(10);
        let refs: Vec<&ClinicalCase> = cases.iter().collect();
        let mut entries = Vec::new();
        for i in 0..10 {
            if i == 4 {
                for _ in 0..5 {
                    entries.push(TranscriptEntry::reply(stage::SUMMARIZE, "l".repeat(500)));
                }
            } else {
                entries.push(TranscriptEntry::reply(stage::SUMMARIZE, format!("summary {i}")));
            }
        }
        let (gateway, _) = scripted(entries);
        let dir = tempfile::tempdir().unwrap();
        let stats = infer_all(&refs, &prompt(), &gateway, None, dir.path()).unwrap();
        assert_eq!(stats.n_fallback, 1);
        let t5 = std::fs::read_to_string(dir.path().join("t005.txt")).unwrap();
        assert_eq!(t5, cases[4].full_text);
    }

    #[test]
    fn interrupted_run_resumes_to_identical_output() {
        let cases = testset(12);
        let refs: Vec<&ClinicalCase> = cases.iter().collect();
        let all_replies = short_replies(12);

        let dir_full = tempfile::tempdir().unwrap();
        let (gateway, _) = scripted(all_replies.clone());
        infer_all(&refs, &prompt(), &gateway, None, dir_full.path()).unwrap();

        let dir_resumed = tempfile::tempdir().unwrap();
        let (gateway_head, _) = scripted(all_replies[..4].to_vec());
        let err =
            infer_all(&refs, &prompt(), &gateway_head, None, dir_resumed.path()).unwrap_err();
        assert!(matches!(err, InferenceError::Gateway(GatewayError::TranscriptExhausted { .. })));
        let partial = std::fs::read_to_string(dir_resumed.path().join("records.jsonl")).unwrap();
        assert_eq!(partial.lines().count(), 4);

        let (gateway_tail, _) = scripted(all_replies[4..].to_vec());
        let stats =
            infer_all(&refs, &prompt(), &gateway_tail, None, dir_resumed.path()).unwrap();
        assert_eq!(stats.n_cases, 12);

        for case in &cases {
            let name = format!("{}.txt", case.case_id);
            let a = std::fs::read(dir_full.path().join(&name)).unwrap();
            let b = std::fs::read(dir_resumed.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs after resume");
        }
        let a = std::fs::read(dir_full.path().join("records.jsonl")).unwrap();
        let b = std::fs::read(dir_resumed.path().join("records.jsonl")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unwritable_output_dir_fails_before_generation() {
        let cases = testset(2);
        let refs: Vec<&ClinicalCase> = cases.iter().collect();
        let (gateway, provider) = scripted(short_replies(2));
        let dir = tempfile::tempdir().unwrap();
        let blocked = dir.path().join("file-not-dir");
        std::fs::write(&blocked, "occupied").unwrap();
        let err = infer_all(&refs, &prompt(), &gateway, None, &blocked).unwrap_err();
        assert!(matches!(err, InferenceError::Io { .. }));
        assert_eq!(provider.remaining(), 2, "no requests should have been sent");
    }

    fn corpus_with_words(specs: &[(&str, usize)]) -> (Corpus, Vec<ClinicalCase>) {
        let cases: Vec<ClinicalCase> = specs
            .iter()
            .map(|(id, words)| ClinicalCase {
                case_id: id.to_string(),
                full_text: vec!["word"; *words].join(" "),
                summary: None,
                split: Split::Test,
            })
            .collect();
        (Corpus::from_cases(cases.clone()).unwrap(), cases)
    }

    fn record_for(case: &ClinicalCase, outcome: InferenceOutcome) -> InferenceRecord {
        InferenceRecord {
            case_id: case.case_id.clone(),
            summary: "s".to_string(),
            attempts: if outcome == InferenceOutcome::FallbackFullText { 5 } else { 1 },
            outcome,
            char_len_input: case.full_text.chars().count(),
            char_len_output: 1,
            retrieval_used: false,
        }
    }

    #[test]
    fn word_stats_single_input() {
        let (corpus, cases) = corpus_with_words(&[("t1", 100)]);
        let records = vec![record_for(&cases[0], InferenceOutcome::Accepted)];
        let stats = word_stats(&records, &corpus).unwrap();
        assert!((stats.mean_input_words - 100.0).abs() < 1e-12);
        assert!(stats.mean_fallback_input_words.is_none());
    }

    #[test]
    fn word_stats_fallback_mean_is_hand_mean() {
        let (corpus, cases) =
            corpus_with_words(&[("t1", 120), ("t2", 150), ("t3", 540)]);
        let records = vec![
            record_for(&cases[0], InferenceOutcome::FallbackFullText),
            record_for(&cases[1], InferenceOutcome::FallbackFullText),
            record_for(&cases[2], InferenceOutcome::Accepted),
        ];
        let stats = word_stats(&records, &corpus).unwrap();
        assert!((stats.mean_fallback_input_words.unwrap() - 135.0).abs() < 1e-12);
        assert!((stats.mean_input_words - 270.0).abs() < 1e-12);
    }

    #[test]
    fn word_stats_needs_records() {
        let (corpus, _) = corpus_with_words(&[("t1", 10)]);
        assert!(matches!(word_stats(&[], &corpus), Err(InferenceError::NoRecords)));
    }

    #[test]
    fn retrieval_augmented_request_carries_fences() {
        use crate::gateway::HashEmbedder;
        use crate::retrieval::build_index;

        let large: Vec<ClinicalCase> = (0..3)
            .map(|i| ClinicalCase {
                case_id: format!("l{i}"),
                full_text: format!("large case text {i}"),
                summary: Some(format!("large summary {i}")),
                split: Split::LargeTrain,
            })
            .collect();
        let corpus = Corpus::from_cases(large.clone()).unwrap();
        let embedder = HashEmbedder::new(3, 16);
        let index = build_index(&large.iter().collect::<Vec<_>>(), &embedder).unwrap();
        let ctx = RetrievalContext { index: &index, embedder: &embedder, corpus: &corpus, k: 2 };

        let case = test_case("t1", 400);
        let (gateway, provider) = scripted(vec![TranscriptEntry::reply(
            stage::SUMMARIZE,
            "short summary",
        )]);
        let record = infer_case(&case, &prompt(), &gateway, Some(&ctx)).unwrap();
        assert!(record.retrieval_used);
        let requests = provider.recorded_requests();
        assert!(requests[0].user_text.contains("=== TEST INPUT: FULL TEXT ==="));
        assert!(requests[0].user_text.contains("=== EXAMPLE 2: SUMMARY ==="));
        assert!(requests[0].user_text.ends_with(&case.full_text));
    }

    #[test]
    fn header_stripping_only_affects_logged_length() {
        let text = "Diagnosis:\nlong body line here\n## Outcome\nanother body line";
        assert!(header_stripped_len(text) < text.chars().count());
    }
}
