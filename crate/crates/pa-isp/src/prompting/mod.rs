//! Meta-prompt construction, prompt versioning, refinement instructions,
//! and structure statistics over gold summaries.
//!
//! The meta-prompt combines a task description, four chain-of-thought
//! questions, five clinical perspectives, a metric note, and three fenced
//! full-text/summary examples. Its wording lives in a template with named
//! placeholders, so operators can reword without touching code.

mod store;

pub use store::{PromptStore, StoreError};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ClinicalCase;
use crate::gateway::{stage, ChatRequest, Gateway, GatewayError};
use crate::metrics::{tokenize, MetricTriple};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("meta-prompt needs exactly {expected} examples, got {got}")]
    ExampleCount { expected: usize, got: usize },
    #[error("case '{case_id}' has no usable summary")]
    MissingSummary { case_id: String },
    #[error("template is missing placeholder '{{{name}}}'")]
    MissingPlaceholder { name: String },
    #[error("refinement instruction needs at least one worst-case entry")]
    EmptyWorstSet,
    #[error("case '{case_id}': reflection text is empty")]
    EmptyReflection { case_id: String },
    #[error("structure statistics need a non-empty pool")]
    EmptyPool,
    #[error("prompt store already holds version 1")]
    AlreadyInitialized,
    #[error("perspective name '{name}' appears more than once")]
    DuplicatePerspective { name: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perspective {
    pub name: String,
    pub guidance: String,
}

/// Ordered, uniquely named summary perspectives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerspectiveSet {
    perspectives: Vec<Perspective>,
}

impl PerspectiveSet {
    pub fn new(perspectives: Vec<Perspective>) -> Result<Self, PromptError> {
        let mut seen = std::collections::HashSet::new();
        for p in &perspectives {
            if !seen.insert(p.name.clone()) {
                return Err(PromptError::DuplicatePerspective { name: p.name.clone() });
            }
        }
        Ok(PerspectiveSet { perspectives })
    }

    /// The five clinical perspectives, in their fixed order.
    pub fn default_clinical() -> Self {
        let pairs = [
            ("Patient Presentation", "age, sex, relevant history."),
            ("Clinical Presentation", "key symptoms and signs."),
            ("Diagnosis", "relevant investigations, tests, conclusions."),
            ("Treatment/Intervention", "medications, surgeries, therapies."),
            ("Outcome and Follow-up", "results of treatment, current status."),
        ];
        PerspectiveSet {
            perspectives: pairs
                .into_iter()
                .map(|(name, guidance)| Perspective {
                    name: name.to_string(),
                    guidance: guidance.to_string(),
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Perspective> {
        self.perspectives.iter()
    }

    pub fn len(&self) -> usize {
        self.perspectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perspectives.is_empty()
    }
}

pub const DEFAULT_COT_QUESTIONS: [&str; 4] = [
    "What common structure or patterns do you observe in the examples?",
    "What information is emphasised?",
    "How can a language model be guided to produce similar quality outputs?",
    "What errors should be avoided?",
];

pub fn default_cot_questions() -> Vec<String> {
    DEFAULT_COT_QUESTIONS.iter().map(|q| q.to_string()).collect()
}

pub const DEFAULT_METRIC_NOTE: &str = "Generated summaries are scored with ROUGE-L \
(lexical overlap with the reference) and BERTScore (embedding semantic fidelity). \
The prompt should steer wording and ordering toward the reference style, since \
lexical overlap is the harder score to earn.";

/// Meta-prompt skeleton. Placeholders: `{cot_questions}`, `{perspectives}`,
/// `{metric_note}`, `{examples}`.
pub const DEFAULT_META_TEMPLATE: &str = "\
You are designing a reusable prompt that will instruct a language model to \
summarise clinical case reports into concise, well-structured summaries.

Before writing the prompt, think through these questions:
{cot_questions}

The prompt must require every summary to cover these perspectives:
{perspectives}

{metric_note}

Representative examples:
{examples}

Reply with the generated summarization prompt only, no commentary.
";

const META_PLACEHOLDERS: [&str; 4] =
    ["cot_questions", "perspectives", "metric_note", "examples"];

pub const META_EXAMPLE_COUNT: usize = 3;

pub(crate) fn example_fences(index: usize) -> (String, String) {
    (
        format!("=== EXAMPLE {index}: FULL TEXT ==="),
        format!("=== EXAMPLE {index}: SUMMARY ==="),
    )
}

pub(crate) const EXAMPLES_END_FENCE: &str = "=== END EXAMPLES ===";

/// Render (full_text, summary) pairs in the labeled-fence format that
/// [`parse_example_fences`] inverts.
pub(crate) fn render_example_pairs(pairs: &[(&str, &str)]) -> String {
    let mut out = String::new();
    for (i, (text, summary)) in pairs.iter().enumerate() {
        let (text_fence, summary_fence) = example_fences(i + 1);
        out.push_str(&text_fence);
        out.push('\n');
        out.push_str(text.trim_end_matches('\n'));
        out.push('\n');
        out.push_str(&summary_fence);
        out.push('\n');
        out.push_str(summary.trim_end_matches('\n'));
        out.push('\n');
    }
    out.push_str(EXAMPLES_END_FENCE);
    out
}

fn render_examples(examples: &[&ClinicalCase]) -> Result<String, PromptError> {
    let mut pairs: Vec<(&str, &str)> = Vec::with_capacity(examples.len());
    for case in examples {
        let summary = case
            .summary
            .as_deref()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| PromptError::MissingSummary { case_id: case.case_id.clone() })?;
        pairs.push((&case.full_text, summary));
    }
    Ok(render_example_pairs(&pairs))
}

/// Build the meta-prompt from the default template.
pub fn build_meta_prompt(
    cot_questions: &[String],
    perspectives: &PerspectiveSet,
    metric_note: &str,
    examples: &[&ClinicalCase],
) -> Result<String, PromptError> {
    build_meta_prompt_with_template(
        DEFAULT_META_TEMPLATE,
        cot_questions,
        perspectives,
        metric_note,
        examples,
    )
}

/// Build the meta-prompt from a caller-supplied template. The template must
/// contain all four placeholders.
pub fn build_meta_prompt_with_template(
    template: &str,
    cot_questions: &[String],
    perspectives: &PerspectiveSet,
    metric_note: &str,
    examples: &[&ClinicalCase],
) -> Result<String, PromptError> {
    for name in META_PLACEHOLDERS {
        if !template.contains(&format!("{{{name}}}")) {
            return Err(PromptError::MissingPlaceholder { name: name.to_string() });
        }
    }
    if examples.len() != META_EXAMPLE_COUNT {
        return Err(PromptError::ExampleCount {
            expected: META_EXAMPLE_COUNT,
            got: examples.len(),
        });
    }
    let questions = cot_questions
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {q}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let perspective_lines = perspectives
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{}. {}: {}", i + 1, p.name, p.guidance))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(template
        .replace("{cot_questions}", &questions)
        .replace("{perspectives}", &perspective_lines)
        .replace("{metric_note}", metric_note)
        .replace("{examples}", &render_examples(examples)?))
}

/// Recover the (full_text, summary) pairs from a document built with the
/// example fences. Inverse of the rendering in [`build_meta_prompt`].
pub fn parse_example_fences(document: &str) -> Vec<(String, String)> {
    #[derive(PartialEq)]
    enum State {
        Outside,
        InText,
        InSummary,
    }
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut state = State::Outside;
    let mut text_lines: Vec<&str> = Vec::new();
    let mut summary_lines: Vec<&str> = Vec::new();
    let next_index = |pairs: &Vec<(String, String)>| pairs.len() + 1;
    for line in document.lines() {
        let (text_fence, summary_fence) = example_fences(next_index(&pairs));
        if line == text_fence && state == State::Outside {
            state = State::InText;
        } else if line == summary_fence && state == State::InText {
            state = State::InSummary;
        } else if (line == EXAMPLES_END_FENCE || line == example_fences(next_index(&pairs) + 1).0)
            && state == State::InSummary
        {
            pairs.push((text_lines.join("\n"), summary_lines.join("\n")));
            text_lines.clear();
            summary_lines.clear();
            let (next_text_fence, _) = example_fences(next_index(&pairs));
            state = if line == next_text_fence { State::InText } else { State::Outside };
        } else {
            match state {
                State::InText => text_lines.push(line),
                State::InSummary => summary_lines.push(line),
                State::Outside => {}
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStage {
    Init,
    Refine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchScores {
    pub rouge_l_f1_mean: f64,
    pub bert_f1_mean: f64,
    pub n_invalid: usize,
}

/// One versioned prompt. Version 1 is always the init stage with no parent;
/// every refined version points at its immediate predecessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVersion {
    pub version_id: u32,
    pub text: String,
    pub parent: Option<u32>,
    pub created_by_stage: PromptStage,
    pub epoch: Option<u32>,
    pub batch_scores: Option<BatchScores>,
    /// Refinement returned text identical to the parent's.
    #[serde(default)]
    pub no_change: bool,
}

/// Generate prompt version 1 by sending the meta-prompt through the
/// `prompt_init` stage. Fails if the store already holds a version.
pub fn init_prompt(
    meta_prompt: &str,
    gateway: &Gateway,
    store: &mut PromptStore,
) -> Result<PromptVersion, PromptError> {
    if !store.is_empty() {
        return Err(PromptError::AlreadyInitialized);
    }
    let response = gateway.complete(&ChatRequest::new(stage::PROMPT_INIT, "", meta_prompt))?;
    Ok(store.append_init(response.text)?.clone())
}

/// Parsed reflection for one worst-scoring case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionFeedback {
    pub case_id: String,
    pub reflection: String,
    pub suggestion: String,
    pub rouge_l_f1: f64,
}

/// Everything the refinement instruction quotes for one worst-scoring case.
#[derive(Debug, Clone)]
pub struct WorstCaseEntry {
    pub case_id: String,
    pub reference_summary: String,
    pub generated_summary: String,
    pub rouge_l: Option<MetricTriple>,
    pub bert_score: Option<MetricTriple>,
    pub reflection: String,
    pub suggestion: String,
}

pub(crate) fn fmt_triple(triple: &Option<MetricTriple>) -> String {
    match triple {
        Some(t) => format!("p={:.4}, r={:.4}, f1={:.4}", t.precision, t.recall, t.f1),
        None => "not scorable".to_string(),
    }
}

/// Build the instruction that asks the model to revise `previous` in light
/// of the worst-case feedback. The previous prompt is quoted verbatim once.
pub fn build_refinement_instruction(
    previous: &PromptVersion,
    worst: &[WorstCaseEntry],
) -> Result<String, PromptError> {
    if worst.is_empty() {
        return Err(PromptError::EmptyWorstSet);
    }
    for entry in worst {
        if entry.reflection.trim().is_empty() {
            return Err(PromptError::EmptyReflection { case_id: entry.case_id.clone() });
        }
    }
    let mut doc = String::new();
    doc.push_str(
        "Revise the summarization prompt below. Keep what already works and \
fix the weaknesses the feedback exposes.\n\n",
    );
    doc.push_str(&format!("=== PREVIOUS PROMPT (v{}) ===\n", previous.version_id));
    doc.push_str(previous.text.trim_end_matches('\n'));
    doc.push_str("\n=== END PREVIOUS PROMPT ===\n\n");
    doc.push_str("Worst-scoring cases from the last epoch:\n");
    for entry in worst {
        doc.push_str(&format!("\n--- CASE {} ---\n", entry.case_id));
        doc.push_str("Reference summary:\n");
        doc.push_str(entry.reference_summary.trim_end_matches('\n'));
        doc.push_str("\nGenerated summary:\n");
        doc.push_str(entry.generated_summary.trim_end_matches('\n'));
        doc.push_str(&format!("\nROUGE-L: {}\n", fmt_triple(&entry.rouge_l)));
        doc.push_str(&format!("BERTScore: {}\n", fmt_triple(&entry.bert_score)));
        doc.push_str(&format!("Reflection: {}\n", entry.reflection.trim()));
        doc.push_str(&format!("Suggestion: {}\n", entry.suggestion.trim()));
    }
    doc.push_str("\nReply with the revised prompt text only, no commentary.\n");
    Ok(doc)
}

/// Frequency statistics over a pool of gold summaries: leading sentence
/// n-grams, mean paragraph length, and paragraphs-per-summary distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureStats {
    pub top_leading_ngrams: Vec<(String, usize)>,
    pub mean_paragraph_length_words: f64,
    pub paragraph_count_distribution: BTreeMap<usize, usize>,
}

pub const DEFAULT_NGRAM_LEN: usize = 4;
pub const DEFAULT_TOP_NGRAMS: usize = 20;

fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        if matches!(ch, '.' | '!' | '?') {
            let sentence = text[start..=i].trim();
            if !sentence.is_empty() {
                out.push(sentence);
            }
            start = i + ch.len_utf8();
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn split_paragraphs(text: &str) -> Vec<&str> {
    text.split("\n\n").map(str::trim).filter(|p| !p.is_empty()).collect()
}

/// Compute [`StructureStats`] over the pool's summaries.
pub fn structure_stats(
    pool: &[&ClinicalCase],
    n: usize,
    top: usize,
) -> Result<StructureStats, PromptError> {
    if pool.is_empty() {
        return Err(PromptError::EmptyPool);
    }
    let mut ngram_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut paragraph_words = 0usize;
    let mut paragraph_count = 0usize;
    let mut distribution: BTreeMap<usize, usize> = BTreeMap::new();
    for case in pool {
        let summary = case
            .summary
            .as_deref()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| PromptError::MissingSummary { case_id: case.case_id.clone() })?;
        for sentence in split_sentences(summary) {
            let tokens = tokenize(sentence);
            if tokens.len() >= n {
                *ngram_counts.entry(tokens.tokens()[..n].join(" ")).or_default() += 1;
            }
        }
        let paragraphs = split_paragraphs(summary);
        *distribution.entry(paragraphs.len()).or_default() += 1;
        for p in &paragraphs {
            paragraph_words += p.split_whitespace().count();
            paragraph_count += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = ngram_counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top);
    let mean = if paragraph_count == 0 {
        0.0
    } else {
        paragraph_words as f64 / paragraph_count as f64
    };
    Ok(StructureStats {
        top_leading_ngrams: ranked,
        mean_paragraph_length_words: mean,
        paragraph_count_distribution: distribution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::gateway::{RetryPolicy, TranscriptEntry, TranscriptProvider};
    use std::sync::Arc;

    fn example_case(id: &str, text: &str, summary: &str) -> ClinicalCase {
        ClinicalCase {
            case_id: id.to_string(),
            full_text: text.to_string(),
            summary: Some(summary.to_string()),
            split: Split::GoldTrain,
        }
    }

    fn three_examples() -> Vec<ClinicalCase> {
        vec![
            example_case("e1", "An 82 year old woman was admitted.", "Elderly woman admitted."),
            example_case("e2", "A 7 year old boy had fever.", "Boy with fever."),
            example_case("e3", "A man reported chest pain.", "Man with chest pain."),
        ]
    }

    fn build_default(examples: &[ClinicalCase]) -> Result<String, PromptError> {
        let refs: Vec<&ClinicalCase> = examples.iter().collect();
        build_meta_prompt(
            &default_cot_questions(),
            &PerspectiveSet::default_clinical(),
            DEFAULT_METRIC_NOTE,
            &refs,
        )
    }

    #[test]
    fn default_meta_prompt_names_each_perspective_once() {
        let prompt = build_default(&three_examples()).unwrap();
        for perspective in PerspectiveSet::default_clinical().iter() {
            let count = prompt.matches(&perspective.name).count();
            assert_eq!(count, 1, "'{}' appears {count} times", perspective.name);
        }
        assert!(prompt.contains("Outcome and Follow-up: results of treatment, current status."));
    }

    #[test]
    fn default_meta_prompt_sections_appear_in_order() {
        let prompt = build_default(&three_examples()).unwrap();
        let cot = prompt.find(DEFAULT_COT_QUESTIONS[0]).unwrap();
        let perspectives = prompt.find("Patient Presentation").unwrap();
        let metrics = prompt.find("ROUGE-L").unwrap();
        let examples = prompt.find("=== EXAMPLE 1: FULL TEXT ===").unwrap();
        assert!(cot < perspectives && perspectives < metrics && metrics < examples);
        for q in DEFAULT_COT_QUESTIONS {
            assert!(prompt.contains(q), "missing question: {q}");
        }
    }

    #[test]
    fn meta_prompt_requires_exactly_three_examples() {
        let two = three_examples()[..2].to_vec();
        assert!(matches!(
            build_default(&two),
            Err(PromptError::ExampleCount { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn meta_prompt_rejects_example_without_summary() {
        let mut examples = three_examples();
        examples[1].summary = None;
        assert!(matches!(
            build_default(&examples),
            Err(PromptError::MissingSummary { case_id }) if case_id == "e2"
        ));
    }

    #[test]
    fn meta_prompt_is_deterministic() {
        let a = build_default(&three_examples()).unwrap();
        let b = build_default(&three_examples()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn template_without_placeholder_is_rejected() {
        let err = build_meta_prompt_with_template(
            "{cot_questions} {perspectives} {metric_note}",
            &default_cot_questions(),
            &PerspectiveSet::default_clinical(),
            DEFAULT_METRIC_NOTE,
            &three_examples().iter().collect::<Vec<_>>(),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::MissingPlaceholder { name } if name == "examples"));
    }

    #[test]
    fn duplicate_perspective_names_rejected() {
        let dup = vec![
            Perspective { name: "Diagnosis".into(), guidance: "a".into() },
            Perspective { name: "Diagnosis".into(), guidance: "b".into() },
        ];
        assert!(matches!(
            PerspectiveSet::new(dup),
            Err(PromptError::DuplicatePerspective { .. })
        ));
    }

    #[test]
    fn example_fences_round_trip() {
        let examples = three_examples();
        let prompt = build_default(&examples).unwrap();
        let pairs = parse_example_fences(&prompt);
        assert_eq!(pairs.len(), 3);
        for (case, (text, summary)) in examples.iter().zip(&pairs) {
            assert_eq!(text, &case.full_text);
            assert_eq!(summary, case.summary.as_ref().unwrap());
        }
    }

    #[test]
    fn fences_round_trip_multiline_texts() {
        let examples = vec![
            example_case("e1", "line one\nline two", "sum one\nsum two"),
            example_case("e2", "second text", "second summary"),
            example_case("e3", "third text", "third summary"),
        ];
        let prompt = build_default(&examples).unwrap();
        let pairs = parse_example_fences(&prompt);
        assert_eq!(pairs[0], ("line one\nline two".to_string(), "sum one\nsum two".to_string()));
    }

    fn init_fixture(reply: TranscriptEntry) -> (Gateway, tempfile::TempDir) {
        let transcript = TranscriptProvider::from_entries(vec![reply]).unwrap();
        let gateway = Gateway::builder()
            .bind_all(Arc::new(transcript))
            .retry(RetryPolicy::immediate(1))
            .build();
        (gateway, tempfile::tempdir().unwrap())
    }

    #[test]
    fn init_prompt_stores_version_one() {
        let (gateway, dir) = init_fixture(TranscriptEntry::reply(stage::PROMPT_INIT, "PROMPT-A"));
        let mut store = PromptStore::open(dir.path()).unwrap();
        let version = init_prompt("the meta prompt", &gateway, &mut store).unwrap();
        assert_eq!(version.version_id, 1);
        assert_eq!(version.text, "PROMPT-A");
        assert_eq!(version.created_by_stage, PromptStage::Init);
        assert_eq!(version.parent, None);
    }

    #[test]
    fn init_prompt_refuses_second_initialization() {
        let (gateway, dir) = init_fixture(TranscriptEntry::reply(stage::PROMPT_INIT, "PROMPT-A"));
        let mut store = PromptStore::open(dir.path()).unwrap();
        store.append_init("existing".to_string()).unwrap();
        assert!(matches!(
            init_prompt("meta", &gateway, &mut store),
            Err(PromptError::AlreadyInitialized)
        ));
    }

    #[test]
    fn init_prompt_failure_leaves_store_empty() {
        let (gateway, dir) = init_fixture(TranscriptEntry::fail(stage::PROMPT_INIT, "down"));
        let mut store = PromptStore::open(dir.path()).unwrap();
        assert!(init_prompt("meta", &gateway, &mut store).is_err());
        assert!(store.is_empty());
    }

    fn worst_entry(case_id: &str, reflection: &str) -> WorstCaseEntry {
        WorstCaseEntry {
            case_id: case_id.to_string(),
            reference_summary: "the reference".to_string(),
            generated_summary: "the generated".to_string(),
            rouge_l: Some(MetricTriple::from_pr(0.5, 0.25)),
            bert_score: Some(MetricTriple::from_pr(0.9, 0.8)),
            reflection: reflection.to_string(),
            suggestion: "compress the treatment section".to_string(),
        }
    }

    fn previous_prompt() -> PromptVersion {
        PromptVersion {
            version_id: 1,
            text: "UNIQUE-PREVIOUS-PROMPT-TEXT".to_string(),
            parent: None,
            created_by_stage: PromptStage::Init,
            epoch: None,
            batch_scores: None,
            no_change: false,
        }
    }

    #[test]
    fn refinement_quotes_previous_prompt_exactly_once() {
        let worst: Vec<WorstCaseEntry> =
            (1..=15).map(|i| worst_entry(&format!("c{i:02}"), "too verbose")).collect();
        let doc = build_refinement_instruction(&previous_prompt(), &worst).unwrap();
        assert_eq!(doc.matches("UNIQUE-PREVIOUS-PROMPT-TEXT").count(), 1);
        assert_eq!(doc.matches("--- CASE ").count(), 15);
        assert!(doc.contains("ROUGE-L: p=0.5000, r=0.2500, f1=0.3333"));
        assert!(doc.contains("Reflection: too verbose"));
        assert!(doc.contains("Suggestion: compress the treatment section"));
        assert!(doc.trim_end().ends_with("Reply with the revised prompt text only, no commentary."));
    }

    #[test]
    fn refinement_accepts_a_single_entry() {
        let doc =
            build_refinement_instruction(&previous_prompt(), &[worst_entry("c1", "r")]).unwrap();
        assert!(doc.contains("--- CASE c1 ---"));
    }

    #[test]
    fn refinement_rejects_empty_worst_set() {
        assert!(matches!(
            build_refinement_instruction(&previous_prompt(), &[]),
            Err(PromptError::EmptyWorstSet)
        ));
    }

    #[test]
    fn refinement_rejects_empty_reflection() {
        assert!(matches!(
            build_refinement_instruction(&previous_prompt(), &[worst_entry("c1", "  ")]),
            Err(PromptError::EmptyReflection { case_id }) if case_id == "c1"
        ));
    }

    #[test]
    fn unscorable_cases_render_as_not_scorable() {
        let mut entry = worst_entry("c1", "invalid output");
        entry.rouge_l = None;
        entry.bert_score = None;
        let doc = build_refinement_instruction(&previous_prompt(), &[entry]).unwrap();
        assert!(doc.contains("ROUGE-L: not scorable"));
    }

    #[test]
    fn repeated_leading_phrase_ranks_first() {
        let pool = vec![
            example_case("g1", "t", "The patient presented with fever. Later recovered."),
            example_case("g2", "t", "The patient presented with cough. Treated at home."),
            example_case("g3", "t", "The patient presented with pain. Surgery followed."),
        ];
        let refs: Vec<&ClinicalCase> = pool.iter().collect();
        let stats = structure_stats(&refs, DEFAULT_NGRAM_LEN, DEFAULT_TOP_NGRAMS).unwrap();
        let (top_ngram, count) = &stats.top_leading_ngrams[0];
        assert_eq!(top_ngram, "the patient presented with");
        assert!(*count >= 3);
    }

    #[test]
    fn single_paragraph_mean_length_is_word_count() {
        let words = vec!["word"; 100].join(" ");
        let pool = vec![example_case("g1", "t", &words)];
        let refs: Vec<&ClinicalCase> = pool.iter().collect();
        let stats = structure_stats(&refs, 4, 20).unwrap();
        assert!((stats.mean_paragraph_length_words - 100.0).abs() < 1e-12);
        assert_eq!(stats.paragraph_count_distribution.get(&1), Some(&1));
    }

    #[test]
    fn top_list_is_capped_and_ordered() {
        let mut pool = Vec::new();
        for i in 0..30 {
            let summary = format!("unique start number {i} appears once here.");
            pool.push(example_case(&format!("g{i}"), "t", &summary));
        }
        pool.push(example_case("gx", "t", "a common lead sentence here. a common lead sentence again."));
        let refs: Vec<&ClinicalCase> = pool.iter().collect();
        let stats = structure_stats(&refs, 4, 20).unwrap();
        assert!(stats.top_leading_ngrams.len() <= 20);
        assert_eq!(stats.top_leading_ngrams[0].0, "a common lead sentence");
        assert_eq!(stats.top_leading_ngrams[0].1, 2);
        for pair in stats.top_leading_ngrams.windows(2) {
            assert!(
                pair[0].1 > pair[1].1 || (pair[0].1 == pair[1].1 && pair[0].0 < pair[1].0),
                "ordering violated: {pair:?}"
            );
        }
    }

    #[test]
    fn paragraph_distribution_counts_summaries() {
        let pool = vec![
            example_case("g1", "t", "one paragraph only."),
            example_case("g2", "t", "first paragraph.\n\nsecond paragraph."),
            example_case("g3", "t", "first.\n\nsecond."),
        ];
        let refs: Vec<&ClinicalCase> = pool.iter().collect();
        let stats = structure_stats(&refs, 2, 20).unwrap();
        assert_eq!(stats.paragraph_count_distribution.get(&1), Some(&1));
        assert_eq!(stats.paragraph_count_distribution.get(&2), Some(&2));
    }

    #[test]
    fn empty_pool_is_an_error() {
        assert!(matches!(structure_stats(&[], 4, 20), Err(PromptError::EmptyPool)));
    }
}
