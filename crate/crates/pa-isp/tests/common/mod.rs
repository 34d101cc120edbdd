//! Oracles and fixture builders shared by the integration suites.
//!
//! The oracles are deliberately naive re-implementations, written before and
//! independently of the library's algorithms: LCS by subsequence
//! enumeration, BERTScore from an explicit similarity matrix, and retrieval
//! by a full sort over all candidates.

// Each integration target uses a different subset of these helpers.
#![allow(dead_code)]

use pa_isp::corpus::{ClinicalCase, Split};
use pa_isp::gateway::{EmbeddingProvider, TranscriptEntry};

/// True when `needle` is a (not necessarily contiguous) subsequence of `hay`.
pub fn is_subsequence(needle: &[String], hay: &[String]) -> bool {
    let mut rest = hay.iter();
    needle.iter().all(|n| rest.any(|h| h == n))
}

/// Longest common subsequence length by enumerating every subsequence of the
/// shorter side. Tractable only for short sequences; the acceptance pairs
/// stay at eight tokens or fewer.
pub fn lcs_brute(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "oracle is exponential in the shorter side");
    let mut best = 0;
    for mask in 0u32..(1u32 << short.len()) {
        if (mask.count_ones() as usize) <= best {
            continue;
        }
        let sub: Vec<String> = short
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, w)| w.clone())
            .collect();
        if is_subsequence(&sub, long) {
            best = sub.len();
        }
    }
    best
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// ROUGE-L (precision, recall, F1) from the brute-force LCS.
pub fn rouge_oracle(cand: &[String], reference: &[String]) -> (f64, f64, f64) {
    let lcs = lcs_brute(cand, reference) as f64;
    let p = if cand.is_empty() { 0.0 } else { lcs / cand.len() as f64 };
    let r = if reference.is_empty() { 0.0 } else { lcs / reference.len() as f64 };
    (p, r, f1_of(p, r))
}

/// Cosine similarity accumulated in f64 over f32 components.
pub fn cosine_oracle(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| (*y as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// BERTScore (precision, recall, F1) from the explicit token similarity
/// matrix: precision averages row maxima, recall averages column maxima,
/// negative maxima clamp to zero.
pub fn bert_oracle(
    cand: &[String],
    reference: &[String],
    embedder: &dyn EmbeddingProvider,
) -> (f64, f64, f64) {
    let cv = embedder.embed(cand).expect("oracle embeds candidate");
    let rv = embedder.embed(reference).expect("oracle embeds reference");
    let matrix: Vec<Vec<f64>> = cv
        .iter()
        .map(|c| rv.iter().map(|r| cosine_oracle(&c.values, &r.values)).collect())
        .collect();
    let row_max = |row: &Vec<f64>| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let col_max = |j: usize| {
        matrix.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max).max(0.0)
    };
    let p = matrix.iter().map(row_max).sum::<f64>() / cv.len() as f64;
    let r = (0..rv.len()).map(col_max).sum::<f64>() / rv.len() as f64;
    (p, r, f1_of(p, r))
}

/// All candidates ranked by cosine against the query, descending, ties by
/// ascending id, with the query's own id excluded.
pub fn exhaustive_rank(
    query: &[f32],
    rows: &[(String, Vec<f32>)],
    exclude: &str,
) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = rows
        .iter()
        .filter(|(id, _)| id != exclude)
        .map(|(id, row)| (id.clone(), cosine_oracle(query, row)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

pub const VOCAB: [&str; 12] = [
    "the", "cat", "sat", "on", "mat", "dog", "ran", "fast", "slow", "big", "red", "sun",
];

/// One gold training case with a reference summary shorter than its text.
pub fn gold_case(i: usize) -> ClinicalCase {
    ClinicalCase {
        case_id: format!("g{i:03}"),
        full_text: format!(
            "Patient {i} presented with symptom {} and sign {}. Investigations pointed to \
             condition {}. Treatment {} was administered over several days. The patient \
             recovered and was discharged with follow-up.",
            i % 7,
            i % 5,
            i % 4,
            i % 3
        ),
        summary: Some(format!(
            "Patient {i} had symptom {}; condition {} treated with therapy {}; recovered.",
            i % 7,
            i % 4,
            i % 3
        )),
        split: Split::GoldTrain,
    }
}

pub fn synthetic_gold(n: usize) -> Vec<ClinicalCase> {
    (1..=n).map(gold_case).collect()
}

pub fn large_train_case(i: usize) -> ClinicalCase {
    ClinicalCase {
        case_id: format!("l{i:03}"),
        full_text: format!(
            "Report {i}: a patient with recurring issue {} underwent procedure {} and was \
             monitored until stable.",
            i % 6,
            i % 4
        ),
        summary: Some(format!("Issue {} resolved by procedure {}.", i % 6, i % 4)),
        split: Split::LargeTrain,
    }
}

pub fn test_case(i: usize) -> ClinicalCase {
    ClinicalCase {
        case_id: format!("t{i:03}"),
        full_text: format!(
            "Admission note {i}: the patient reported complaint {} of two weeks duration. \
             Examination and imaging suggested diagnosis {}. A course of treatment {} was \
             started and the response was monitored closely.",
            i % 8,
            i % 5,
            i % 3
        ),
        summary: None,
        split: Split::Test,
    }
}

/// Scripted entries for `epochs` refinement epochs over `batch` (in batch
/// order): echoed reference summaries, `worst_k` parseable reflections, and
/// one refine reply per epoch. `invalid_in_first` empties that position's
/// reply in epoch 1 only.
pub fn isp_epoch_entries(
    batch: &[&ClinicalCase],
    epochs: u32,
    worst_k: usize,
    invalid_in_first: Option<usize>,
) -> Vec<TranscriptEntry> {
    use pa_isp::gateway::stage;
    let mut entries = Vec::new();
    for epoch in 1..=epochs {
        for (i, case) in batch.iter().enumerate() {
            let echo = case.summary.clone().expect("batch cases carry summaries");
            let reply =
                if epoch == 1 && invalid_in_first == Some(i) { String::new() } else { echo };
            entries.push(TranscriptEntry::reply(stage::SUMMARIZE, reply));
        }
        for i in 0..worst_k {
            entries.push(TranscriptEntry::reply(
                stage::REFLECT,
                format!(
                    "The summary skips the outcome for worst case {i}. \
                     SUGGESTION: always state treatment result."
                ),
            ));
        }
        entries.push(TranscriptEntry::reply(
            stage::REFINE,
            format!("PROMPT v{} TEXT: summarize across all five perspectives.", epoch + 1),
        ));
    }
    entries
}
