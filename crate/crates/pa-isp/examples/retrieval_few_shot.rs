//! Build a vector index over summarized training cases, retrieve the nearest
//! neighbors for a new case, and assemble the few-shot inference input.
//!
//! The corpus has three topic clusters (cardiac, renal, neurological). The
//! query describes chest pain, so the cardiac cases surface first.

use pa_isp::corpus::{ClinicalCase, Corpus, Split};
use pa_isp::gateway::HashEmbedder;
use pa_isp::retrieval::{augment_few_shot, build_index, retrieve};

const TOPICS: [(&str, &str); 3] = [
    (
        "cardiac",
        "chest pain radiating to the left arm with elevated troponin and ST segment changes",
    ),
    ("renal", "flank pain with hematuria, rising creatinine, and reduced urine output"),
    ("neuro", "sudden unilateral weakness with slurred speech and facial droop"),
];

fn train_cases() -> Vec<ClinicalCase> {
    let mut cases = Vec::new();
    for (topic, features) in TOPICS {
        for i in 1..=3 {
            let case_id = format!("{}{}", &topic[..1], i);
            cases.push(ClinicalCase {
                case_id,
                full_text: format!(
                    "Case {i}: patient admitted with {features}; workup and \
                     management followed the {topic} protocol."
                ),
                summary: Some(format!(
                    "{topic} case {i}: presented with {features}, treated per \
                     protocol, discharged stable."
                )),
                split: Split::LargeTrain,
            });
        }
    }
    cases
}

fn main() -> anyhow::Result<()> {
    let corpus = Corpus::from_cases(train_cases())?;
    let embedder = HashEmbedder::new(42, 128);
    let cases: Vec<&ClinicalCase> = corpus.cases().iter().collect();
    let index = build_index(&cases, &embedder)?;
    println!("indexed {} cases at dim {}", index.len(), index.dim());

    let query_text = "A patient reports crushing chest pain radiating to the \
                      left arm; troponin is elevated and the ECG shows ST \
                      segment changes.";
    let hits = retrieve("t001", query_text, &index, &embedder, 3)?;
    println!("\ntop {} neighbors for the chest-pain query:", hits.hits.len());
    for hit in &hits.hits {
        println!("  {}  cosine {:.4}", hit.case_id, hit.similarity);
    }

    let prompt = augment_few_shot("", &hits, &corpus, query_text);
    println!("\nassembled inference input ({} chars):", prompt.chars().count());
    for line in prompt.lines().filter(|l| l.starts_with("===")) {
        println!("  {line}");
    }
    Ok(())
}
