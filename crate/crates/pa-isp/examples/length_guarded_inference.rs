//! Test-set inference under the length guard: a summary is accepted only if
//! it is strictly shorter than the input, with up to five attempts per case
//! and the full text as the final fallback.
//!
//! The scripted model behaves differently per case: t001 needs two attempts,
//! t002 succeeds at once, and t003 never produces a short output. Re-running
//! afterwards resumes from `records.jsonl` without any new model calls.

use std::sync::Arc;

use pa_isp::corpus::{ClinicalCase, Split};
use pa_isp::gateway::{stage, Gateway, RetryPolicy, TranscriptEntry, TranscriptProvider};
use pa_isp::inference::infer_all;
use pa_isp::prompting::PromptStore;

fn test_case(i: usize) -> ClinicalCase {
    ClinicalCase {
        case_id: format!("t{i:03}"),
        full_text: format!(
            "Case report {i}. A patient presented with several weeks of \
             progressive symptoms. The examination findings, laboratory \
             results, and imaging together established the diagnosis, and a \
             staged treatment plan was carried out with regular follow-up \
             until the condition resolved."
        ),
        summary: None,
        split: Split::Test,
    }
}

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let cases: Vec<ClinicalCase> = (1..=3).map(test_case).collect();
    let too_long = |case: &ClinicalCase| format!("{0} {0}", case.full_text);

    let mut entries = vec![
        TranscriptEntry::reply(stage::SUMMARIZE, too_long(&cases[0])),
        TranscriptEntry::reply(stage::SUMMARIZE, "Summary 1: diagnosed and treated."),
        TranscriptEntry::reply(stage::SUMMARIZE, "Summary 2: resolved after treatment."),
    ];
    entries.extend(std::iter::repeat_with(|| {
        TranscriptEntry::reply(stage::SUMMARIZE, too_long(&cases[2]))
    })
    .take(5));
    let gateway = Gateway::builder()
        .bind_all(Arc::new(TranscriptProvider::from_entries(entries)?))
        .retry(RetryPolicy::immediate(1))
        .build();

    let mut store = PromptStore::open(&dir.path().join("prompts"))?;
    let prompt = store.append_init("Summarize the case in two sentences.".to_string())?.clone();

    let testset: Vec<&ClinicalCase> = cases.iter().collect();
    let out_dir = dir.path().join("predictions");
    let stats = infer_all(&testset, &prompt, &gateway, None, &out_dir)?;
    println!(
        "inferred {} cases: {} fallback, {} regenerated",
        stats.n_cases, stats.n_fallback, stats.n_regenerated
    );
    println!(
        "mean input words {:.1}, mean output words {:.1}\n",
        stats.mean_input_words, stats.mean_output_words
    );

    let records = std::fs::read_to_string(out_dir.join("records.jsonl"))?;
    for line in records.lines() {
        let record: serde_json::Value = serde_json::from_str(line)?;
        println!(
            "  {}  attempts {}  outcome {}  {} -> {} chars",
            record["case_id"].as_str().unwrap_or("?"),
            record["attempts"],
            record["outcome"].as_str().unwrap_or("?"),
            record["char_len_input"],
            record["char_len_output"],
        );
    }

    let resumed = infer_all(&testset, &prompt, &gateway, None, &out_dir)?;
    println!(
        "\nre-run resumed {} finished cases; the exhausted transcript proves \
         no request was re-sent",
        resumed.n_cases
    );
    Ok(())
}
