//! Run the full iterative self-prompting loop offline against a scripted
//! transcript.
//!
//! The transcript plays a model whose summaries improve every epoch: epoch 1
//! returns roughly half of each reference summary, epoch 4 returns all of
//! it. The per-epoch aggregates rise accordingly and the best-version rule
//! picks the final prompt.

use std::sync::Arc;

use pa_isp::corpus::{partition_gold, ClinicalCase, Corpus, Split};
use pa_isp::engine::{run, select_best, RunConfig};
use pa_isp::gateway::{stage, Gateway, HashEmbedder, RetryPolicy, TranscriptEntry, TranscriptProvider};
use pa_isp::prompting::{
    build_meta_prompt, default_cot_questions, init_prompt, PerspectiveSet, PromptStore,
    DEFAULT_METRIC_NOTE,
};

const EPOCHS: u32 = 4;
const WORST_K: usize = 5;

fn gold(i: usize) -> ClinicalCase {
    ClinicalCase {
        case_id: format!("g{i:03}"),
        full_text: format!(
            "Case report {i}. A patient presented with fever and malaise; \
             cultures identified the pathogen, targeted antibiotics were \
             given, and the patient was discharged after full recovery."
        ),
        summary: Some(format!(
            "Patient {i} presented with fever, was diagnosed with a bacterial \
             infection, received targeted antibiotics, and recovered fully."
        )),
        split: Split::GoldTrain,
    }
}

fn word_prefix(text: &str, fraction: f64) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let keep = ((words.len() as f64 * fraction).ceil() as usize).clamp(1, words.len());
    words[..keep].join(" ")
}

fn scripted_epochs(batch: &[&ClinicalCase]) -> Vec<TranscriptEntry> {
    let mut entries = Vec::new();
    for epoch in 1..=EPOCHS {
        let fraction = 0.40 + 0.15 * f64::from(epoch);
        for case in batch {
            let reference = case.summary.as_deref().expect("gold cases carry summaries");
            entries.push(TranscriptEntry::reply(
                stage::SUMMARIZE,
                word_prefix(reference, fraction),
            ));
        }
        for _ in 0..WORST_K {
            entries.push(TranscriptEntry::reply(
                stage::REFLECT,
                "The generated summary stops before the outcome. \
                 SUGGESTION: require an explicit outcome sentence.",
            ));
        }
        entries.push(TranscriptEntry::reply(
            stage::REFINE,
            format!(
                "PROMPT v{} TEXT: Summarize the case and always close with the \
                 treatment outcome.",
                epoch + 1
            ),
        ));
    }
    entries
}

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let corpus = Corpus::from_cases((1..=60).map(gold).collect())?;
    let partition = partition_gold(&corpus)?;
    let batch: Vec<&ClinicalCase> =
        partition.refine_batch.iter().map(|id| corpus.get(id).expect("batch id")).collect();

    let mut entries = vec![TranscriptEntry::reply(
        stage::PROMPT_INIT,
        "PROMPT v1 TEXT: Summarize the case covering presentation, diagnosis, \
         treatment, and outcome.",
    )];
    entries.extend(scripted_epochs(&batch));
    let gateway = Gateway::builder()
        .bind_all(Arc::new(TranscriptProvider::from_entries(entries)?))
        .retry(RetryPolicy::immediate(1))
        .build();
    let embedder = HashEmbedder::new(42, 48);

    let seeds: Vec<&ClinicalCase> =
        partition.few_shot_seed.iter().map(|id| corpus.get(id).expect("seed id")).collect();
    let meta = build_meta_prompt(
        &default_cot_questions(),
        &PerspectiveSet::default_clinical(),
        DEFAULT_METRIC_NOTE,
        &seeds,
    )?;
    println!("meta-prompt: {} chars, {} fenced examples", meta.chars().count(), seeds.len());

    let mut store = PromptStore::open(&dir.path().join("prompts"))?;
    let v1 = init_prompt(&meta, &gateway, &mut store)?;
    println!("initialized prompt v{}\n", v1.version_id);

    let config = RunConfig {
        epochs: EPOCHS,
        worst_k: WORST_K,
        plateau_delta: 0.0,
        reflect_asks: 1,
        ..RunConfig::default()
    };
    let run_dir = dir.path().join("run");
    let logs = run(&config, &partition, &corpus, &gateway, &embedder, &mut store, &run_dir)?;

    println!("epoch  prompt  rouge_l_f1  bert_f1  invalid  worst of batch");
    for log in &logs {
        println!(
            "{:>5}  v{:<5}  {:>10.4}  {:>7.4}  {:>7}  {}",
            log.epoch,
            log.prompt_version,
            log.aggregate.rouge_l.f1,
            log.aggregate.bert_score.f1,
            log.n_invalid,
            log.worst_k_ids[..2].join(", "),
        );
    }

    let best = select_best(&logs)?;
    let best_prompt = store.get(best).expect("best version exists");
    println!("\nbest prompt: v{best}");
    println!("  {}", best_prompt.text.lines().next().unwrap_or(""));
    println!("store holds v1..v{}; epoch logs in {}", store.len(), run_dir.display());
    Ok(())
}
