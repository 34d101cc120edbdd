//! Score candidate summaries against references with ROUGE-L and greedy
//! BERTScore, then aggregate the batch.
//!
//! Uses the deterministic hash embedder, so the numbers are stable across
//! runs and machines. An empty candidate shows the invalid-case path: it is
//! excluded from the means but counted.

use pa_isp::gateway::HashEmbedder;
use pa_isp::metrics::{aggregate, score_case, MetricTriple};

const PAIRS: [(&str, &str, &str); 4] = [
    (
        "c001",
        "The patient was treated with antibiotics and recovered fully.",
        "After antibiotic treatment the patient recovered fully.",
    ),
    (
        "c002",
        "Imaging confirmed a fracture; surgery was scheduled.",
        "A fracture was confirmed by imaging and repaired surgically.",
    ),
    (
        "c003",
        "Completely unrelated text about the weather.",
        "The biopsy established the diagnosis of sarcoidosis.",
    ),
    ("c004", "   ", "A reference whose candidate produced no output."),
];

fn fmt(t: &MetricTriple) -> String {
    format!("P {:.4}  R {:.4}  F1 {:.4}", t.precision, t.recall, t.f1)
}

fn main() -> anyhow::Result<()> {
    let embedder = HashEmbedder::new(42, 64);

    let mut scores = Vec::new();
    for (id, candidate, reference) in PAIRS {
        let score = score_case(id, candidate, reference, &embedder);
        match (&score.rouge_l, &score.bert_score) {
            (Some(rouge), Some(bert)) => {
                println!("{id}  rouge_l    {}", fmt(rouge));
                println!("      bert_score {}", fmt(bert));
            }
            _ => println!("{id}  invalid (blank candidate)"),
        }
        scores.push(score);
    }

    let agg = aggregate(&scores)?;
    println!("\naggregate over {} valid cases ({} invalid):", agg.n_valid, agg.n_invalid);
    println!("  rouge_l    {}", fmt(&agg.rouge_l));
    println!("  bert_score {}", fmt(&agg.bert_score));
    Ok(())
}
