//! Aggregate a batch of case scores into the report bundle and render the
//! four artifacts: JSON, CSV table, score bar chart, and F1 histograms.
//!
//! The scores are synthesized with a seeded generator, so the report is
//! identical on every run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pa_isp::metrics::{CaseScore, MetricTriple};
use pa_isp::report::{build_report, render};

fn triple(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> MetricTriple {
    let precision = rng.gen_range(lo..hi);
    let recall = rng.gen_range(lo..hi);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    MetricTriple { precision, recall, f1 }
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut scores: Vec<CaseScore> = (0..48)
        .map(|i| {
            let rouge = triple(&mut rng, 0.15, 0.55);
            let bert = triple(&mut rng, 0.75, 0.95);
            CaseScore::valid(format!("c{i:03}"), rouge, bert)
        })
        .collect();
    scores.push(CaseScore::invalid("c048"));
    scores.push(CaseScore::invalid("c049"));

    let bundle = build_report(&scores)?;
    println!(
        "report over {} cases: {} valid, {} invalid",
        bundle.n_cases, bundle.n_valid, bundle.n_invalid
    );
    println!(
        "  rouge_l    F1 {:.4}\n  bert_score F1 {:.4}",
        bundle.metric_table.rouge_l.f1, bundle.metric_table.bert_score.f1
    );
    println!(
        "  tails: {} BERTScore F1 in [0.8, 0.9), {} ROUGE-L F1 below 0.2",
        bundle.tail_counts.bert_f1_in_08_09, bundle.tail_counts.rouge_f1_below_02
    );

    let dir = tempfile::tempdir()?;
    let written = render(&bundle, dir.path())?;
    println!("\nwrote {} artifacts:", written.len());
    for path in &written {
        println!("  {}", path.display());
    }

    println!("\ntable.csv:");
    for line in std::fs::read_to_string(dir.path().join("table.csv"))?.lines() {
        println!("  {line}");
    }
    Ok(())
}
