//! Ingest a JSONL case manifest and carve the gold split into the three
//! refinement buckets: few-shot seeds, the scoring batch, and the held-back
//! structure pool.
//!
//! The manifest is generated on the fly in a temp directory and includes a
//! large_train case with a whitespace-only summary to show the ingest-time
//! flagging (in the gold split the same defect is a hard error).

use pa_isp::corpus::{ingest, partition_gold, write_manifest, ClinicalCase, Corpus, Split};

fn gold(i: usize) -> ClinicalCase {
    ClinicalCase {
        case_id: format!("g{i:03}"),
        full_text: format!(
            "Case report {i}. A patient presented with progressive symptoms; \
             examination and laboratory workup established the diagnosis, and \
             treatment was started with close follow-up."
        ),
        summary: Some(format!("Patient {i} was diagnosed, treated, and recovered.")),
        split: Split::GoldTrain,
    }
}

fn large(i: usize, summary: &str) -> ClinicalCase {
    ClinicalCase {
        case_id: format!("l{i:03}"),
        full_text: format!("Extended case narrative {i} from the large training pool."),
        summary: Some(summary.to_string()),
        split: Split::LargeTrain,
    }
}

fn test(i: usize) -> ClinicalCase {
    ClinicalCase {
        case_id: format!("t{i:03}"),
        full_text: format!("Unlabeled case report {i} awaiting summarization."),
        summary: None,
        split: Split::Test,
    }
}

fn bucket_line(name: &str, ids: &[String]) {
    println!(
        "  {name:<15} {:>3} cases  ({} .. {})",
        ids.len(),
        ids.first().map(String::as_str).unwrap_or("-"),
        ids.last().map(String::as_str).unwrap_or("-"),
    );
}

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let manifest = dir.path().join("manifest.jsonl");

    let mut cases: Vec<ClinicalCase> = (1..=60).map(gold).collect();
    cases.push(large(1, "Summarized narrative of case 1."));
    cases.push(large(2, "   "));
    cases.extend((1..=2).map(test));
    write_manifest(&Corpus::from_cases(cases)?, &manifest)?;

    let corpus = ingest(&manifest)?;
    let counts = corpus.split_counts();
    println!(
        "ingested {} cases: gold_train {}, large_train {}, test {}",
        corpus.len(),
        counts.gold_train,
        counts.large_train,
        counts.test
    );
    for id in corpus.flagged_whitespace_summaries() {
        println!("  flagged whitespace-only summary: {id}");
    }

    let partition = partition_gold(&corpus)?;
    println!("\ngold partition (ordered by {}):", partition.ordering_key);
    bucket_line("few_shot_seed", &partition.few_shot_seed);
    bucket_line("refine_batch", &partition.refine_batch);
    bucket_line("structure_pool", &partition.structure_pool);

    let out = dir.path().join("partition.json");
    partition.save(&out)?;
    println!("\nsaved partition to {}", out.display());
    Ok(())
}
