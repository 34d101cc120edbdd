//! Pipeline stages as subcommands. Exit codes: 0 success, 1 stage failure,
//! 2 usage or config error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::corpus::{ingest, partition_gold, ClinicalCase, Corpus, CorpusError, Split};
use crate::engine::{self, EngineError, RunConfig};
use crate::gateway::{Gateway, GatewayError, HashEmbedder};
use crate::inference::{infer_all, InferenceError, RetrievalContext};
use crate::metrics::{aggregate, score_case, CaseScore, MetricsError};
use crate::prompting::{
    build_meta_prompt, default_cot_questions, init_prompt, PerspectiveSet, PromptError,
    DEFAULT_METRIC_NOTE,
};
use crate::prompting::{PromptStore, StoreError};
use crate::report::{build_report, render, ReportError};
use crate::retrieval::{build_index, RetrievalError, VectorIndex};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Stage(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "pa-isp",
    version,
    about = "Perspective-aware iterative self-prompting for clinical summarization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
enum OnOff {
    #[default]
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and load the case manifest, printing split counts.
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Split the gold cases into seed, refine, and structure buckets.
    Partition {
        #[arg(long)]
        config: PathBuf,
        /// Output path; defaults to <runs>/partition.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the meta-prompt from the seed examples and store prompt v1.
    InitPrompt {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run refinement epochs over the refine batch, storing new versions.
    Refine {
        #[arg(long)]
        config: PathBuf,
        /// Override run.epochs from the config.
        #[arg(long)]
        epochs: Option<u32>,
    },
    /// Embed every training case with a summary into the vector index.
    BuildIndex {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate length-guarded summaries for the test split.
    Infer {
        #[arg(long)]
        config: PathBuf,
        /// Prompt version to use; defaults to the newest stored version.
        #[arg(long, value_name = "N")]
        prompt_version: Option<u32>,
        /// Alternative manifest whose test split replaces the configured one.
        #[arg(long)]
        testset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OnOff::On)]
        retrieval: OnOff,
        /// Override run.concurrency from the config.
        #[arg(long, value_name = "C")]
        concurrency: Option<usize>,
    },
    /// Score predictions against same-named reference files.
    Evaluate {
        /// Directory of <case_id>.txt predictions.
        #[arg(long)]
        predictions: PathBuf,
        /// Directory of <case_id>.txt reference summaries.
        #[arg(long)]
        references: PathBuf,
        /// Scores JSONL path; defaults to <predictions>/scores.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional config supplying the embedding provider; without it a
        /// seeded hash embedder (seed 42, dim 256) scores BERTScore.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render report artifacts from a scores JSONL file.
    Report {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `argv` and run one subcommand, returning the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { config } => cmd_ingest(&config),
        Command::Partition { config, out } => cmd_partition(&config, out),
        Command::InitPrompt { config } => cmd_init_prompt(&config),
        Command::Refine { config, epochs } => cmd_refine(&config, epochs),
        Command::BuildIndex { config } => cmd_build_index(&config),
        Command::Infer { config, prompt_version, testset, retrieval, concurrency } => {
            cmd_infer(&config, prompt_version, testset, retrieval, concurrency)
        }
        Command::Evaluate { predictions, references, out, config } => {
            cmd_evaluate(&predictions, &references, out, config)
        }
        Command::Report { scores, out } => cmd_report(&scores, &out),
    }
}

fn cmd_ingest(config_path: &Path) -> Result<(), CliError> {
    let config = PipelineConfig::load(config_path)?;
    let corpus = ingest(&config.paths.manifest)?;
    let counts = corpus.split_counts();
    let flagged = corpus.flagged_whitespace_summaries().len();
    println!(
        "ingested {} cases: gold_train {}, large_train {}, test {} ({} flagged blank summaries)",
        corpus.len(),
        counts.gold_train,
        counts.large_train,
        counts.test,
        flagged
    );
    Ok(())
}

fn cmd_partition(config_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let config = PipelineConfig::load(config_path)?;
    let corpus = ingest(&config.paths.manifest)?;
    let partition = partition_gold(&corpus)?;
    let out = out.unwrap_or_else(|| config.paths.runs.join("partition.json"));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Stage(format!("cannot create '{}': {e}", parent.display())))?;
    }
    partition.save(&out)?;
    println!(
        "partitioned {} gold cases: few_shot_seed {}, refine_batch {}, structure_pool {}",
        partition.few_shot_seed.len()
            + partition.refine_batch.len()
            + partition.structure_pool.len(),
        partition.few_shot_seed.len(),
        partition.refine_batch.len(),
        partition.structure_pool.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn seed_examples<'a>(
    corpus: &'a Corpus,
    ids: &[String],
) -> Result<Vec<&'a ClinicalCase>, CliError> {
    ids.iter()
        .map(|id| {
            corpus
                .get(id)
                .ok_or_else(|| CliError::Stage(format!("seed case '{id}' not in corpus")))
        })
        .collect()
}

fn auto_init(
    corpus: &Corpus,
    seed_ids: &[String],
    gateway: &Gateway,
    store: &mut PromptStore,
) -> Result<u32, CliError> {
    let examples = seed_examples(corpus, seed_ids)?;
    let meta = build_meta_prompt(
        &default_cot_questions(),
        &PerspectiveSet::default_clinical(),
        DEFAULT_METRIC_NOTE,
        &examples,
    )?;
    Ok(init_prompt(&meta, gateway, store)?.version_id)
}

fn cmd_init_prompt(config_path: &Path) -> Result<(), CliError> {
    let config = PipelineConfig::load(config_path)?;
    let corpus = ingest(&config.paths.manifest)?;
    let partition = partition_gold(&corpus)?;
    let gateway = config.build_gateway()?;
    let mut store = PromptStore::open(&config.paths.prompts)?;
    let version = auto_init(&corpus, &partition.few_shot_seed, &gateway, &mut store)?;
    println!("stored prompt v{version} in {}", config.paths.prompts.display());
    Ok(())
}

fn cmd_refine(config_path: &Path, epochs: Option<u32>) -> Result<(), CliError> {
    let config = PipelineConfig::load(config_path)?;
    let corpus = ingest(&config.paths.manifest)?;
    let partition = partition_gold(&corpus)?;
    let gateway = config.build_gateway()?;
    let mut store = PromptStore::open(&config.paths.prompts)?;
    if store.is_empty() {
        log::info!("prompt store is empty, initializing v1 first");
        auto_init(&corpus, &partition.few_shot_seed, &gateway, &mut store)?;
    }
    let run_config = RunConfig {
        epochs: epochs.unwrap_or(config.run.epochs),
        worst_k: config.run.worst_k,
        plateau_delta: config.run.plateau_delta,
        ..RunConfig::default()
    };
    let embedder = gateway.embedder()?;
    let run_dir = config.paths.runs.join("isp");
    let logs =
        engine::run(&run_config, &partition, &corpus, &gateway, &*embedder, &mut store, &run_dir)?;
    let best = engine::select_best(&logs)?;
    let last = logs.last().expect("run returns at least one epoch");
    println!(
        "completed {} epochs (prompt v1..v{}); best prompt v{best}",
        logs.len(),
        last.prompt_version + 1
    );
    println!("epoch logs in {}", run_dir.display());
    Ok(())
}

fn cmd_build_index(config_path: &Path) -> Result<(), CliError> {
    let config = PipelineConfig::load(config_path)?;
    let corpus = ingest(&config.paths.manifest)?;
    let mut sources: Vec<&ClinicalCase> = corpus
        .cases()
        .iter()
        .filter(|c| {
            c.split != Split::Test
                && c.summary.as_deref().map_or(false, |s| !s.trim().is_empty())
        })
        .collect();
    sources.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    if sources.is_empty() {
        return Err(CliError::Stage("no summarized training cases to index".into()));
    }
    let gateway = config.build_gateway()?;
    let embedder = gateway.embedder()?;
    let index = build_index(&sources, &*embedder)?;
    index.save(&config.paths.index)?;
    println!(
        "indexed {} cases (dim {}) into {}",
        index.len(),
        index.dim(),
        config.paths.index.display()
    );
    Ok(())
}

fn cmd_infer(
    config_path: &Path,
    prompt_version: Option<u32>,
    testset: Option<PathBuf>,
    retrieval: OnOff,
    concurrency: Option<usize>,
) -> Result<(), CliError> {
    let mut config = PipelineConfig::load(config_path)?;
    if let Some(c) = concurrency {
        if c == 0 {
            return Err(ConfigError::Invalid("--concurrency must be positive".into()).into());
        }
        config.run.concurrency = c;
    }
    let corpus = ingest(&config.paths.manifest)?;
    let test_corpus = match &testset {
        Some(path) => Some(ingest(path)?),
        None => None,
    };
    let mut cases: Vec<&ClinicalCase> = test_corpus
        .as_ref()
        .unwrap_or(&corpus)
        .cases_in_split(Split::Test)
        .collect();
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let gateway = config.build_gateway()?;
    let store = PromptStore::open(&config.paths.prompts)?;
    let prompt = match prompt_version {
        Some(v) => store.get(v)?.clone(),
        None => store
            .latest()
            .ok_or_else(|| {
                CliError::Stage("prompt store is empty; run init-prompt first".into())
            })?
            .clone(),
    };
    let embedder = gateway.embedder()?;
    let index;
    let context = match retrieval {
        OnOff::Off => None,
        OnOff::On => {
            index = VectorIndex::load(&config.paths.index)?;
            Some(RetrievalContext {
                index: &index,
                embedder: &*embedder,
                corpus: &corpus,
                k: config.run.k_retrieval,
            })
        }
    };
    let stats =
        infer_all(&cases, &prompt, &gateway, context.as_ref(), &config.paths.predictions)?;
    println!(
        "inferred {} cases with prompt v{}: {} fallback, {} regenerated",
        stats.n_cases, prompt.version_id, stats.n_fallback, stats.n_regenerated
    );
    println!(
        "mean input words {:.1}, mean output words {:.1}; predictions in {}",
        stats.mean_input_words,
        stats.mean_output_words,
        config.paths.predictions.display()
    );
    Ok(())
}

fn cmd_evaluate(
    predictions: &Path,
    references: &Path,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
) -> Result<(), CliError> {
    for (label, dir) in [("predictions", predictions), ("references", references)] {
        if !dir.is_dir() {
            return Err(CliError::Stage(format!(
                "{label} directory '{}' does not exist",
                dir.display()
            )));
        }
    }
    let embedder: std::sync::Arc<dyn crate::gateway::EmbeddingProvider> = match config {
        Some(path) => PipelineConfig::load(&path)?.build_gateway()?.embedder()?,
        None => std::sync::Arc::new(HashEmbedder::new(42, 256)),
    };
    let mut ids: Vec<String> = std::fs::read_dir(predictions)
        .map_err(|e| CliError::Stage(format!("cannot list '{}': {e}", predictions.display())))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            if path.extension().map_or(false, |ext| ext == "txt") {
                Some(path.file_stem()?.to_string_lossy().into_owned())
            } else {
                None
            }
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(CliError::Stage(format!(
            "no .txt predictions in '{}'",
            predictions.display()
        )));
    }
    let mut scores = Vec::with_capacity(ids.len());
    for id in &ids {
        let pred_path = predictions.join(format!("{id}.txt"));
        let ref_path = references.join(format!("{id}.txt"));
        if !ref_path.is_file() {
            return Err(CliError::Stage(format!(
                "reference '{}' missing for prediction '{id}'",
                ref_path.display()
            )));
        }
        let read = |p: &Path| {
            std::fs::read_to_string(p)
                .map_err(|e| CliError::Stage(format!("cannot read '{}': {e}", p.display())))
        };
        scores.push(score_case(id, &read(&pred_path)?, &read(&ref_path)?, &*embedder));
    }
    let out = out.unwrap_or_else(|| predictions.join("scores.jsonl"));
    let mut lines = String::new();
    for score in &scores {
        lines.push_str(&serde_json::to_string(score).expect("score serializes"));
        lines.push('\n');
    }
    std::fs::write(&out, lines)
        .map_err(|e| CliError::Stage(format!("cannot write '{}': {e}", out.display())))?;
    let agg = aggregate(&scores)?;
    println!(
        "evaluated {} cases ({} invalid): rouge_l f1 {:.4}, bert_score f1 {:.4}",
        scores.len(),
        agg.n_invalid,
        agg.rouge_l.f1,
        agg.bert_score.f1
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_report(scores_path: &Path, out: &Path) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(scores_path)
        .map_err(|e| CliError::Stage(format!("cannot read '{}': {e}", scores_path.display())))?;
    let mut scores: Vec<CaseScore> = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        scores.push(serde_json::from_str(line).map_err(|e| {
            CliError::Stage(format!(
                "bad score at {}:{}: {e}",
                scores_path.display(),
                idx + 1
            ))
        })?);
    }
    let bundle = build_report(&scores)?;
    let written = render(&bundle, out)?;
    println!("wrote {} report files to {}", written.len(), out.display());
    Ok(())
}
