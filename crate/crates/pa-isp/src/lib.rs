//! Clinical case-report summarization with perspective-aware iterative
//! self-prompting (PA-ISP).
//!
//! The pipeline optimizes a summarization prompt against a gold training
//! batch: a meta-prompt seeds an initial prompt, each epoch scores the
//! generated summaries with ROUGE-L and BERTScore, the worst-scoring cases
//! are sent back to the model for reflections, and the prompt is revised
//! from that feedback. The best prompt version then drives test-set
//! inference under a length guard, optionally augmented with retrieved
//! few-shot examples.
//!
//! Every stage runs offline against scripted chat transcripts and a
//! deterministic hash embedder, so the whole loop is reproducible without
//! network access.
//!
//! ## Module map
//!
//! - [`corpus`]: manifest ingestion, validation, and the gold-set partition
//! - [`metrics`]: tokenization, ROUGE-L, BERTScore, aggregation, histograms
//! - [`gateway`]: chat/embedding provider traits, retries, rate limits,
//!   scripted mocks, deterministic embedder
//! - [`prompting`]: meta-prompt and refinement-instruction builders,
//!   prompt version store, structure statistics
//! - [`engine`]: the epoch loop to generate, score, select worst, reflect,
//!   refine, and pick the best version
//! - [`retrieval`]: exact cosine top-k over an embedded case index,
//!   few-shot augmentation
//! - [`inference`]: test-set generation with the length guard and
//!   full-text fallback
//! - [`report`]: aggregate tables, F1 histograms, CSV/SVG rendering
//! - [`config`] / [`cli`]: declarative pipeline configuration and the
//!   stage subcommands
//!
//! ## Runnable examples
//!
//! Each major capability has a standalone example:
//!
//! ```bash
//! cargo run -p pa-isp --example ingest_and_partition
//! cargo run -p pa-isp --example score_summaries
//! cargo run -p pa-isp --example offline_isp_run
//! cargo run -p pa-isp --example retrieval_few_shot
//! cargo run -p pa-isp --example length_guarded_inference
//! cargo run -p pa-isp --example evaluation_report
//! cargo run -p pa-isp --example remote_provider
//! ```

pub mod cli;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod gateway;
pub mod inference;
pub mod metrics;
pub mod prompting;
pub mod report;
pub mod retrieval;
