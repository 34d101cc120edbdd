//! ROUGE-L and BERTScore per summary pair, plus corpus-level aggregation.
//!
//! Both metrics share one tokenizer (lowercase, split on non-alphanumeric
//! runs). ROUGE-L is whole-sequence LCS with a balanced F-measure.
//! BERTScore greedily matches each token to its best cosine counterpart,
//! clamping negative similarities to zero before averaging.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::EmbeddingProvider;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{side} token sequence is empty, pair cannot be scored")]
    EmptySequence { side: &'static str },
    #[error("no valid cases to aggregate (n_invalid = {n_invalid})")]
    NoValidCases { n_invalid: usize },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("bin width {0} outside (0, 1]")]
    InvalidBinWidth(f64),
    #[error("token embedding failed: {0}")]
    Embedding(String),
}

/// Precision / recall / F1, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

impl MetricTriple {
    /// Combine precision and recall with the balanced (beta = 1) F-measure.
    /// F1 is 0 when both inputs are 0.
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricTriple { precision, recall, f1 }
    }

    pub const ZERO: MetricTriple = MetricTriple { precision: 0.0, recall: 0.0, f1: 0.0 };
}

/// Normalized tokens in source order. Never contains empty strings.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        TokenSequence(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Lowercase and split on runs of non-alphanumeric characters. Digits are
/// kept; symbol-only input yields an empty sequence.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSequence(tokens)
}

/// Length of the longest common subsequence, two-row dynamic program.
fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L over whole sequences: P = LCS/|candidate|, R = LCS/|reference|,
/// with 0 substituted when a denominator is 0.
pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> MetricTriple {
    let lcs = lcs_len(candidate.tokens(), reference.tokens()) as f64;
    let precision = if candidate.is_empty() { 0.0 } else { lcs / candidate.len() as f64 };
    let recall = if reference.is_empty() { 0.0 } else { lcs / reference.len() as f64 };
    MetricTriple::from_pr(precision, recall)
}

/// BERTScore with greedy matching: each candidate token contributes its best
/// cosine similarity against the reference tokens (precision side), and
/// symmetrically for recall. Negative maxima are clamped to 0.
///
/// Errors when either sequence is empty; the caller marks the case invalid.
pub fn bert_score(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    embedder: &dyn EmbeddingProvider,
) -> Result<MetricTriple, MetricsError> {
    if candidate.is_empty() {
        return Err(MetricsError::EmptySequence { side: "candidate" });
    }
    if reference.is_empty() {
        return Err(MetricsError::EmptySequence { side: "reference" });
    }
    let cand_vecs = embedder
        .embed(candidate.tokens())
        .map_err(|e| MetricsError::Embedding(e.to_string()))?;
    let ref_vecs = embedder
        .embed(reference.tokens())
        .map_err(|e| MetricsError::Embedding(e.to_string()))?;

    let precision = cand_vecs
        .iter()
        .map(|c| {
            ref_vecs
                .iter()
                .map(|r| c.cosine(r))
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0)
        })
        .sum::<f64>()
        / cand_vecs.len() as f64;
    let recall = ref_vecs
        .iter()
        .map(|r| {
            cand_vecs
                .iter()
                .map(|c| r.cosine(c))
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0)
        })
        .sum::<f64>()
        / ref_vecs.len() as f64;
    Ok(MetricTriple::from_pr(precision, recall))
}

/// One case's scores. When `valid` is false both triples are absent and the
/// case is excluded from aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<MetricTriple>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bert_score: Option<MetricTriple>,
    pub valid: bool,
}

impl CaseScore {
    pub fn valid(case_id: impl Into<String>, rouge_l: MetricTriple, bert: MetricTriple) -> Self {
        CaseScore {
            case_id: case_id.into(),
            rouge_l: Some(rouge_l),
            bert_score: Some(bert),
            valid: true,
        }
    }

    pub fn invalid(case_id: impl Into<String>) -> Self {
        CaseScore { case_id: case_id.into(), rouge_l: None, bert_score: None, valid: false }
    }
}

/// Score one candidate/reference pair. An empty or whitespace-only candidate,
/// or a BERTScore failure, marks the case invalid instead of erroring.
pub fn score_case(
    case_id: &str,
    candidate: &str,
    reference: &str,
    embedder: &dyn EmbeddingProvider,
) -> CaseScore {
    if candidate.trim().is_empty() {
        return CaseScore::invalid(case_id);
    }
    let cand_tokens = tokenize(candidate);
    let ref_tokens = tokenize(reference);
    let rouge = rouge_l(&cand_tokens, &ref_tokens);
    match bert_score(&cand_tokens, &ref_tokens, embedder) {
        Ok(bert) => CaseScore::valid(case_id, rouge, bert),
        Err(err) => {
            log::warn!("case {case_id}: BERTScore failed ({err}), marking invalid");
            CaseScore::invalid(case_id)
        }
    }
}

/// Arithmetic means over the valid cases only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub rouge_l: MetricTriple,
    pub bert_score: MetricTriple,
    pub n_valid: usize,
    pub n_invalid: usize,
}

pub fn aggregate(scores: &[CaseScore]) -> Result<AggregateScores, MetricsError> {
    let valid: Vec<&CaseScore> = scores.iter().filter(|s| s.valid).collect();
    let n_invalid = scores.len() - valid.len();
    if valid.is_empty() {
        return Err(MetricsError::NoValidCases { n_invalid });
    }
    let n = valid.len() as f64;
    // Sorting before summation keeps the means bit-identical under input
    // permutation; f64 addition is not associative.
    let ordered_mean = |values: &mut Vec<f64>| {
        values.sort_by(f64::total_cmp);
        values.iter().sum::<f64>() / n
    };
    let mean = |field: fn(&CaseScore) -> MetricTriple| MetricTriple {
        precision: ordered_mean(&mut valid.iter().map(|s| field(s).precision).collect()),
        recall: ordered_mean(&mut valid.iter().map(|s| field(s).recall).collect()),
        f1: ordered_mean(&mut valid.iter().map(|s| field(s).f1).collect()),
    };
    Ok(AggregateScores {
        rouge_l: mean(|s| s.rouge_l.expect("valid case")),
        bert_score: mean(|s| s.bert_score.expect("valid case")),
        n_valid: valid.len(),
        n_invalid,
    })
}

/// One histogram bin: left-closed, right-open, except the last bin which is
/// closed at 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Fixed-range histogram over `[0, 1]`. Values within 1e-9 of a bin edge
/// count toward the upper bin so decimal edges behave as written.
pub fn histogram(scores: &[f64], bin_width: f64) -> Result<Vec<HistogramBin>, MetricsError> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(MetricsError::InvalidBinWidth(bin_width));
    }
    let n_bins = ((1.0 - 1e-9) / bin_width).floor() as usize + 1;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            lo: i as f64 * bin_width,
            hi: ((i + 1) as f64 * bin_width).min(1.0),
            count: 0,
        })
        .collect();
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(MetricsError::ScoreOutOfRange(s));
        }
        let idx = ((s / bin_width + 1e-9).floor() as usize).min(n_bins - 1);
        bins[idx].count += 1;
    }
    Ok(bins)
}
