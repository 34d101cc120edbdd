//! Evaluation reporting: aggregate metric table, per-metric F1 histograms,
//! tail counts, and rendered artifacts (JSON, CSV, SVG bar chart and
//! overlaid histogram).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{aggregate, histogram, CaseScore, HistogramBin, MetricTriple, MetricsError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const F1_BIN_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rouge_l: MetricTriple,
    pub bert_score: MetricTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Histograms {
    pub rouge_l: Vec<HistogramBin>,
    pub bert_score: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCounts {
    /// Valid cases with BERTScore F1 in `[0.8, 0.9)`.
    pub bert_f1_in_08_09: usize,
    /// Valid cases with ROUGE-L F1 below `0.2`.
    pub rouge_f1_below_02: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema: u32,
    pub n_cases: usize,
    pub n_valid: usize,
    pub n_invalid: usize,
    pub metric_table: MetricTable,
    pub f1_histograms: F1Histograms,
    pub tail_counts: TailCounts,
}

/// Summarize per-case scores into one report bundle. Pure: the result
/// depends only on the multiset of scores, not their order. Errors if no
/// case is valid.
pub fn build_report(scores: &[CaseScore]) -> Result<ReportBundle, ReportError> {
    let agg = aggregate(scores)?;
    let f1s = |field: fn(&CaseScore) -> Option<MetricTriple>| -> Vec<f64> {
        scores.iter().filter(|s| s.valid).filter_map(|s| field(s).map(|t| t.f1)).collect()
    };
    let rouge_bins = histogram(&f1s(|s| s.rouge_l), F1_BIN_WIDTH)?;
    let bert_bins = histogram(&f1s(|s| s.bert_score), F1_BIN_WIDTH)?;
    let tail_counts = TailCounts {
        bert_f1_in_08_09: bert_bins
            .iter()
            .find(|b| (b.lo - 0.8).abs() < 1e-9)
            .map_or(0, |b| b.count),
        rouge_f1_below_02: tail_below(&rouge_bins, 0.2),
    };
    Ok(ReportBundle {
        schema: REPORT_SCHEMA_VERSION,
        n_cases: scores.len(),
        n_valid: agg.n_valid,
        n_invalid: agg.n_invalid,
        metric_table: MetricTable { rouge_l: agg.rouge_l, bert_score: agg.bert_score },
        f1_histograms: F1Histograms { rouge_l: rouge_bins, bert_score: bert_bins },
        tail_counts,
    })
}

fn tail_below(bins: &[HistogramBin], cutoff: f64) -> usize {
    bins.iter().filter(|b| b.hi <= cutoff + 1e-9).map(|b| b.count).sum()
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn render_csv(bundle: &ReportBundle) -> String {
    let row = |name: &str, t: &MetricTriple| {
        format!("{name},{},{},{}", fmt4(t.precision), fmt4(t.recall), fmt4(t.f1))
    };
    format!(
        "metric,precision,recall,f1\n{}\n{}\n",
        row("rouge_l", &bundle.metric_table.rouge_l),
        row("bert_score", &bundle.metric_table.bert_score),
    )
}

const SVG_WIDTH: usize = 640;
const SVG_HEIGHT: usize = 360;
const CHART_BOTTOM: f64 = 300.0;
const CHART_SPAN: f64 = 250.0;
const ROUGE_COLOR: &str = "#1f77b4";
const BERT_COLOR: &str = "#ff7f0e";

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" \
         viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\" font-family=\"sans-serif\">\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        SVG_WIDTH / 2
    )
}

/// Grouped bar chart with exactly six bars: precision, recall, and F1 for
/// each of the two metrics.
fn render_bars_svg(bundle: &ReportBundle) -> String {
    let bars = [
        ("ROUGE-L P", bundle.metric_table.rouge_l.precision, ROUGE_COLOR),
        ("ROUGE-L R", bundle.metric_table.rouge_l.recall, ROUGE_COLOR),
        ("ROUGE-L F1", bundle.metric_table.rouge_l.f1, ROUGE_COLOR),
        ("BERTScore P", bundle.metric_table.bert_score.precision, BERT_COLOR),
        ("BERTScore R", bundle.metric_table.bert_score.recall, BERT_COLOR),
        ("BERTScore F1", bundle.metric_table.bert_score.f1, BERT_COLOR),
    ];
    let mut svg = svg_open(&format!("Aggregate metrics over {} valid cases", bundle.n_valid));
    for (i, (label, value, color)) in bars.iter().enumerate() {
        let height = value.clamp(0.0, 1.0) * CHART_SPAN;
        let x = 50.0 + i as f64 * 95.0;
        let y = CHART_BOTTOM - height;
        svg.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"70\" height=\"{height:.1}\" fill=\"{color}\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
            x + 35.0,
            y - 6.0,
            fmt4(*value)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\">{label}</text>\n",
            x + 35.0,
            CHART_BOTTOM + 18.0,
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"40\" y1=\"{CHART_BOTTOM}\" x2=\"620\" y2=\"{CHART_BOTTOM}\" stroke=\"#333\"/>\n"
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Overlaid F1 histograms for both metrics, semi-transparent so the two
/// distributions stay readable where they overlap.
fn render_hist_svg(bundle: &ReportBundle) -> String {
    let max_count = bundle
        .f1_histograms
        .rouge_l
        .iter()
        .chain(&bundle.f1_histograms.bert_score)
        .map(|b| b.count)
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let mut svg = svg_open("F1 distribution by 0.1 bin");
    let x_left = 50.0;
    let x_span = 560.0;
    let series = [
        (&bundle.f1_histograms.rouge_l, ROUGE_COLOR, "ROUGE-L F1"),
        (&bundle.f1_histograms.bert_score, BERT_COLOR, "BERTScore F1"),
    ];
    for (bins, color, _) in &series {
        for bin in bins.iter() {
            if bin.count == 0 {
                continue;
            }
            let height = bin.count as f64 / max_count * CHART_SPAN;
            let x = x_left + bin.lo * x_span;
            let width = (bin.hi - bin.lo) * x_span;
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{width:.1}\" height=\"{height:.1}\" \
                 fill=\"{color}\" fill-opacity=\"0.55\"/>\n",
                CHART_BOTTOM - height
            ));
        }
    }
    for (i, (_, color, label)) in series.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{label}</text>\n",
            60,
            46 + i * 16
        ));
    }
    for tick in [0.0, 0.5, 1.0] {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\">{tick:.1}</text>\n",
            x_left + tick * x_span,
            CHART_BOTTOM + 18.0
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{x_left}\" y1=\"{CHART_BOTTOM}\" x2=\"{:.1}\" y2=\"{CHART_BOTTOM}\" stroke=\"#333\"/>\n",
        x_left + x_span
    ));
    svg.push_str("</svg>\n");
    svg
}

fn write_atomic(path: &Path, content: &str) -> Result<(), ReportError> {
    let io = |source| ReportError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|source| {
        let _ = std::fs::remove_file(&tmp);
        io(source)
    })
}

/// Write `report.json`, `table.csv`, `bars.svg`, and `hist.svg` into
/// `out_dir`. All content is generated before the first write; if any write
/// still fails, files already written by this call are removed so the
/// directory never holds a partial report.
pub fn render(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|source| ReportError::Io { path: out_dir.display().to_string(), source })?;
    let json = serde_json::to_string_pretty(bundle).expect("bundle serializes");
    let artifacts: [(&str, String); 4] = [
        ("report.json", json + "\n"),
        ("table.csv", render_csv(bundle)),
        ("bars.svg", render_bars_svg(bundle)),
        ("hist.svg", render_hist_svg(bundle)),
    ];
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, content) in &artifacts {
        let path = out_dir.join(name);
        if let Err(err) = write_atomic(&path, content) {
            for done in &written {
                let _ = std::fs::remove_file(done);
            }
            return Err(err);
        }
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(p: f64, r: f64, f1: f64) -> MetricTriple {
        MetricTriple { precision: p, recall: r, f1 }
    }

    fn table_one_scores() -> Vec<CaseScore> {
        let rouge = (0.4653, 0.2468, 0.3077);
        let bert = (0.8784, 0.8325, 0.8546);
        let d = 0.011;
        [-d, 0.0, d]
            .iter()
            .enumerate()
            .map(|(i, off)| {
                CaseScore::valid(
                    format!("c{i}"),
                    triple(rouge.0 + off, rouge.1 + off, rouge.2 + off),
                    triple(bert.0 + off, bert.1 + off, bert.2 + off),
                )
            })
            .collect()
    }

    #[test]
    fn published_aggregate_rows_render_at_four_decimals() {
        let bundle = build_report(&table_one_scores()).unwrap();
        let csv = render_csv(&bundle);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "metric,precision,recall,f1");
        assert_eq!(lines[1], "rouge_l,0.4653,0.2468,0.3077");
        assert_eq!(lines[2], "bert_score,0.8784,0.8325,0.8546");
        assert_eq!(lines.len(), 3);
    }

    fn mixed_scores() -> Vec<CaseScore> {
        vec![
            CaseScore::valid("a", triple(0.5, 0.4, 0.15), triple(0.9, 0.8, 0.85)),
            CaseScore::valid("b", triple(0.6, 0.5, 0.55), triple(0.95, 0.9, 0.92)),
            CaseScore::valid("c", triple(0.3, 0.2, 0.25), triple(0.85, 0.82, 0.83)),
            CaseScore::invalid("d"),
        ]
    }

    #[test]
    fn counts_split_valid_and_invalid() {
        let bundle = build_report(&mixed_scores()).unwrap();
        assert_eq!(bundle.n_cases, 4);
        assert_eq!(bundle.n_valid, 3);
        assert_eq!(bundle.n_invalid, 1);
        assert_eq!(bundle.schema, REPORT_SCHEMA_VERSION);
    }

    #[test]
    fn tail_counts_match_histogram_bins() {
        let bundle = build_report(&mixed_scores()).unwrap();
        assert_eq!(bundle.tail_counts.bert_f1_in_08_09, 2);
        assert_eq!(bundle.tail_counts.rouge_f1_below_02, 1);
        let bert_bin_8 = &bundle.f1_histograms.bert_score[8];
        assert_eq!((bert_bin_8.lo, bert_bin_8.count), (0.8, 2));
        let below: usize = bundle.f1_histograms.rouge_l[..2].iter().map(|b| b.count).sum();
        assert_eq!(below, bundle.tail_counts.rouge_f1_below_02);
    }

    #[test]
    fn report_is_permutation_invariant() {
        let mut scores = mixed_scores();
        let forward = build_report(&scores).unwrap();
        scores.reverse();
        assert_eq!(build_report(&scores).unwrap(), forward);
    }

    #[test]
    fn all_invalid_scores_error() {
        let scores = vec![CaseScore::invalid("a"), CaseScore::invalid("b")];
        assert!(matches!(
            build_report(&scores),
            Err(ReportError::Metrics(MetricsError::NoValidCases { n_invalid: 2 }))
        ));
    }

    #[test]
    fn rendered_json_round_trips() {
        let bundle = build_report(&mixed_scores()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        render(&bundle, dir.path()).unwrap();
        let raw = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let back: ReportBundle = serde_json::from_str(&raw).unwrap();
        assert_eq!(back, bundle);
    }

    #[test]
    fn bar_chart_has_exactly_six_bars() {
        let bundle = build_report(&mixed_scores()).unwrap();
        let svg = render_bars_svg(&bundle);
        assert_eq!(svg.matches("<rect").count(), 6);
        assert!(svg.contains("0.8667"), "bert mean f1 label missing: {svg}");
    }

    #[test]
    fn histogram_chart_overlays_both_metrics() {
        let bundle = build_report(&mixed_scores()).unwrap();
        let svg = render_hist_svg(&bundle);
        assert!(svg.contains("ROUGE-L F1"));
        assert!(svg.contains("BERTScore F1"));
        assert!(svg.contains("fill-opacity"));
    }

    #[test]
    fn render_writes_all_four_artifacts() {
        let bundle = build_report(&mixed_scores()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = render(&bundle, dir.path()).unwrap();
        assert_eq!(written.len(), 4);
        for name in ["report.json", "table.csv", "bars.svg", "hist.svg"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
    }

    #[test]
    fn failed_write_removes_earlier_artifacts() {
        let bundle = build_report(&mixed_scores()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("bars.svg")).unwrap();
        let err = render(&bundle, dir.path()).unwrap_err();
        assert!(matches!(err, ReportError::Io { .. }));
        assert!(!dir.path().join("report.json").exists());
        assert!(!dir.path().join("table.csv").exists());
        assert!(!dir.path().join("hist.svg").exists());
    }
}
