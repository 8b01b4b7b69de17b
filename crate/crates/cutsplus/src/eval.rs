//! Scoring of recovered edge probabilities against a ground-truth graph.
//!
//! AUROC follows the Mann-Whitney formulation: the probability that a
//! uniformly random true edge outscores a uniformly random non-edge, with
//! ties credited 1/2. Computed via average ranks, which is algebraically
//! identical to brute-force pair enumeration. Reports serialize to a
//! versioned JSON schema and an optional side-by-side SVG heatmap.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::ObservationMask;
use crate::error::{Error, Result};
use crate::sim::GroundTruthGraph;

/// Current report schema tag.
pub const REPORT_SCHEMA: &str = "cuts-scope/report-v1";

/// Scores of one matrix against one truth, for one diagonal convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub auroc: f64,
    pub auprc: f64,
    pub n_edges_true: usize,
    pub n_scored: usize,
    pub exclude_diagonal: bool,
    /// ROC polyline from (0, 0) to (1, 1); nondecreasing in both
    /// coordinates.
    pub threshold_curve: Vec<(f64, f64)>,
}

/// Scores `scores[[i, j]]` as the confidence of an edge `i -> j` and
/// compares against the truth adjacency. With `exclude_diagonal` the
/// self-edge cells are left out of the ranking entirely.
pub fn score_graph(
    scores: &Array2<f64>,
    truth: &GroundTruthGraph,
    exclude_diagonal: bool,
) -> Result<ScoreReport> {
    let n = truth.n_series();
    if scores.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "scores are {}x{} but truth is {n}x{n}",
            scores.nrows(),
            scores.ncols()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Other("scores contain non-finite values".into()));
    }

    let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            if exclude_diagonal && i == j {
                continue;
            }
            pairs.push((scores[[i, j]], truth.has_edge(i, j)));
        }
    }
    let positives = pairs.iter().filter(|(_, y)| *y).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTruth {
            positives,
            negatives,
        });
    }

    // ascending by score; average ranks over tie groups
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut idx = 0;
    while idx < pairs.len() {
        let mut end = idx + 1;
        while end < pairs.len() && pairs[end].0 == pairs[idx].0 {
            end += 1;
        }
        // 1-based ranks idx+1 ..= end averaged
        let avg_rank = (idx + 1 + end) as f64 / 2.0;
        let tied_pos = pairs[idx..end].iter().filter(|(_, y)| *y).count();
        rank_sum_pos += avg_rank * tied_pos as f64;
        idx = end;
    }
    let p = positives as f64;
    let q = negatives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    let auroc = u / (p * q);

    // descending sweep over distinct thresholds for ROC and
    // precision-recall areas
    let mut curve = vec![(0.0, 0.0)];
    let mut auprc = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut idx = pairs.len();
    while idx > 0 {
        let mut begin = idx - 1;
        while begin > 0 && pairs[begin - 1].0 == pairs[idx - 1].0 {
            begin -= 1;
        }
        let tied_pos = pairs[begin..idx].iter().filter(|(_, y)| *y).count();
        let prev_tp = tp;
        tp += tied_pos;
        fp += idx - begin - tied_pos;
        curve.push((fp as f64 / q, tp as f64 / p));
        let precision = tp as f64 / (tp + fp) as f64;
        auprc += (tp - prev_tp) as f64 / p * precision;
        idx = begin;
    }

    Ok(ScoreReport {
        auroc,
        auprc,
        n_edges_true: positives,
        n_scored: pairs.len(),
        exclude_diagonal,
        threshold_curve: curve,
    })
}

/// Full evaluation artifact: both diagonal conventions plus an echo of what
/// was scored. When one convention has no positives or no negatives its
/// slot is `None` and the note explains why.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub n_series: usize,
    pub scores_path: Option<String>,
    pub truth_path: Option<String>,
    pub include_diagonal: ScoreReport,
    pub exclude_diagonal: Option<ScoreReport>,
    pub exclude_diagonal_note: Option<String>,
}

/// Builds the two-convention report in memory.
pub fn build_report(
    scores: &Array2<f64>,
    truth: &GroundTruthGraph,
    scores_path: Option<&Path>,
    truth_path: Option<&Path>,
) -> Result<EvalReport> {
    let include_diagonal = score_graph(scores, truth, false)?;
    let (exclude_diagonal, note) = match score_graph(scores, truth, true) {
        Ok(r) => (Some(r), None),
        Err(e @ Error::DegenerateTruth { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        schema: REPORT_SCHEMA.to_string(),
        n_series: truth.n_series(),
        scores_path: scores_path.map(|p| p.display().to_string()),
        truth_path: truth_path.map(|p| p.display().to_string()),
        include_diagonal,
        exclude_diagonal,
        exclude_diagonal_note: note,
    })
}

pub fn save_report(report: &EvalReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Other(format!("report serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Parses report JSON and enforces the schema: version tag, score ranges,
/// and a monotone ROC curve. This is the round-trip validator used by the
/// tests and the `report` subcommand.
pub fn validate_report_json(text: &str) -> Result<EvalReport> {
    let report: EvalReport = serde_json::from_str(text).map_err(|e| {
        Error::Other(format!("report does not parse as {REPORT_SCHEMA}: {e}"))
    })?;
    if report.schema != REPORT_SCHEMA {
        return Err(Error::Other(format!(
            "unsupported report schema {:?}, expected {REPORT_SCHEMA:?}",
            report.schema
        )));
    }
    let mut sections = vec![&report.include_diagonal];
    if let Some(ex) = report.exclude_diagonal.as_ref() {
        sections.push(ex);
    }
    for section in sections {
        if !(0.0..=1.0).contains(&section.auroc) {
            return Err(Error::Other(format!(
                "auroc {} outside [0, 1]",
                section.auroc
            )));
        }
        let curve = &section.threshold_curve;
        for window in curve.windows(2) {
            let (f0, t0) = window[0];
            let (f1, t1) = window[1];
            if f1 < f0 || t1 < t0 {
                return Err(Error::Other(
                    "threshold curve is not monotone nondecreasing".into(),
                ));
            }
        }
        if curve.first() != Some(&(0.0, 0.0)) || curve.last() != Some(&(1.0, 1.0)) {
            return Err(Error::Other(
                "threshold curve must run from (0, 0) to (1, 1)".into(),
            ));
        }
    }
    Ok(report)
}

/// Root mean squared error over the cells the mask marks missing; `None`
/// when every cell is observed.
pub fn rmse_missing(
    estimate: &Array2<f64>,
    reference: &Array2<f64>,
    mask: &ObservationMask,
) -> Option<f64> {
    debug_assert_eq!(estimate.dim(), reference.dim());
    let mut sse = 0.0;
    let mut count = 0usize;
    for ((i, t), e) in estimate.indexed_iter() {
        if !mask.is_observed(i, t) {
            let d = e - reference[[i, t]];
            sse += d * d;
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some((sse / count as f64).sqrt())
    }
}

const CELL: f64 = 14.0;
const PANEL_GAP: f64 = 40.0;
const MARGIN: f64 = 30.0;
const TITLE_H: f64 = 20.0;

/// Renders `scores` and `truth` side by side as an SVG heatmap.
///
/// Color ramp (documented contract): a value `v` clamped to `[0, 1]` maps
/// to the grayscale level `round(255 * (1 - v))`, so 0 is white and 1 is
/// black. Each panel is exactly `n * n` `<rect>` elements inside a `<g>`
/// whose id names the panel.
pub fn render_heatmap_svg(scores: &Array2<f64>, truth: &GroundTruthGraph) -> Result<String> {
    let n = truth.n_series();
    if scores.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "scores are {}x{} but truth is {n}x{n}",
            scores.nrows(),
            scores.ncols()
        )));
    }
    let panel = n as f64 * CELL;
    let width = 2.0 * MARGIN + 2.0 * panel + PANEL_GAP;
    let height = 2.0 * MARGIN + TITLE_H + panel;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    let truth_f = truth.as_f64();
    let panels: [(&str, &Array2<f64>, f64); 2] = [
        ("scores", scores, MARGIN),
        ("truth", &truth_f, MARGIN + panel + PANEL_GAP),
    ];
    for (name, values, x0) in panels {
        let y0 = MARGIN + TITLE_H;
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"14\">{name}</text>\n",
            x0,
            MARGIN + 12.0
        ));
        svg.push_str(&format!("  <g id=\"{name}\">\n"));
        for i in 0..n {
            for j in 0..n {
                let v = values[[i, j]].clamp(0.0, 1.0);
                let level = (255.0 * (1.0 - v)).round() as u8;
                svg.push_str(&format!(
                    "    <rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" \
                     fill=\"rgb({level},{level},{level})\"/>\n",
                    x0 + j as f64 * CELL,
                    y0 + i as f64 * CELL,
                ));
            }
        }
        svg.push_str("  </g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn save_heatmap(scores: &Array2<f64>, truth: &GroundTruthGraph, path: &Path) -> Result<()> {
    let svg = render_heatmap_svg(scores, truth)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
