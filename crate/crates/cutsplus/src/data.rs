//! Panels, observation masks, sliding windows, and delimited-text I/O.
//!
//! A panel is an `N x T` matrix: one row per series, one column per time
//! step. Masks share that shape with entries in {0, 1}; 1 means observed.
//! Values at unobserved positions are kept at 0 internally, so a panel plus
//! its mask is always a complete, finite matrix.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Multivariate series, one row per series. Entries at unobserved positions
/// are zero; all entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: Array2<f64>,
}

impl TimeSeriesPanel {
    /// Wraps a fully observed matrix. Fails on non-finite entries or an
    /// empty shape.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Shape(format!(
                "panel must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some((idx, _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite value at series {}, step {}",
                idx.0, idx.1
            )));
        }
        Ok(TimeSeriesPanel { values })
    }

    /// Wraps a partially observed matrix: masked-out cells are reset to zero
    /// and only observed cells must be finite.
    pub fn with_mask(mut values: Array2<f64>, mask: &ObservationMask) -> Result<Self> {
        if values.dim() != mask.observed.dim() {
            return Err(Error::Shape(format!(
                "panel {}x{} vs mask {}x{}",
                values.nrows(),
                values.ncols(),
                mask.observed.nrows(),
                mask.observed.ncols()
            )));
        }
        for ((i, t), v) in values.indexed_iter_mut() {
            if mask.observed[[i, t]] == 0 {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Shape(format!(
                    "non-finite observed value at series {i}, step {t}"
                )));
            }
        }
        TimeSeriesPanel::new(values)
    }

    pub fn n_series(&self) -> usize {
        self.values.nrows()
    }

    pub fn length(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

/// Binary observation indicator, same shape as its panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    observed: Array2<u8>,
}

impl ObservationMask {
    pub fn new(observed: Array2<u8>) -> Result<Self> {
        if let Some((idx, v)) = observed.indexed_iter().find(|(_, v)| **v > 1) {
            return Err(Error::Shape(format!(
                "mask entry at series {}, step {} is {v}, expected 0 or 1",
                idx.0, idx.1
            )));
        }
        Ok(ObservationMask { observed })
    }

    /// Fully observed mask.
    pub fn ones(n_series: usize, length: usize) -> Self {
        ObservationMask {
            observed: Array2::ones((n_series, length)),
        }
    }

    /// Converts a 0.0/1.0 matrix, e.g. one read back from CSV.
    pub fn from_f64(m: &Array2<f64>) -> Result<Self> {
        let mut observed = Array2::zeros(m.dim());
        for ((i, t), v) in m.indexed_iter() {
            observed[[i, t]] = if *v == 1.0 {
                1
            } else if *v == 0.0 {
                0
            } else {
                return Err(Error::Shape(format!(
                    "mask entry at series {i}, step {t} is {v}, expected 0.0 or 1.0"
                )));
            };
        }
        Ok(ObservationMask { observed })
    }

    pub fn observed(&self) -> &Array2<u8> {
        &self.observed
    }

    pub fn is_observed(&self, series: usize, step: usize) -> bool {
        self.observed[[series, step]] == 1
    }

    pub fn count_observed(&self) -> usize {
        self.observed.iter().map(|&v| v as usize).sum()
    }

    pub fn observed_fraction(&self) -> f64 {
        self.count_observed() as f64 / self.observed.len() as f64
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed.iter().all(|&v| v == 1)
    }

    /// Mask as 0.0/1.0 weights for loss terms.
    pub fn as_f64(&self) -> Array2<f64> {
        self.observed.mapv(|v| v as f64)
    }

    pub fn n_series(&self) -> usize {
        self.observed.nrows()
    }

    pub fn length(&self) -> usize {
        self.observed.ncols()
    }
}

/// Half-open slice of time steps `[start, start + width)` whose prediction
/// target sits at `start + target_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub width: usize,
    pub target_offset: usize,
}

impl Window {
    /// Absolute time index of the prediction target.
    pub fn target(&self) -> usize {
        self.start + self.target_offset
    }

    /// Absolute time index one past the end of the window.
    pub fn end(&self) -> usize {
        self.start + self.width
    }
}

/// Enumerates training windows with `history` input steps followed by one
/// target step, advancing by `stride`. Targets run over
/// `history, history + stride, ...` up to the panel length.
pub fn make_windows(panel: &TimeSeriesPanel, history: usize, stride: usize) -> Result<Vec<Window>> {
    windows_for_length(panel.length(), history, stride)
}

pub(crate) fn windows_for_length(
    length: usize,
    history: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    if history == 0 {
        return Err(Error::Config("window history must be at least 1".into()));
    }
    if stride == 0 {
        return Err(Error::Config("window stride must be at least 1".into()));
    }
    if length <= history {
        return Err(Error::Config(format!(
            "panel length {length} leaves no target after {history} history steps"
        )));
    }
    let windows = (history..length)
        .step_by(stride)
        .map(|target| Window {
            start: target - history,
            width: history + 1,
            target_offset: history,
        })
        .collect();
    Ok(windows)
}

/// Reads a delimited panel. Cells equal to `missing_token` become unobserved
/// zeros; every other cell must parse as a finite real. A first line whose
/// fields neither parse nor equal the token is treated as a header and
/// skipped.
pub fn load_csv(
    path: &Path,
    delimiter: char,
    missing_token: &str,
) -> Result<(TimeSeriesPanel, ObservationMask)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::Parse {
            path: path.into(),
            row: 1,
            col: 1,
            reason: "file contains no data".into(),
        });
    }
    if is_header(lines[0].1, delimiter, missing_token) {
        lines.remove(0);
        if lines.is_empty() {
            return Err(Error::Parse {
                path: path.into(),
                row: 2,
                col: 1,
                reason: "file contains a header but no data rows".into(),
            });
        }
    }

    let mut values: Vec<f64> = Vec::new();
    let mut observed: Vec<u8> = Vec::new();
    let mut n_cols = None;
    for (row_no, line) in &lines {
        let fields: Vec<&str> = line.split(delimiter).collect();
        match n_cols {
            None => n_cols = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Parse {
                    path: path.into(),
                    row: *row_no,
                    col: fields.len(),
                    reason: format!("row has {} fields, expected {w}", fields.len()),
                });
            }
            _ => {}
        }
        for (col_idx, field) in fields.iter().enumerate() {
            let cell = field.trim();
            if cell == missing_token {
                values.push(0.0);
                observed.push(0);
                continue;
            }
            let parsed: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.into(),
                row: *row_no,
                col: col_idx + 1,
                reason: format!("cannot parse `{cell}` as a real number"),
            })?;
            if !parsed.is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    row: *row_no,
                    col: col_idx + 1,
                    reason: format!("value `{cell}` is not finite"),
                });
            }
            values.push(parsed);
            observed.push(1);
        }
    }
    let n_rows = lines.len();
    let n_cols = n_cols.unwrap_or(0);
    let values = Array2::from_shape_vec((n_rows, n_cols), values)
        .expect("row-major buffer matches counted shape");
    let observed = Array2::from_shape_vec((n_rows, n_cols), observed)
        .expect("row-major buffer matches counted shape");
    let mask = ObservationMask::new(observed)?;
    let panel = TimeSeriesPanel::new(values)?;
    Ok((panel, mask))
}

fn is_header(line: &str, delimiter: char, missing_token: &str) -> bool {
    line.split(delimiter).any(|f| {
        let cell = f.trim();
        cell != missing_token && cell.parse::<f64>().is_err()
    })
}

/// Writes a panel with a `t0,t1,...` header row; unobserved cells are
/// rendered as `missing_token`. Numbers use the shortest representation that
/// parses back to the identical `f64`.
pub fn save_panel_csv(
    panel: &TimeSeriesPanel,
    mask: &ObservationMask,
    path: &Path,
    missing_token: &str,
) -> Result<()> {
    if panel.values.dim() != mask.observed.dim() {
        return Err(Error::Shape(format!(
            "panel {}x{} vs mask {}x{}",
            panel.n_series(),
            panel.length(),
            mask.n_series(),
            mask.length()
        )));
    }
    let mut out = String::new();
    let header: Vec<String> = (0..panel.length()).map(|t| format!("t{t}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..panel.n_series() {
        for t in 0..panel.length() {
            if t > 0 {
                out.push(',');
            }
            if mask.is_observed(i, t) {
                let _ = write!(out, "{}", panel.values[[i, t]]);
            } else {
                out.push_str(missing_token);
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a headerless numeric matrix, one row per line, comma-separated,
/// full round-trip precision.
pub fn save_matrix(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in matrix.rows() {
        for (t, v) in row.iter().enumerate() {
            if t > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a headerless numeric matrix written by [`save_matrix`].
pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let (panel, mask) = load_csv(path, ',', "\u{0}")?;
    if !mask.is_fully_observed() {
        return Err(Error::Shape(format!(
            "matrix file {} has missing entries",
            path.display()
        )));
    }
    Ok(panel.values)
}
