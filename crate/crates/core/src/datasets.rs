//! libsvm/svmlight parsing, a dense-matrix fallback reader, and the registry
//! of benchmark datasets with their regularization settings.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{GoaError, Result};

/// Labelled examples with sparse features. Column indices are stored
/// zero-based; the text format is one-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub dim: usize,
    /// `(column, value)` pairs per row, strictly increasing columns
    pub rows: Vec<Vec<(usize, f64)>>,
    /// `±1`
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row_dot(&self, i: usize, w: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, x)| x * w[j]).sum()
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, x)| x * x).sum()
    }

    /// `g += s·x_i`
    pub fn row_axpy(&self, i: usize, s: f64, g: &mut [f64]) {
        for &(j, x) in &self.rows[i] {
            g[j] += s * x;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(GoaError::usage(format!("dataset `{}` has no rows", self.name)));
        }
        if self.rows.len() != self.labels.len() {
            return Err(GoaError::usage("row and label counts differ"));
        }
        if let Some(y) = self.labels.iter().find(|y| **y != 1.0 && **y != -1.0) {
            return Err(GoaError::usage(format!("label {y} is not +1 or -1")));
        }
        for row in &self.rows {
            if row.windows(2).any(|p| p[0].0 >= p[1].0) || row.iter().any(|&(j, _)| j >= self.dim) {
                return Err(GoaError::usage("row indices must increase and stay below dim"));
            }
        }
        Ok(())
    }

    /// Divides each column by its largest absolute value.
    pub fn scale_max_abs(&mut self) {
        let mut m = vec![0.0f64; self.dim];
        for row in &self.rows {
            for &(j, x) in row {
                m[j] = m[j].max(x.abs());
            }
        }
        for row in &mut self.rows {
            for (j, x) in row.iter_mut() {
                if m[*j] > 0.0 {
                    *x /= m[*j];
                }
            }
        }
    }

    /// Writes libsvm text that `parse_libsvm` reads back identically.
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for (row, y) in self.rows.iter().zip(&self.labels) {
            out.push_str(if *y > 0.0 { "+1" } else { "-1" });
            for &(j, x) in row {
                // `{:?}` prints the shortest string that round-trips
                let _ = write!(out, " {}:{:?}", j + 1, x);
            }
            out.push('\n');
        }
        out
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> GoaError {
    GoaError::Parse {
        line,
        message: message.into(),
    }
}

/// Maps two distinct raw labels to `±1` (smaller → −1). A single observed
/// label keeps its sign convention.
fn remap_labels(raw: &[f64]) -> Result<Vec<f64>> {
    let mut distinct: Vec<f64> = Vec::new();
    for y in raw {
        if !distinct.contains(y) {
            distinct.push(*y);
            if distinct.len() > 2 {
                return Err(GoaError::usage(format!(
                    "expected binary labels, found at least {distinct:?}"
                )));
            }
        }
    }
    distinct.sort_by(f64::total_cmp);
    Ok(match distinct.as_slice() {
        [lo, _] => raw.iter().map(|y| if y == lo { -1.0 } else { 1.0 }).collect(),
        _ => raw.iter().map(|y| if *y > 0.0 { 1.0 } else { -1.0 }).collect(),
    })
}

/// Parses libsvm text. `declared_dim` widens `d` past the largest index seen.
pub fn parse_libsvm<R: BufRead>(
    reader: R,
    name: &str,
    declared_dim: Option<usize>,
) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    let mut max_index = 0usize;
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label `{label_tok}`")))?;
        if !label.is_finite() {
            return Err(parse_err(lineno, "label is not finite"));
        }
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("token `{tok}` is not index:value")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad index in `{tok}`")))?;
            if idx == 0 {
                return Err(parse_err(lineno, "indices are 1-based"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad value in `{tok}`")))?;
            if !val.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value in `{tok}`")));
            }
            if let Some(&(prev, _)) = row.last() {
                if idx - 1 == prev {
                    return Err(parse_err(lineno, format!("duplicate index {idx}")));
                }
                if idx - 1 < prev {
                    return Err(parse_err(lineno, format!("index {idx} after {}", prev + 1)));
                }
            }
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        rows.push(row);
        raw_labels.push(label);
    }
    if let Some(d) = declared_dim {
        if d < max_index {
            return Err(GoaError::usage(format!(
                "declared dimension {d} is below the largest index {max_index}"
            )));
        }
    }
    let data = Dataset {
        name: name.to_string(),
        dim: declared_dim.unwrap_or(max_index).max(1),
        rows,
        labels: remap_labels(&raw_labels)?,
    };
    data.validate()?;
    Ok(data)
}

pub fn parse_libsvm_str(text: &str, name: &str, declared_dim: Option<usize>) -> Result<Dataset> {
    parse_libsvm(text.as_bytes(), name, declared_dim)
}

/// Dense whitespace matrix: one example per line, label in the first column.
pub fn parse_dense<R: BufRead>(reader: R, name: &str) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    let mut width = None;
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let vals = body
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(lineno, format!("bad number `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(parse_err(lineno, format!("expected {w} columns, got {}", vals.len())))
            }
            _ => {}
        }
        raw_labels.push(vals[0]);
        rows.push(
            vals[1..]
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| (j, *v))
                .collect(),
        );
    }
    let data = Dataset {
        name: name.to_string(),
        dim: width.unwrap_or(1).saturating_sub(1).max(1),
        rows,
        labels: remap_labels(&raw_labels)?,
    };
    data.validate()?;
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FileFormat {
    #[default]
    Libsvm,
    Dense,
}

/// One row of the benchmark table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetMeta {
    pub name: &'static str,
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub tau: f64,
    pub source: &'static str,
}

pub const REGISTRY: [DatasetMeta; 6] = [
    DatasetMeta { name: "breast cancer", n: 683, d: 10, lambda: 1e-3, tau: 0.9, source: "LIBSVM" },
    DatasetMeta { name: "covtype", n: 581_012, d: 54, lambda: 1e-6, tau: 0.9, source: "LIBSVM" },
    DatasetMeta { name: "sido0", n: 12_678, d: 4932, lambda: 1e-3, tau: 0.9, source: "Causality Workbench" },
    DatasetMeta { name: "svmguide1", n: 7089, d: 4, lambda: 1e-3, tau: 0.9, source: "LIBSVM" },
    DatasetMeta { name: "IJCNN1", n: 141_691, d: 22, lambda: 1e-3, tau: 2.5, source: "LIBSVM" },
    DatasetMeta { name: "adult", n: 48_842, d: 123, lambda: 1e-5, tau: 1.5, source: "UCI" },
];

fn normalize_name(s: &str) -> String {
    s.trim()
        .chars()
        .map(|c| if c == '-' || c == '_' { ' ' } else { c.to_ascii_lowercase() })
        .collect()
}

/// Case-insensitive; spaces, `-` and `_` are interchangeable.
pub fn registry_lookup(name: &str) -> Result<DatasetMeta> {
    let key = normalize_name(name);
    REGISTRY
        .iter()
        .find(|m| normalize_name(m.name) == key)
        .copied()
        .ok_or_else(|| GoaError::Lookup {
            name: name.to_string(),
            known: REGISTRY.iter().map(|m| m.name.to_string()).collect(),
        })
}

/// Reads a file and checks it against registry metadata when given. A
/// mismatch in `n` or `d` is an error rather than a silent truncation.
pub fn load_dataset(
    path: &Path,
    name: &str,
    meta: Option<&DatasetMeta>,
    format: FileFormat,
) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let data = match format {
        FileFormat::Libsvm => parse_libsvm(reader, name, meta.map(|m| m.d))?,
        FileFormat::Dense => parse_dense(reader, name)?,
    };
    if let Some(m) = meta {
        if data.n() != m.n || data.dim != m.d {
            return Err(GoaError::usage(format!(
                "`{}` has n={} d={}, expected n={} d={}",
                path.display(),
                data.n(),
                data.dim,
                m.n,
                m.d
            )));
        }
    }
    Ok(data)
}
