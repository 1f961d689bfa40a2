//! On-disk dataset formats and loading.
//!
//! A dataset is four plain-text files:
//! - edges: the graph edge list (see [`crate::graph::parse_edge_list`]),
//! - features: header `n d C` followed by n lines of d space-separated reals,
//! - labels: n integers in `[0, C)`, whitespace separated,
//! - masks: n characters from `{t, v, e, -}` (train / val / test / unused),
//!   whitespace ignored.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::SplitMasks;
use crate::graph::{Graph, GraphError};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Parse { file: file.to_string(), line, msg: msg.into() }
}

/// Parses a feature file. Returns the n×d matrix and the declared class
/// count C from the `n d C` header.
pub fn parse_features<T: Scalar>(
    text: &str,
    file: &str,
) -> Result<(DenseMatrix<T>, usize), DatasetError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| parse_err(file, 0, "empty feature file, expected `n d C` header"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(parse_err(
            file,
            header_line,
            format!("header must be `n d C`, got {} tokens", parts.len()),
        ));
    }
    let parse_count = |tok: &str, what: &str| {
        tok.parse::<usize>()
            .map_err(|_| parse_err(file, header_line, format!("bad {what} `{tok}`")))
    };
    let n = parse_count(parts[0], "node count")?;
    let d = parse_count(parts[1], "feature dim")?;
    let c = parse_count(parts[2], "class count")?;
    if c == 0 {
        return Err(parse_err(file, header_line, "class count must be positive"));
    }
    let mut m = DenseMatrix::zeros(n, d);
    let mut filled = 0usize;
    for (line_no, line) in lines {
        if filled == n {
            return Err(parse_err(file, line_no, format!("more than {n} feature rows")));
        }
        let row = m.row_mut(filled);
        let mut count = 0usize;
        for tok in line.split_whitespace() {
            if count == d {
                return Err(parse_err(file, line_no, format!("more than {d} values in row")));
            }
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(file, line_no, format!("bad real `{tok}`")))?;
            row[count] = T::from_f64(v);
            count += 1;
        }
        if count != d {
            return Err(parse_err(file, line_no, format!("expected {d} values, got {count}")));
        }
        filled += 1;
    }
    if filled != n {
        return Err(parse_err(file, 0, format!("expected {n} feature rows, got {filled}")));
    }
    Ok((m, c))
}

/// Serializes features with the `n d C` header; floats use Rust's shortest
/// round-trip formatting.
pub fn format_features<T: Scalar>(m: &DenseMatrix<T>, n_classes: usize) -> String {
    let mut out = format!("{} {} {}\n", m.rows(), m.cols(), n_classes);
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parses a label file: whitespace-separated integers.
pub fn parse_labels(text: &str, file: &str) -> Result<Vec<usize>, DatasetError> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: usize = tok
                .parse()
                .map_err(|_| parse_err(file, i + 1, format!("bad label `{tok}`")))?;
            labels.push(v);
        }
    }
    Ok(labels)
}

pub fn format_labels(labels: &[usize]) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

/// Parses a mask file: one character per node from `{t, v, e, -}`, whitespace
/// ignored. Returns the split index sets in node order together with the
/// total number of node characters read.
pub fn parse_masks(text: &str, file: &str) -> Result<(SplitMasks, usize), DatasetError> {
    let mut masks = SplitMasks::default();
    let mut node = 0usize;
    for (i, line) in text.lines().enumerate() {
        for ch in line.chars() {
            if ch.is_whitespace() {
                continue;
            }
            match ch {
                't' => masks.train.push(node),
                'v' => masks.val.push(node),
                'e' => masks.test.push(node),
                '-' => {}
                other => {
                    return Err(parse_err(
                        file,
                        i + 1,
                        format!("bad mask char `{other}` (expected t, v, e or -)"),
                    ))
                }
            }
            node += 1;
        }
    }
    Ok((masks, node))
}

/// Serializes masks as one character per node.
pub fn format_masks(n_nodes: usize, masks: &SplitMasks) -> String {
    let mut chars = vec!['-'; n_nodes];
    for &i in &masks.train {
        chars[i] = 't';
    }
    for &i in &masks.val {
        chars[i] = 'v';
    }
    for &i in &masks.test {
        chars[i] = 'e';
    }
    let mut out: String = chars.into_iter().collect();
    out.push('\n');
    out
}

/// Paths of the four dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub masks: PathBuf,
}

impl DatasetPaths {
    /// Conventional file names inside one directory: `edges.txt`,
    /// `features.txt`, `labels.txt`, `masks.txt`.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            edges: dir.join("edges.txt"),
            features: dir.join("features.txt"),
            labels: dir.join("labels.txt"),
            masks: dir.join("masks.txt"),
        }
    }
}

/// A fully loaded, cross-validated dataset.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub graph: Graph,
    pub features: DenseMatrix<T>,
    pub labels: Vec<usize>,
    pub masks: SplitMasks,
    pub n_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Bundles parsed parts, checking cross-file consistency.
    pub fn assemble(
        graph: Graph,
        features: DenseMatrix<T>,
        n_classes: usize,
        labels: Vec<usize>,
        masks: SplitMasks,
    ) -> Result<Self, DatasetError> {
        let n = graph.n_nodes();
        if features.rows() != n {
            return Err(DatasetError::Inconsistent(format!(
                "graph has {n} nodes but features have {} rows",
                features.rows()
            )));
        }
        if labels.len() != n {
            return Err(DatasetError::Inconsistent(format!(
                "graph has {n} nodes but there are {} labels",
                labels.len()
            )));
        }
        if let Some((node, &label)) =
            labels.iter().enumerate().find(|&(_, &l)| l >= n_classes)
        {
            return Err(DatasetError::Inconsistent(format!(
                "label {label} of node {node} is outside [0, {n_classes})"
            )));
        }
        let max_masked = masks
            .train
            .iter()
            .chain(&masks.val)
            .chain(&masks.test)
            .copied()
            .max();
        if let Some(max) = max_masked {
            if max >= n {
                return Err(DatasetError::Inconsistent(format!(
                    "mask file covers node {max} but the graph has {n} nodes"
                )));
            }
        }
        Ok(Dataset { graph, features, labels, masks, n_classes })
    }

    /// Reads and validates the four files.
    pub fn load(paths: &DatasetPaths) -> Result<Self, DatasetError> {
        let read = |p: &Path| {
            fs::read_to_string(p)
                .map_err(|source| DatasetError::Io { path: p.display().to_string(), source })
        };
        let parsed = crate::graph::parse_edge_list(&read(&paths.edges)?)?;
        let fname = paths.features.display().to_string();
        let (features, n_classes) = parse_features::<T>(&read(&paths.features)?, &fname)?;
        let lname = paths.labels.display().to_string();
        let labels = parse_labels(&read(&paths.labels)?, &lname)?;
        let mname = paths.masks.display().to_string();
        let (masks, mask_nodes) = parse_masks(&read(&paths.masks)?, &mname)?;
        if mask_nodes != parsed.graph.n_nodes() {
            return Err(DatasetError::Inconsistent(format!(
                "mask file describes {mask_nodes} nodes but the graph has {}",
                parsed.graph.n_nodes()
            )));
        }
        Self::assemble(parsed.graph, features, n_classes, labels, masks)
    }

    /// Writes the dataset in the on-disk format.
    pub fn save(&self, paths: &DatasetPaths) -> Result<(), DatasetError> {
        let write = |p: &Path, content: &str| {
            fs::write(p, content)
                .map_err(|source| DatasetError::Io { path: p.display().to_string(), source })
        };
        write(&paths.edges, &crate::graph::write_edge_list(&self.graph))?;
        write(&paths.features, &format_features(&self.features, self.n_classes))?;
        write(&paths.labels, &format_labels(&self.labels))?;
        write(&paths.masks, &format_masks(self.graph.n_nodes(), &self.masks))?;
        Ok(())
    }
}
