use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataSplit, Graph};
use crate::autodiff::Tensor;
use crate::error::{LlcError, Result};

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| LlcError::io(path, e))
}

fn format_err(file: &str, line: usize, message: impl Into<String>) -> LlcError {
    LlcError::Format {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_features(text: &str) -> Result<Tensor> {
    let mut width = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let start = data.len();
        for field in line.split(',') {
            let x: f64 = field.trim().parse().map_err(|_| {
                format_err(FEATURES_FILE, i + 1, format!("'{}' is not a number", field.trim()))
            })?;
            data.push(x);
        }
        let w = data.len() - start;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(format_err(
                    FEATURES_FILE,
                    i + 1,
                    format!("row has {w} values, expected {expected}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = width.ok_or_else(|| format_err(FEATURES_FILE, 0, "no feature rows"))?;
    Tensor::new(rows, cols, data)
}

fn parse_labels(text: &str, n: usize) -> Result<Vec<usize>> {
    let mut labels = Vec::with_capacity(n);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let label: i64 = line
            .parse()
            .map_err(|_| format_err(LABELS_FILE, i + 1, format!("'{line}' is not an integer")))?;
        if label < 0 {
            return Err(format_err(LABELS_FILE, i + 1, format!("label {label} out of range")));
        }
        labels.push(label as usize);
    }
    if labels.len() != n {
        return Err(format_err(
            LABELS_FILE,
            labels.len(),
            format!("{} labels for {n} feature rows", labels.len()),
        ));
    }
    Ok(labels)
}

fn parse_edges(text: &str, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format_err(EDGES_FILE, i + 1, "expected 'src<TAB>dst'"));
        };
        let parse = |s: &str| -> Result<usize> {
            let v: usize = s
                .trim()
                .parse()
                .map_err(|_| format_err(EDGES_FILE, i + 1, format!("'{s}' is not a node id")))?;
            if v >= n {
                return Err(format_err(EDGES_FILE, i + 1, format!("node {v} out of range [0, {n})")));
            }
            Ok(v)
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

/// Reads `edges.tsv`, `features.csv`, `labels.csv` and, if present,
/// `splits.json` from `dir`. The class count is one more than the largest
/// label.
pub fn load_dataset(dir: &Path) -> Result<(Graph, Option<DataSplit>)> {
    let features = parse_features(&read(dir, FEATURES_FILE)?)?;
    let n = features.rows();
    let labels = parse_labels(&read(dir, LABELS_FILE)?, n)?;
    let edges = parse_edges(&read(dir, EDGES_FILE)?, n)?;
    let n_classes = labels.iter().max().map_or(1, |m| m + 1);
    let graph = Graph::new(edges, features, labels, n_classes)?;

    let split_path = dir.join(SPLITS_FILE);
    let split = if split_path.exists() {
        let text = read(dir, SPLITS_FILE)?;
        let file: SplitFile = serde_json::from_str(&text)
            .map_err(|e| format_err(SPLITS_FILE, e.line(), e.to_string()))?;
        Some(DataSplit::new(file.train, file.val, file.test, n).map_err(|e| {
            format_err(SPLITS_FILE, 0, e.to_string())
        })?)
    } else {
        None
    };
    Ok((graph, split))
}

/// Writes the three dataset files. Values use the shortest representation
/// that parses back to the same `f64`, so loading reproduces the graph.
pub fn write_dataset(graph: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LlcError::io(dir, e))?;
    let mut edges = String::from("# src\tdst\n");
    for (u, v) in graph.edges() {
        writeln!(edges, "{u}\t{v}").unwrap();
    }
    let mut features = String::new();
    for r in 0..graph.n_nodes() {
        let row = graph.features().row_slice(r);
        for (k, x) in row.iter().enumerate() {
            if k > 0 {
                features.push(',');
            }
            write!(features, "{x:?}").unwrap();
        }
        features.push('\n');
    }
    let mut labels = String::new();
    for l in graph.labels() {
        writeln!(labels, "{l}").unwrap();
    }
    for (name, body) in [
        (EDGES_FILE, edges),
        (FEATURES_FILE, features),
        (LABELS_FILE, labels),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| LlcError::io(path, e))?;
    }
    Ok(())
}

pub fn write_splits(split: &DataSplit, dir: &Path) -> Result<()> {
    let file = SplitFile {
        train: split.train().to_vec(),
        val: split.val().to_vec(),
        test: split.test().to_vec(),
    };
    let path = dir.join(SPLITS_FILE);
    let body = serde_json::to_string(&file).expect("split serializes");
    fs::write(&path, body).map_err(|e| LlcError::io(path, e))
}
