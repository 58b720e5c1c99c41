//! Bundle directory format:
//!
//! - `meta.json`: `{"num_nodes": int, "feat_dim": int, "num_classes": int}`; other keys ignored.
//! - `edges.tsv`: one undirected edge per line as `u<TAB>v`, 0-indexed, `u != v`.
//! - `features.f32`: little-endian f32, row-major, `num_nodes * feat_dim` values, no header.
//! - `labels.txt`: one integer per node, in `[0, num_classes)` or `-1` for unlabeled.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::GraphDataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const META_FILE: &str = "meta.json";
pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.f32";
pub const LABELS_FILE: &str = "labels.txt";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    num_nodes: usize,
    feat_dim: usize,
    num_classes: usize,
}

fn existing(dir: &Path, file: &str) -> Result<PathBuf> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(Error::MissingFile { path });
    }
    Ok(path)
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Reads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    let meta_path = existing(dir, META_FILE)?;
    let edges_path = existing(dir, EDGES_FILE)?;
    let features_path = existing(dir, FEATURES_FILE)?;
    let labels_path = existing(dir, LABELS_FILE)?;

    let meta: Meta = serde_json::from_str(&fs::read_to_string(&meta_path)?).map_err(|source| {
        Error::Meta {
            path: meta_path.clone(),
            source,
        }
    })?;
    let n = meta.num_nodes;

    let edges = read_edges(&edges_path, n)?;
    let features = read_features(&features_path, n, meta.feat_dim)?;
    let labels = read_labels(&labels_path, n, meta.num_classes)?;

    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    GraphDataset::from_edges(name, &edges, features, labels, meta.num_classes)
}

fn read_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (idx, line) in text.split_terminator('\n').enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            return Err(malformed(path, lineno, "blank line"));
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(malformed(path, lineno, "expected `u<TAB>v`"));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| malformed(path, lineno, format!("`{s}` is not a node index")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        for index in [u, v] {
            if index >= n {
                return Err(Error::IndexOutOfRange {
                    path: path.to_path_buf(),
                    line: lineno,
                    index,
                    num_nodes: n,
                });
            }
        }
        if u == v {
            return Err(malformed(path, lineno, format!("self-loop on node {u}")));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn read_features(path: &Path, n: usize, d: usize) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    let expected = (n * d * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::FeatureByteCount {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut data = Vec::with_capacity(n * d);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature {
                path: path.to_path_buf(),
                offset: (i * 4) as u64,
            });
        }
        data.push(v);
    }
    DenseMatrix::from_vec(n, d, data)
}

fn read_labels(path: &Path, n: usize, num_classes: usize) -> Result<Vec<Option<usize>>> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::with_capacity(n);
    for (idx, line) in text.split_terminator('\n').enumerate() {
        let lineno = idx + 1;
        if labels.len() == n {
            return Err(malformed(path, lineno, format!("more than {n} labels")));
        }
        let value: i64 = line
            .trim_end_matches('\r')
            .parse()
            .map_err(|_| malformed(path, lineno, format!("`{line}` is not an integer")))?;
        match value {
            -1 => labels.push(None),
            c if c >= 0 && (c as usize) < num_classes => labels.push(Some(c as usize)),
            c => {
                return Err(malformed(
                    path,
                    lineno,
                    format!("label {c} outside [0, {num_classes}) and not -1"),
                ))
            }
        }
    }
    if labels.len() != n {
        return Err(malformed(
            path,
            labels.len() + 1,
            format!("expected {n} labels, found {}", labels.len()),
        ));
    }
    Ok(labels)
}

/// Writes `dataset` in the bundle format, creating `dir` if needed.
pub fn save_bundle(dataset: &GraphDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let meta = Meta {
        num_nodes: dataset.num_nodes(),
        feat_dim: dataset.feat_dim(),
        num_classes: dataset.num_classes,
    };
    fs::write(dir.join(META_FILE), serde_json::to_string(&meta)?)?;

    let mut edges = String::new();
    for (u, v) in dataset.edge_list() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    fs::write(dir.join(EDGES_FILE), edges)?;

    let mut bytes = Vec::with_capacity(dataset.features.data().len() * 4);
    for v in dataset.features.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(FEATURES_FILE), bytes)?;

    let mut out = fs::File::create(dir.join(LABELS_FILE))?;
    let mut labels = String::with_capacity(dataset.labels.len() * 3);
    for l in &dataset.labels {
        match l {
            Some(c) => labels.push_str(&format!("{c}\n")),
            None => labels.push_str("-1\n"),
        }
    }
    out.write_all(labels.as_bytes())?;
    Ok(())
}
