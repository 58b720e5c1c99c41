//! Graph domains: the dataset type, the on-disk bundle format, source splits,
//! and a synthetic generator for shifted graph pairs.

mod bundle;
mod split;
mod synth;

pub use bundle::{load_bundle, save_bundle};
pub use split::{split_source, SplitMasks};
pub use synth::{generate_shifted_pair, ShiftConfig};

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, DenseMatrix};

/// One attributed graph domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    /// Square, symmetric, binary adjacency without self-loops.
    pub adjacency: CsrMatrix,
    pub features: DenseMatrix,
    /// `None` marks an unlabeled node.
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
}

impl GraphDataset {
    /// Builds and validates a dataset from an undirected edge list. Edges are
    /// symmetrized and deduplicated; self-loops are rejected.
    pub fn from_edges(
        name: impl Into<String>,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let name = name.into();
        let n = features.rows();
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u == v {
                return Err(Error::InvalidDataset {
                    name,
                    reason: format!("self-loop on node {u}"),
                });
            }
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        let summed = CsrMatrix::from_triplets(n, n, triplets)?;
        // Duplicate edges sum above one; clamp back to a binary pattern.
        let adjacency = CsrMatrix::from_triplets(n, n, summed.iter().map(|(i, j, _)| (i, j, 1.0)))?;
        let ds = Self {
            name,
            adjacency,
            features,
            labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Undirected edges with `u < v`, in row-major order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .filter(|&(i, j, _)| i < j)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidDataset {
                name: self.name.clone(),
                reason,
            })
        };
        let n = self.features.rows();
        if self.adjacency.shape() != (n, n) {
            return fail(format!(
                "adjacency is {:?} but there are {n} feature rows",
                self.adjacency.shape()
            ));
        }
        if self.labels.len() != n {
            return fail(format!("{} labels for {n} nodes", self.labels.len()));
        }
        if let Some((i, l)) = self
            .labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c >= self.num_classes).map(|c| (i, c)))
        {
            return fail(format!("label {l} of node {i} is not below {}", self.num_classes));
        }
        if !self.adjacency.has_zero_diagonal() {
            return fail("adjacency stores a self-loop".into());
        }
        if !self.adjacency.is_symmetric(0.0) {
            return fail("adjacency is not symmetric".into());
        }
        if self.adjacency.values().iter().any(|&v| v != 1.0) {
            return fail("adjacency is not binary".into());
        }
        if !self.features.is_finite() {
            return fail("features contain non-finite values".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_edges_symmetrizes_and_dedups() {
        let ds = GraphDataset::from_edges(
            "g",
            &[(0, 1), (1, 0), (1, 2)],
            DenseMatrix::zeros(3, 1),
            vec![Some(0), None, Some(1)],
            2,
        )
        .unwrap();
        assert_eq!(ds.adjacency.nnz(), 4);
        assert_eq!(ds.edge_list(), vec![(0, 1), (1, 2)]);
        assert!(ds.adjacency.is_symmetric(0.0));
    }

    #[test]
    fn rejects_self_loops_and_bad_labels() {
        let f = DenseMatrix::zeros(2, 1);
        assert!(GraphDataset::from_edges("g", &[(1, 1)], f.clone(), vec![None; 2], 1).is_err());
        assert!(GraphDataset::from_edges("g", &[], f, vec![Some(3), None], 2).is_err());
    }
}
