//! Node-classification graphs: construction, file I/O, splitting and a
//! stochastic-block-model generator.

mod io;
mod sbm;
mod split;

use std::sync::Arc;

pub use io::{load_dataset, write_dataset, write_splits, EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLITS_FILE};
pub use sbm::{generate_sbm, SbmParams};
pub use split::{split_nodes, DataSplit, SplitRatios};

use crate::autodiff::{Csr, Tensor};
use crate::error::{LlcError, Result};

/// Undirected graph with node features and class labels.
///
/// Edges are stored canonically as `(u, v)` with `u < v`, sorted and
/// duplicate-free. Every neighborhood contains the node itself.
#[derive(Clone, Debug)]
pub struct Graph {
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
    neighborhoods: Vec<Vec<usize>>,
    with_self: Arc<Csr>,
    neighbor_mean: Arc<Csr>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.edges == other.edges
            && self.features == other.features
            && self.labels == other.labels
            && self.n_classes == other.n_classes
    }
}

impl Graph {
    /// Builds a graph; self-loops in `edges` are dropped and duplicates
    /// (in either direction) are collapsed.
    pub fn new(
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(LlcError::arg(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(LlcError::arg(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        let mut canon = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(LlcError::arg(format!(
                    "edge ({u}, {v}) outside [0, {n})"
                )));
            }
            if u != v {
                canon.push((u.min(v), u.max(v)));
            }
        }
        canon.sort_unstable();
        canon.dedup();

        let mut neighborhoods: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
        for &(u, v) in &canon {
            neighborhoods[u].push(v);
            neighborhoods[v].push(u);
        }
        for nb in &mut neighborhoods {
            nb.sort_unstable();
        }
        let with_self = Csr::from_rows(
            n,
            &neighborhoods
                .iter()
                .map(|nb| nb.iter().map(|&u| (u, 1.0)).collect())
                .collect::<Vec<_>>(),
        );
        let neighbor_mean = Csr::from_rows(
            n,
            &neighborhoods
                .iter()
                .enumerate()
                .map(|(v, nb)| {
                    let others: Vec<usize> = nb.iter().copied().filter(|&u| u != v).collect();
                    let w = 1.0 / others.len().max(1) as f64;
                    others.into_iter().map(|u| (u, w)).collect()
                })
                .collect::<Vec<_>>(),
        );
        Ok(Self {
            edges: canon,
            features,
            labels,
            n_classes,
            neighborhoods,
            with_self: Arc::new(with_self),
            neighbor_mean: Arc::new(neighbor_mean),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sorted self-inclusive first-order neighborhood of `v`.
    pub fn neighborhood(&self, v: usize) -> &[usize] {
        &self.neighborhoods[v]
    }

    /// Adjacency with self-loops, rows are destination nodes.
    pub fn adjacency_with_self(&self) -> &Arc<Csr> {
        &self.with_self
    }

    /// Row-stochastic operator averaging each node's neighbors, excluding
    /// itself. Rows of isolated nodes are empty.
    pub fn neighbor_mean(&self) -> &Arc<Csr> {
        &self.neighbor_mean
    }

    /// Copy with every feature row divided by its L1 norm; zero rows stay.
    pub fn row_normalized(&self) -> Graph {
        let mut features = self.features.clone();
        let d = features.cols();
        for row in features.data_mut().chunks_mut(d) {
            let norm: f64 = row.iter().map(|x| x.abs()).sum();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Graph {
            features,
            ..self.clone()
        }
    }

    /// Count of the most frequent label divided by node count.
    pub fn majority_fraction(&self, nodes: &[usize]) -> f64 {
        let mut counts = vec![0usize; self.n_classes];
        for &v in nodes {
            counts[self.labels[v]] += 1;
        }
        counts.into_iter().max().unwrap_or(0) as f64 / nodes.len().max(1) as f64
    }
}
