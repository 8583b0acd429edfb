use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{LlcError, Result};
use crate::rng;

/// Disjoint, nonempty train / validation / test node sets, each sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl DataSplit {
    pub fn new(
        mut train: Vec<usize>,
        mut val: Vec<usize>,
        mut test: Vec<usize>,
        n_nodes: usize,
    ) -> Result<Self> {
        let mut seen = vec![false; n_nodes];
        for (name, set) in [("train", &mut train), ("val", &mut val), ("test", &mut test)] {
            if set.is_empty() {
                return Err(LlcError::arg(format!("{name} set is empty")));
            }
            set.sort_unstable();
            for &v in set.iter() {
                if v >= n_nodes {
                    return Err(LlcError::arg(format!("{name} node {v} out of range")));
                }
                if std::mem::replace(&mut seen[v], true) {
                    return Err(LlcError::arg(format!("node {v} appears in more than one set")));
                }
            }
        }
        Ok(Self { train, val, test })
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn val(&self) -> &[usize] {
        &self.val
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

/// Stratified random split.
///
/// Within each class the validation and test counts are the rounded ratio
/// targets (at least one each) and training takes the remainder, so every
/// per-class count is within one node of its exact share.
pub fn split_nodes(graph: &Graph, ratios: SplitRatios, seed: u64) -> Result<DataSplit> {
    let SplitRatios { train, val, test } = ratios;
    if !(train > 0.0 && val > 0.0 && test > 0.0) {
        return Err(LlcError::arg("split ratios must be positive"));
    }
    if (train + val + test - 1.0).abs() > 1e-9 {
        return Err(LlcError::arg(format!(
            "split ratios sum to {}, not 1",
            train + val + test
        )));
    }
    let mut by_class = vec![Vec::new(); graph.n_classes()];
    for (v, &l) in graph.labels().iter().enumerate() {
        by_class[l].push(v);
    }
    let mut rng = rng::stream(seed, rng::SPLIT);
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (class, mut nodes) in by_class.into_iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < 3 {
            return Err(LlcError::arg(format!(
                "class {class} has {} labeled nodes; stratified splitting needs at least 3",
                nodes.len()
            )));
        }
        nodes.shuffle(&mut rng);
        let n = nodes.len() as f64;
        let n_val = ((val * n).round() as usize).max(1);
        let n_test = ((test * n).round() as usize).max(1);
        let n_train = nodes.len() - n_val - n_test;
        tr.extend_from_slice(&nodes[..n_train]);
        va.extend_from_slice(&nodes[n_train..n_train + n_val]);
        te.extend_from_slice(&nodes[n_train + n_val..]);
    }
    DataSplit::new(tr, va, te, graph.n_nodes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn labeled(labels: Vec<usize>, classes: usize) -> Graph {
        let n = labels.len();
        Graph::new([], Tensor::zeros(n, 1), labels, classes).unwrap()
    }

    #[test]
    fn balanced_hundred() {
        let g = labeled((0..100).map(|i| i % 2).collect(), 2);
        let s = split_nodes(&g, SplitRatios::default(), 3).unwrap();
        assert_eq!((s.train().len(), s.val().len(), s.test().len()), (60, 20, 20));
        assert_eq!(s, split_nodes(&g, SplitRatios::default(), 3).unwrap());
        assert_ne!(s, split_nodes(&g, SplitRatios::default(), 4).unwrap());
    }

    #[test]
    fn bad_ratios_and_tiny_classes() {
        let g = labeled((0..100).map(|i| i % 2).collect(), 2);
        let r = SplitRatios {
            train: 0.5,
            val: 0.5,
            test: 0.1,
        };
        assert!(split_nodes(&g, r, 0).is_err());
        let tiny = labeled(vec![0, 0, 0, 1, 1], 2);
        assert!(split_nodes(&tiny, SplitRatios::default(), 0).is_err());
        let three = labeled(vec![0, 0, 0], 1);
        let s = split_nodes(&three, SplitRatios::default(), 0).unwrap();
        assert_eq!((s.train().len(), s.val().len(), s.test().len()), (1, 1, 1));
    }
}
