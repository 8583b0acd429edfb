use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::autodiff::Tensor;
use crate::error::{LlcError, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub communities: usize,
    pub nodes_per_community: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

/// Stochastic block model with noisy one-hot community features.
///
/// Node `v` belongs to community `v / nodes_per_community`. Each pair is
/// joined with probability `p_in` inside a community and `p_out` across.
/// Features are the one-hot prototype of the community (width
/// `feature_dim`) plus i.i.d. Gaussian noise of scale `feature_noise`.
pub fn generate_sbm(p: &SbmParams) -> Result<Graph> {
    if !(0.0 <= p.p_out && p.p_out < p.p_in && p.p_in <= 1.0) {
        return Err(LlcError::arg(format!(
            "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
            p.p_in, p.p_out
        )));
    }
    if p.communities == 0 || p.nodes_per_community == 0 {
        return Err(LlcError::arg("communities and nodes_per_community must be positive"));
    }
    if p.feature_dim < p.communities {
        return Err(LlcError::arg(format!(
            "feature_dim {} smaller than community count {}",
            p.feature_dim, p.communities
        )));
    }
    if !(p.feature_noise >= 0.0 && p.feature_noise.is_finite()) {
        return Err(LlcError::arg("feature_noise must be finite and nonnegative"));
    }
    let n = p.communities * p.nodes_per_community;
    let labels: Vec<usize> = (0..n).map(|v| v / p.nodes_per_community).collect();
    let mut rng = rng::stream(p.seed, rng::DATA);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let prob = if labels[u] == labels[v] { p.p_in } else { p.p_out };
            if rng.random::<f64>() < prob {
                edges.push((u, v));
            }
        }
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Tensor::zeros(n, p.feature_dim);
    for v in 0..n {
        for c in 0..p.feature_dim {
            let proto = if c == labels[v] { 1.0 } else { 0.0 };
            let x = if p.feature_noise > 0.0 {
                proto + p.feature_noise * noise.sample(&mut rng)
            } else {
                proto
            };
            features.set(v, c, x);
        }
    }
    Graph::new(edges, features, labels, p.communities)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SbmParams {
        SbmParams {
            communities: 2,
            nodes_per_community: 3,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 2,
            feature_noise: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn two_disjoint_triangles() {
        let g = generate_sbm(&params()).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        assert_eq!(g.features().row_slice(4), &[0.0, 1.0]);
        assert_eq!(g.labels(), &[0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn seeded_and_validated() {
        let p = SbmParams {
            nodes_per_community: 20,
            p_in: 0.3,
            p_out: 0.05,
            feature_noise: 0.5,
            ..params()
        };
        assert_eq!(generate_sbm(&p).unwrap(), generate_sbm(&p).unwrap());
        assert!(generate_sbm(&SbmParams { p_out: 0.5, p_in: 0.5, ..p }).is_err());
        assert!(generate_sbm(&SbmParams { p_in: 1.5, ..p }).is_err());
        assert!(generate_sbm(&SbmParams { feature_dim: 1, ..p }).is_err());
    }
}
