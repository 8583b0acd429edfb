use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{LlcError, Result};
use crate::graph::{DataSplit, Graph};
use crate::parallel::{self, Execution};
use crate::search::{train_architecture, SearchConfig};
use crate::supernet::{Architecture, FusionKind, SupernetSpec};

pub const DEFAULT_CAP: usize = 5000;

/// Size of the raw choice space: every block `j` picks a nonempty subset of
/// `{0..j-1}` and one fusion, `prod_j (2^j - 1) |F|`. Saturates at
/// `u128::MAX`.
pub fn raw_count(n_gnn_blocks: usize, n_fusions: usize) -> u128 {
    (1..=n_gnn_blocks + 1).fold(1u128, |acc, j| {
        let subsets = if j >= 128 { u128::MAX } else { (1u128 << j) - 1 };
        acc.saturating_mul(subsets).saturating_mul(n_fusions as u128)
    })
}

/// Every distinct architecture of the space, in canonical order.
///
/// Choices that coincide after pruning are merged. Enumeration stops with
/// an error as soon as more than `cap` distinct architectures turn up.
pub fn enumerate_architectures(spec: &SupernetSpec, cap: usize) -> Result<Vec<Architecture>> {
    let fusions: Vec<FusionKind> = {
        let mut f = spec.fusion_subset.clone();
        f.sort_unstable();
        f.dedup();
        f
    };
    if fusions.is_empty() {
        return Err(LlcError::arg("fusion subset must not be empty"));
    }
    let blocks = spec.n_gnn_blocks + 1;
    let raw = raw_count(spec.n_gnn_blocks, fusions.len());
    let mut seen = BTreeSet::new();
    let mut choices: Vec<(Vec<usize>, FusionKind)> = Vec::with_capacity(blocks);
    let mut visit = |choices: &[(Vec<usize>, FusionKind)]| -> Result<()> {
        let arch = Architecture::from_choices(spec.gnn_kind, spec.hidden_dim, choices)?;
        seen.insert(arch);
        if seen.len() > cap {
            return Err(LlcError::TooManyArchitectures { cap, raw });
        }
        Ok(())
    };
    recurse(1, blocks, &fusions, &mut choices, &mut visit)?;
    Ok(seen.into_iter().collect())
}

fn recurse(
    j: usize,
    blocks: usize,
    fusions: &[FusionKind],
    choices: &mut Vec<(Vec<usize>, FusionKind)>,
    visit: &mut impl FnMut(&[(Vec<usize>, FusionKind)]) -> Result<()>,
) -> Result<()> {
    if j > blocks {
        return visit(choices);
    }
    for mask in 1u64..(1u64 << j) {
        let preds: Vec<usize> = (0..j).filter(|&i| mask >> i & 1 == 1).collect();
        for &f in fusions {
            choices.push((preds.clone(), f));
            let r = recurse(j + 1, blocks, fusions, choices, visit);
            choices.pop();
            r?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub architecture: Architecture,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Best validation accuracy first; equal scores keep canonical order.
    pub ranking: Vec<OracleEntry>,
    pub total: usize,
}

impl OracleResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("oracle result serializes")
    }

    pub fn position(&self, arch: &Architecture) -> Option<usize> {
        self.ranking.iter().position(|e| e.architecture.same_design(arch))
    }

    /// Validation accuracy an architecture needs to count as within the
    /// best `fraction` of the ranking: the score at the last position that
    /// still lies inside that fraction.
    pub fn top_threshold(&self, fraction: f64) -> f64 {
        let n = self.ranking.len();
        let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        self.ranking[k - 1].val_acc
    }

    /// Whether `arch` scores at least the top-`fraction` threshold.
    pub fn in_top(&self, arch: &Architecture, fraction: f64) -> bool {
        self.position(arch)
            .is_some_and(|p| self.ranking[p].val_acc >= self.top_threshold(fraction))
    }
}

/// Trains every architecture of the space with the same seed and ranks
/// them by validation accuracy.
pub fn oracle_search(
    spec: &SupernetSpec,
    graph: &Graph,
    split: &DataSplit,
    cfg: &SearchConfig,
    cap: usize,
    exec: Execution,
) -> Result<OracleResult> {
    let archs = enumerate_architectures(spec, cap)?;
    let cfg = SearchConfig {
        gat_heads: spec.gat_heads,
        ..cfg.clone()
    };
    let scored = parallel::map(exec, &archs, |arch| {
        train_architecture(arch, graph, split, &cfg).map(|m| OracleEntry {
            architecture: arch.clone(),
            val_acc: m.metrics.best_val_acc,
            test_acc: m.metrics.test_acc,
        })
    });
    let mut ranking = scored.into_iter().collect::<Result<Vec<_>>>()?;
    ranking.sort_by(|a, b| b.val_acc.total_cmp(&a.val_acc));
    Ok(OracleResult {
        total: ranking.len(),
        ranking,
    })
}
