use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::FusionKind;
use crate::error::{LlcError, Result};
use crate::layers::GnnKind;

/// Inputs and fusion of one retained block.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockChoice {
    pub id: usize,
    pub predecessors: Vec<usize>,
    pub fusion: FusionKind,
}

/// A discrete design: which earlier blocks each block reads and how it
/// fuses them.
///
/// Block 0 is the input MLP, blocks `1..=K` are GNN blocks and block
/// `K + 1` is the output block. `blocks` lists the retained GNN blocks and
/// the output block in ascending id order; GNN blocks that were removed
/// appear in `pruned`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub gnn_kind: GnnKind,
    pub hidden_dim: usize,
    pub n_gnn_blocks: usize,
    pub blocks: Vec<BlockChoice>,
    pub pruned: Vec<usize>,
    pub fallback_used: bool,
}

/// Canonical order: lexicographic over the retained block list, which is
/// also the order of the serialized `blocks` array. `pruned` follows from
/// `blocks`, and the fallback flag only breaks ties.
impl Ord for Architecture {
    fn cmp(&self, other: &Self) -> Ordering {
        self.design_key()
            .cmp(&other.design_key())
            .then(self.fallback_used.cmp(&other.fallback_used))
    }
}

impl PartialOrd for Architecture {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Architecture {
    fn design_key(&self) -> (usize, &[BlockChoice], GnnKind, usize) {
        (self.n_gnn_blocks, &self.blocks, self.gnn_kind, self.hidden_dim)
    }

    /// Equality of the networks two architectures describe, regardless of
    /// whether either was reached through the fallback.
    pub fn same_design(&self, other: &Architecture) -> bool {
        self.design_key() == other.design_key()
    }

    pub fn output_id(&self) -> usize {
        self.n_gnn_blocks + 1
    }

    pub fn block(&self, id: usize) -> Option<&BlockChoice> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn output(&self) -> &BlockChoice {
        self.blocks.last().expect("architecture has an output block")
    }

    /// Resolves raw per-block choices into a valid architecture.
    ///
    /// `choices[j - 1]` holds the selected predecessors and fusion of block
    /// `j` for `j` in `1..=K + 1`. GNN blocks left without live inputs are
    /// removed (and dropped from their successors' inputs). If the output
    /// block then has no inputs it is connected to the highest-numbered
    /// live GNN block, or to block 0 if none is live, and `fallback_used`
    /// is set. Finally GNN blocks with no path to the output are removed.
    pub fn from_choices(
        gnn_kind: GnnKind,
        hidden_dim: usize,
        choices: &[(Vec<usize>, FusionKind)],
    ) -> Result<Self> {
        if choices.is_empty() {
            return Err(LlcError::arg("need at least the output block"));
        }
        let k = choices.len() - 1;
        let out = k + 1;
        for (j, (preds, _)) in choices.iter().enumerate() {
            if let Some(&bad) = preds.iter().find(|&&i| i > j) {
                return Err(LlcError::arg(format!(
                    "block {} cannot read from block {bad}",
                    j + 1
                )));
            }
        }
        let mut live = vec![false; out + 1];
        live[0] = true;
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); out + 1];
        for j in 1..=out {
            let mut p: Vec<usize> = choices[j - 1].0.iter().copied().filter(|&i| live[i]).collect();
            p.sort_unstable();
            p.dedup();
            live[j] = !p.is_empty();
            preds[j] = p;
        }
        let mut fallback_used = false;
        if preds[out].is_empty() {
            let target = (1..=k).rev().find(|&j| live[j]).unwrap_or(0);
            preds[out] = vec![target];
            live[out] = true;
            fallback_used = true;
        }
        let mut reaches = vec![false; out + 1];
        reaches[out] = true;
        for j in (1..=out).rev() {
            if reaches[j] {
                for &i in &preds[j] {
                    reaches[i] = true;
                }
            }
        }
        let mut blocks = Vec::new();
        let mut pruned = Vec::new();
        for j in 1..=out {
            if live[j] && reaches[j] {
                blocks.push(BlockChoice {
                    id: j,
                    predecessors: preds[j].clone(),
                    fusion: choices[j - 1].1,
                });
            } else {
                pruned.push(j);
            }
        }
        Ok(Self {
            gnn_kind,
            hidden_dim,
            n_gnn_blocks: k,
            blocks,
            pruned,
            fallback_used,
        })
    }

    /// Checks the structural invariants; the error names the offending
    /// field path.
    pub fn validate(&self) -> Result<()> {
        let out = self.output_id();
        let bad = |path: String, msg: &str| Err(LlcError::arg(format!("{path}: {msg}")));
        if self.hidden_dim == 0 {
            return bad("hidden_dim".into(), "must be positive");
        }
        if self.blocks.last().map(|b| b.id) != Some(out) {
            return bad("blocks".into(), &format!("last block must be the output block {out}"));
        }
        let mut retained = vec![false; out + 1];
        retained[0] = true;
        let mut prev = 0;
        for (bi, b) in self.blocks.iter().enumerate() {
            if b.id <= prev || b.id > out {
                return bad(format!("blocks[{bi}].id"), "ids must be ascending within 1..=K+1");
            }
            prev = b.id;
            if b.predecessors.is_empty() {
                return bad(format!("blocks[{bi}].predecessors"), "must not be empty");
            }
            let mut last = None;
            for (pi, &p) in b.predecessors.iter().enumerate() {
                let path = format!("blocks[{bi}].predecessors[{pi}]");
                if p >= b.id {
                    return bad(path, "predecessor must precede the block");
                }
                if !retained[p] {
                    return bad(path, "predecessor is not a retained block");
                }
                if last.is_some_and(|l| l >= p) {
                    return bad(path, "predecessors must be strictly ascending");
                }
                last = Some(p);
            }
            retained[b.id] = true;
        }
        let mut expected_pruned: Vec<usize> = (1..=self.n_gnn_blocks).filter(|&j| !retained[j]).collect();
        expected_pruned.sort_unstable();
        if self.pruned != expected_pruned {
            return bad("pruned".into(), "must list exactly the GNN blocks not in blocks");
        }
        let mut reaches = vec![false; out + 1];
        reaches[out] = true;
        for b in self.blocks.iter().rev() {
            if reaches[b.id] {
                for &p in &b.predecessors {
                    reaches[p] = true;
                }
            }
        }
        if let Some(b) = self.blocks.iter().find(|b| !reaches[b.id]) {
            return bad(format!("blocks (id {})", b.id), "block has no path to the output block");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture serializes")
    }

    /// Parses and validates; errors carry the JSON path of the failing field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let arch: Architecture = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            LlcError::arg(format!("{path}: {}", e.into_inner()))
        })?;
        arch.validate()?;
        Ok(arch)
    }
}
