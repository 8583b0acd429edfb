use std::fmt;
use std::str::FromStr;

use crate::error::{LlcError, Result};
use crate::supernet::{Architecture, FusionKind, SupernetSpec};

/// Fixed-connection reference designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Baseline {
    /// Plain chain of `L` GNN blocks.
    Stack(usize),
    /// Each block sums the previous two.
    ResGcn(usize),
    /// Each block concatenates every earlier block.
    DenseGcn(usize),
    /// Chain, with the output block taking the max over all GNN blocks.
    JkNet(usize),
}

impl Baseline {
    pub const STANDARD: [Baseline; 5] = [
        Baseline::Stack(2),
        Baseline::Stack(4),
        Baseline::ResGcn(4),
        Baseline::DenseGcn(4),
        Baseline::JkNet(4),
    ];

    pub fn depth(self) -> usize {
        match self {
            Baseline::Stack(l) | Baseline::ResGcn(l) | Baseline::DenseGcn(l) | Baseline::JkNet(l) => l,
        }
    }

    /// Builds the design inside a space of `spec.n_gnn_blocks` blocks;
    /// blocks beyond the baseline depth end up pruned.
    pub fn architecture(self, spec: &SupernetSpec) -> Result<Architecture> {
        let l = self.depth();
        let k = spec.n_gnn_blocks;
        if l == 0 || l > k {
            return Err(LlcError::arg(format!(
                "baseline {self} needs 1..={k} GNN blocks, has depth {l}"
            )));
        }
        let mut choices = vec![(Vec::new(), FusionKind::Sum); k + 1];
        for j in 1..=l {
            choices[j - 1] = match self {
                Baseline::Stack(_) | Baseline::JkNet(_) => (vec![j - 1], FusionKind::Sum),
                Baseline::ResGcn(_) => ((j.saturating_sub(2)..j).collect(), FusionKind::Sum),
                Baseline::DenseGcn(_) => ((0..j).collect(), FusionKind::Concat),
            };
        }
        choices[k] = match self {
            Baseline::Stack(_) => (vec![l], FusionKind::Sum),
            Baseline::ResGcn(_) => (vec![l - 1, l], FusionKind::Sum),
            Baseline::DenseGcn(_) => ((0..=l).collect(), FusionKind::Concat),
            Baseline::JkNet(_) => ((1..=l).collect(), FusionKind::Max),
        };
        Architecture::from_choices(spec.gnn_kind, spec.hidden_dim, &choices)
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Baseline::Stack(l) => write!(f, "stack{l}"),
            Baseline::ResGcn(l) => write!(f, "resgcn{l}"),
            Baseline::DenseGcn(l) => write!(f, "densegcn{l}"),
            Baseline::JkNet(l) => write!(f, "jknet{l}"),
        }
    }
}

impl FromStr for Baseline {
    type Err = LlcError;

    /// Accepts `stack`, `resgcn`, `densegcn` or `jknet` followed by a depth.
    fn from_str(s: &str) -> Result<Self> {
        let split = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        let (name, depth) = s.split_at(split);
        let unknown = || LlcError::arg(format!("unknown baseline '{s}'"));
        let depth: usize = depth.parse().map_err(|_| unknown())?;
        match name.to_ascii_lowercase().as_str() {
            "stack" => Ok(Baseline::Stack(depth)),
            "resgcn" => Ok(Baseline::ResGcn(depth)),
            "densegcn" => Ok(Baseline::DenseGcn(depth)),
            "jknet" => Ok(Baseline::JkNet(depth)),
            _ => Err(unknown()),
        }
    }
}

/// Looks up a baseline by name and builds it for `spec`.
pub fn build_baseline(name: &str, spec: &SupernetSpec) -> Result<Architecture> {
    name.parse::<Baseline>()?.architecture(spec)
}
