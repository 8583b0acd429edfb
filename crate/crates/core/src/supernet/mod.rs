//! The relaxed search space: input block, `K` GNN blocks and an output
//! block, with a learnable ZERO/IDENTITY gate on every forward edge and a
//! learnable mixture over six fusion operations in every non-input block.

mod architecture;
mod fusion;
mod gumbel;
mod network;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use architecture::{Architecture, BlockChoice};
pub use fusion::{fusion_apply, fusion_mix, Coef, FusionKind, FusionParams};
pub use gumbel::{argmax, gumbel_noise, gumbel_softmax, GumbelConfig, GumbelMode};
pub use network::{
    architecture_wiring, run_network, BlockWiring, DerivedNetwork, Dropout, NetworkOutput,
    OperationWeights,
};

use crate::autodiff::{Axis, Group, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{LlcError, Result};
use crate::graph::Graph;
use crate::layers::GnnKind;
use crate::rng;

/// Column of the IDENTITY logit in an edge gate; ZERO is column 0.
pub const IDENTITY: usize = 1;
pub const ZERO: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetSpec {
    pub n_gnn_blocks: usize,
    pub hidden_dim: usize,
    pub gnn_kind: GnnKind,
    pub input_dim: usize,
    pub n_classes: usize,
    /// Fusion candidates in play, a subset of [`FusionKind::ALL`].
    pub fusion_subset: Vec<FusionKind>,
    pub gat_heads: usize,
}

impl SupernetSpec {
    pub fn new(
        n_gnn_blocks: usize,
        hidden_dim: usize,
        gnn_kind: GnnKind,
        input_dim: usize,
        n_classes: usize,
    ) -> Self {
        Self {
            n_gnn_blocks,
            hidden_dim,
            gnn_kind,
            input_dim,
            n_classes,
            fusion_subset: FusionKind::ALL.to_vec(),
            gat_heads: 1,
        }
    }

    pub fn for_architecture(arch: &Architecture, graph: &Graph) -> Self {
        Self::new(
            arch.n_gnn_blocks,
            arch.hidden_dim,
            arch.gnn_kind,
            graph.feature_dim(),
            graph.n_classes(),
        )
    }

    pub fn with_fusions(mut self, subset: &[FusionKind]) -> Self {
        let mut s = subset.to_vec();
        s.sort_unstable();
        s.dedup();
        self.fusion_subset = s;
        self
    }

    pub fn output_id(&self) -> usize {
        self.n_gnn_blocks + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.input_dim == 0 || self.n_classes == 0 {
            return Err(LlcError::arg("dimensions and class count must be positive"));
        }
        if self.fusion_subset.is_empty() {
            return Err(LlcError::arg("fusion subset must not be empty"));
        }
        if self.gat_heads == 0 {
            return Err(LlcError::arg("GAT needs at least one head"));
        }
        Ok(())
    }
}

/// Over-parameterized network holding operation weights `w` and
/// architecture logits `alpha` in one store (tagged by [`Group`]).
#[derive(Clone, Debug)]
pub struct Supernet {
    pub spec: SupernetSpec,
    pub weights: OperationWeights,
    /// `gates[j - 1][i]`: `1 x 2` logits `[ZERO, IDENTITY]` for edge `i -> j`.
    pub gates: Vec<Vec<ParamId>>,
    /// `selectors[j - 1]`: `1 x 6` fusion logits of block `j`.
    pub selectors: Vec<ParamId>,
}

impl Supernet {
    /// Fresh supernet; weights come from the seed's init stream and every
    /// architecture logit starts at zero.
    pub fn new(spec: SupernetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, rng::INIT);
        let mut store = ParamStore::new();
        let layout = OperationWeights::init_into(&mut store, &spec, &mut rng);
        let out = spec.output_id();
        let gates = (1..=out)
            .map(|j| {
                (0..j)
                    .map(|i| store.add(format!("gate.{i}->{j}"), Group::Arch, Tensor::zeros(1, 2)))
                    .collect()
            })
            .collect();
        let selectors = (1..=out)
            .map(|j| store.add(format!("fusion_select.{j}"), Group::Arch, Tensor::zeros(1, FusionKind::ALL.len())))
            .collect();
        Ok(Self {
            spec,
            weights: layout.into_owned(store),
            gates,
            selectors,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.weights.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.weights.store
    }

    pub fn gate(&self, from: usize, to: usize) -> &Tensor {
        self.store().value(self.gates[to - 1][from])
    }

    pub fn set_gate(&mut self, from: usize, to: usize, zero: f64, identity: f64) {
        let id = self.gates[to - 1][from];
        self.store_mut().value_mut(id).data_mut().copy_from_slice(&[zero, identity]);
    }

    pub fn selector(&self, block: usize) -> &Tensor {
        self.store().value(self.selectors[block - 1])
    }

    pub fn set_selector(&mut self, block: usize, logits: &[f64]) {
        let id = self.selectors[block - 1];
        self.store_mut().value_mut(id).data_mut().copy_from_slice(logits);
    }

    /// Sets every logit to `+margin` / `-margin` so that argmax evaluation
    /// reproduces `arch` exactly.
    pub fn embed(&mut self, arch: &Architecture, margin: f64) -> Result<()> {
        if arch.n_gnn_blocks != self.spec.n_gnn_blocks {
            return Err(LlcError::arg("architecture depth differs from the supernet"));
        }
        for j in 1..=self.spec.output_id() {
            let block = arch.block(j);
            for i in 0..j {
                let on = block.is_some_and(|b| b.predecessors.contains(&i));
                if on {
                    self.set_gate(i, j, -margin, margin);
                } else {
                    self.set_gate(i, j, margin, -margin);
                }
            }
            let chosen = block.map_or(FusionKind::Sum, |b| b.fusion);
            let logits: Vec<f64> = FusionKind::ALL
                .iter()
                .map(|&f| if f == chosen { margin } else { -margin })
                .collect();
            self.set_selector(j, &logits);
        }
        Ok(())
    }

    /// Gumbel-Softmax coefficients over the candidates in `columns` of the
    /// logits `id`; zero-weight candidates are omitted from the result.
    fn coefficients(
        &self,
        tape: &mut Tape,
        id: ParamId,
        columns: &[usize],
        cfg: &GumbelConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<(usize, Coef)>> {
        match cfg.mode {
            GumbelMode::Argmax => {
                let logits = self.store().value(id).data();
                let sub: Vec<f64> = columns.iter().map(|&c| logits[c]).collect();
                Ok(vec![(columns[argmax(&sub)], Coef::One)])
            }
            GumbelMode::Sample => {
                let alpha = tape.param(self.store(), id)?;
                let width = tape.shape(alpha)[1];
                let alpha = if columns.len() == width {
                    alpha
                } else {
                    let parts = columns
                        .iter()
                        .map(|&c| tape.slice(alpha, Axis::Cols, c, 1))
                        .collect::<Result<Vec<_>>>()?;
                    tape.concat(&parts, Axis::Cols)?
                };
                let weights = gumbel_softmax(tape, alpha, cfg, rng)?;
                columns
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| Ok((c, Coef::Weight(tape.slice(weights, Axis::Cols, k, 1)?))))
                    .collect()
            }
        }
    }

    /// Relaxed wiring for one forward pass. In sample mode fresh noise is
    /// drawn per gate and per selector, in ascending block order with the
    /// gates of a block before its selector.
    pub fn wiring(
        &self,
        tape: &mut Tape,
        cfg: &GumbelConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<BlockWiring>> {
        cfg.validate()?;
        let fusion_columns: Vec<usize> = self.spec.fusion_subset.iter().map(|f| f.index()).collect();
        let mut wiring = Vec::with_capacity(self.spec.output_id());
        for j in 1..=self.spec.output_id() {
            let mut inputs = Vec::with_capacity(j);
            for i in 0..j {
                let coefs = self.coefficients(tape, self.gates[j - 1][i], &[ZERO, IDENTITY], cfg, rng)?;
                if let Some(&(_, c)) = coefs.iter().find(|(col, _)| *col == IDENTITY) {
                    inputs.push((i, c));
                }
            }
            let fusions = self
                .coefficients(tape, self.selectors[j - 1], &fusion_columns, cfg, rng)?
                .into_iter()
                .map(|(col, c)| (FusionKind::ALL[col], c))
                .collect();
            wiring.push(BlockWiring { inputs, fusions });
        }
        Ok(wiring)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &Graph,
        cfg: &GumbelConfig,
        rng: &mut impl Rng,
        dropout: Option<Dropout<'_>>,
    ) -> Result<NetworkOutput> {
        if graph.feature_dim() != self.spec.input_dim {
            return Err(LlcError::Shape {
                op: "supernet_forward",
                left: [graph.n_nodes(), graph.feature_dim()],
                right: [graph.n_nodes(), self.spec.input_dim],
            });
        }
        let wiring = self.wiring(tape, cfg, rng)?;
        run_network(tape, &self.weights, graph, &wiring, dropout)
    }

    /// Keeps IDENTITY on an edge iff its logit is strictly larger than
    /// ZERO's, picks the largest fusion logit (lowest index on ties) within
    /// the fusion subset, then prunes.
    pub fn derive(&self) -> Architecture {
        let choices: Vec<(Vec<usize>, FusionKind)> = (1..=self.spec.output_id())
            .map(|j| {
                let preds = (0..j)
                    .filter(|&i| {
                        let g = self.gate(i, j).data();
                        g[IDENTITY] > g[ZERO]
                    })
                    .collect();
                let logits = self.selector(j).data();
                let sub: Vec<f64> = self.spec.fusion_subset.iter().map(|f| logits[f.index()]).collect();
                (preds, self.spec.fusion_subset[argmax(&sub)])
            })
            .collect();
        Architecture::from_choices(self.spec.gnn_kind, self.spec.hidden_dim, &choices)
            .expect("choices only reference earlier blocks")
    }
}

/// `c_IDENTITY * x` for one edge gate.
pub fn edge_mix(
    tape: &mut Tape,
    store: &ParamStore,
    gate: ParamId,
    x: Var,
    cfg: &GumbelConfig,
    rng: &mut impl Rng,
) -> Result<Var> {
    let alpha = tape.param(store, gate)?;
    let weights = gumbel_softmax(tape, alpha, cfg, rng)?;
    let keep = tape.slice(weights, Axis::Cols, IDENTITY, 1)?;
    tape.scale_by(x, keep)
}

/// Relaxed forward pass; returns `N x C` logits.
pub fn supernet_forward(
    tape: &mut Tape,
    supernet: &Supernet,
    graph: &Graph,
    cfg: &GumbelConfig,
    rng: &mut impl Rng,
) -> Result<Var> {
    Ok(supernet.forward(tape, graph, cfg, rng, None)?.logits)
}

pub fn derive_architecture(supernet: &Supernet) -> Architecture {
    supernet.derive()
}
