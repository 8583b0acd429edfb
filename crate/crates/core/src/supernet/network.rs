use rand::Rng;

use super::fusion::{fusion_mix, Coef, FusionParams};
use super::{Architecture, FusionKind, SupernetSpec};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{LlcError, Result};
use crate::graph::Graph;
use crate::layers::{Activation, GnnLayer, MlpBlockParams};
use crate::rng::{self, StreamRng};

/// Operation weights `w` shared by the supernet and derived networks.
#[derive(Clone, Debug)]
pub struct OperationWeights {
    pub store: ParamStore,
    pub input: MlpBlockParams,
    /// `gnn[j - 1]` belongs to GNN block `j`.
    pub gnn: Vec<GnnLayer>,
    /// `fusion[j - 1]` belongs to block `j`, including the output block.
    pub fusion: Vec<FusionParams>,
    pub head: MlpBlockParams,
    pub hidden_dim: usize,
}

impl OperationWeights {
    pub fn init(spec: &SupernetSpec, seed: u64) -> Self {
        let mut rng = rng::stream(seed, rng::INIT);
        let mut store = ParamStore::new();
        Self::init_into(&mut store, spec, &mut rng).into_owned(store)
    }

    pub(crate) fn init_into(
        store: &mut ParamStore,
        spec: &SupernetSpec,
        rng: &mut impl Rng,
    ) -> WeightLayout {
        let d = spec.hidden_dim;
        let k = spec.n_gnn_blocks;
        let input = MlpBlockParams::init(
            store,
            "block0",
            [spec.input_dim, d, d],
            Activation::Relu,
            true,
            rng,
        );
        let gnn = (1..=k)
            .map(|j| GnnLayer::init(spec.gnn_kind, store, &format!("block{j}.gnn"), d, spec.gat_heads, rng))
            .collect();
        let fusion = (1..=k + 1)
            .map(|j| FusionParams::init(store, &format!("block{j}.fusion"), d, k + 1, rng))
            .collect();
        let head = MlpBlockParams::init(
            store,
            "head",
            [d, d, spec.n_classes],
            Activation::Relu,
            false,
            rng,
        );
        WeightLayout {
            input,
            gnn,
            fusion,
            head,
            hidden_dim: d,
        }
    }

    pub fn n_gnn_blocks(&self) -> usize {
        self.gnn.len()
    }
}

pub(crate) struct WeightLayout {
    input: MlpBlockParams,
    gnn: Vec<GnnLayer>,
    fusion: Vec<FusionParams>,
    head: MlpBlockParams,
    hidden_dim: usize,
}

impl WeightLayout {
    pub(crate) fn into_owned(self, store: ParamStore) -> OperationWeights {
        OperationWeights {
            store,
            input: self.input,
            gnn: self.gnn,
            fusion: self.fusion,
            head: self.head,
            hidden_dim: self.hidden_dim,
        }
    }
}

/// How block `j` reads its predecessors and fuses them.
///
/// Candidates whose mixing weight is exactly zero are left out entirely,
/// so a discrete wiring computes only what the chosen operations need.
#[derive(Clone, Debug, Default)]
pub struct BlockWiring {
    pub inputs: Vec<(usize, Coef)>,
    pub fusions: Vec<(FusionKind, Coef)>,
}

pub struct NetworkOutput {
    pub logits: Var,
    /// Fused input of the output block, before the classifier head.
    pub pre_head: Var,
    /// Output of every block; `None` for blocks with no live input.
    pub blocks: Vec<Option<Var>>,
}

/// Dropout applied after every GNN block during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut StreamRng,
}

fn dropout_mask(n: usize, d: usize, rate: f64, rng: &mut StreamRng) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..n * d)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor::new(n, d, data).expect("mask shape")
}

/// Evaluates the block DAG for a given wiring (`wiring[j - 1]` for block
/// `j`).
///
/// A GNN block whose live inputs are all absent outputs nothing, and its
/// successors skip it. If the output block has no live input its fused
/// representation is the zero matrix.
pub fn run_network(
    tape: &mut Tape,
    weights: &OperationWeights,
    graph: &Graph,
    wiring: &[BlockWiring],
    mut dropout: Option<Dropout<'_>>,
) -> Result<NetworkOutput> {
    let k = weights.n_gnn_blocks();
    if wiring.len() != k + 1 {
        return Err(LlcError::arg(format!(
            "wiring has {} blocks, network has {}",
            wiring.len(),
            k + 1
        )));
    }
    let store = &weights.store;
    let n = graph.n_nodes();
    let d = weights.hidden_dim;
    let x = tape.leaf(graph.features().clone())?;
    let h0 = crate::layers::mlp2_forward(tape, store, &weights.input, x)?;
    let mut outputs: Vec<Option<Var>> = vec![Some(h0)];
    let mut pre_head = None;
    for j in 1..=k + 1 {
        let w = &wiring[j - 1];
        let mut inputs = Vec::with_capacity(w.inputs.len());
        for &(src, coef) in &w.inputs {
            let Some(out) = outputs.get(src).copied().flatten() else {
                continue;
            };
            let x = match coef {
                Coef::One => out,
                Coef::Weight(c) => tape.scale_by(out, c)?,
            };
            inputs.push((src, x));
        }
        let fused = if inputs.is_empty() {
            None
        } else {
            Some(fusion_mix(tape, store, &weights.fusion[j - 1], &w.fusions, &inputs)?)
        };
        if j <= k {
            let out = match fused {
                Some(h) => {
                    let mut out = weights.gnn[j - 1].forward(tape, store, graph, h)?;
                    if let Some(drop) = dropout.as_mut().filter(|dr| dr.rate > 0.0) {
                        let mask = tape.leaf(dropout_mask(n, d, drop.rate, drop.rng))?;
                        out = tape.mul(out, mask)?;
                    }
                    Some(out)
                }
                None => None,
            };
            outputs.push(out);
        } else {
            let h = match fused {
                Some(h) => h,
                None => tape.leaf(Tensor::zeros(n, d))?,
            };
            pre_head = Some(h);
            outputs.push(Some(h));
        }
    }
    let pre_head = pre_head.expect("output block visited");
    let logits = crate::layers::mlp2_forward(tape, store, &weights.head, pre_head)?;
    Ok(NetworkOutput {
        logits,
        pre_head,
        blocks: outputs,
    })
}

/// Discrete wiring of an architecture: every selected edge and the chosen
/// fusion carry weight exactly one.
pub fn architecture_wiring(arch: &Architecture) -> Vec<BlockWiring> {
    let mut wiring = vec![BlockWiring::default(); arch.n_gnn_blocks + 1];
    for b in &arch.blocks {
        wiring[b.id - 1] = BlockWiring {
            inputs: b.predecessors.iter().map(|&i| (i, Coef::One)).collect(),
            fusions: vec![(b.fusion, Coef::One)],
        };
    }
    wiring
}

/// Standalone network for a derived architecture.
#[derive(Clone, Debug)]
pub struct DerivedNetwork {
    pub arch: Architecture,
    pub weights: OperationWeights,
    wiring: Vec<BlockWiring>,
}

impl DerivedNetwork {
    pub fn new(arch: Architecture, weights: OperationWeights) -> Result<Self> {
        arch.validate()?;
        if weights.n_gnn_blocks() != arch.n_gnn_blocks || weights.hidden_dim != arch.hidden_dim {
            return Err(LlcError::arg(format!(
                "weights for K={} d={} do not fit architecture K={} d={}",
                weights.n_gnn_blocks(),
                weights.hidden_dim,
                arch.n_gnn_blocks,
                arch.hidden_dim
            )));
        }
        let wiring = architecture_wiring(&arch);
        Ok(Self {
            arch,
            weights,
            wiring,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &Graph,
        dropout: Option<Dropout<'_>>,
    ) -> Result<NetworkOutput> {
        run_network(tape, &self.weights, graph, &self.wiring, dropout)
    }
}
