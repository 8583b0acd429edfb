//! Fixed per-block operators: the two-layer MLP used by the input and
//! output blocks, and the GraphSAGE-mean and GAT message-passing layers
//! used inside GNN blocks.
//!
//! Node representations are `N x d` row matrices, so a linear map is
//! `H * W` with `W` of shape `d_in x d_out`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Group, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{LlcError, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    Sage,
    Gat,
}

impl std::str::FromStr for GnnKind {
    type Err = LlcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sage" => Ok(GnnKind::Sage),
            "gat" => Ok(GnnKind::Gat),
            other => Err(LlcError::arg(format!("unknown GNN kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for GnnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GnnKind::Sage => "sage",
            GnnKind::Gat => "gat",
        })
    }
}

/// Glorot-uniform initialisation.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(rows, cols, data).expect("glorot shape")
}

/// Two stacked linear maps without bias.
#[derive(Clone, Debug)]
pub struct MlpBlockParams {
    pub w0: ParamId,
    pub w1: ParamId,
    pub activation: Activation,
    /// When false the second linear map is left unactivated (logits).
    pub activate_output: bool,
}

impl MlpBlockParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        dims: [usize; 3],
        activation: Activation,
        activate_output: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let [d_in, d_hidden, d_out] = dims;
        Self {
            w0: store.add(format!("{name}.w0"), Group::Weight, glorot(d_in, d_hidden, rng)),
            w1: store.add(format!("{name}.w1"), Group::Weight, glorot(d_hidden, d_out, rng)),
            activation,
            activate_output,
        }
    }
}

/// `act(act(H W0) W1)`, or `act(H W0) W1` when the output is not activated.
pub fn mlp2_forward(
    tape: &mut Tape,
    store: &ParamStore,
    params: &MlpBlockParams,
    h: Var,
) -> Result<Var> {
    let w0 = tape.param(store, params.w0)?;
    let w1 = tape.param(store, params.w1)?;
    let x = tape.matmul(h, w0)?;
    let x = params.activation.apply(tape, x)?;
    let x = tape.matmul(x, w1)?;
    if params.activate_output {
        params.activation.apply(tape, x)
    } else {
        Ok(x)
    }
}

/// GraphSAGE with the mean aggregator over self-concatenated input.
#[derive(Clone, Debug)]
pub struct SageParams {
    /// `2d x d`, applied to `[h_v, mean of neighbors]`.
    pub w: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl SageParams {
    pub fn init(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: store.add(format!("{name}.w"), Group::Weight, glorot(2 * d, d, rng)),
            bias: store.add(format!("{name}.bias"), Group::Weight, Tensor::zeros(1, d)),
            activation: Activation::Relu,
        }
    }
}

/// `out_v = act([h_v, mean_{u in N(v), u != v} h_u] W + b)`; nodes with no
/// other neighbor use a zero mean.
pub fn sage_forward(
    tape: &mut Tape,
    store: &ParamStore,
    params: &SageParams,
    graph: &Graph,
    h: Var,
) -> Result<Var> {
    let w = tape.param(store, params.w)?;
    let [rows, _] = tape.shape(w);
    if tape.shape(h)[1] * 2 != rows {
        return Err(LlcError::Shape {
            op: "sage",
            left: tape.shape(h),
            right: tape.shape(w),
        });
    }
    let nbr = tape.spmm(graph.neighbor_mean(), h)?;
    let both = tape.concat(&[h, nbr], Axis::Cols)?;
    let lin = tape.matmul(both, w)?;
    let b = tape.param(store, params.bias)?;
    let out = tape.add(lin, b)?;
    params.activation.apply(tape, out)
}

#[derive(Clone, Debug)]
pub struct GatHead {
    pub w: ParamId,
    /// `d x 1` source attention vector.
    pub a_src: ParamId,
    /// `d x 1` destination attention vector.
    pub a_dst: ParamId,
}

#[derive(Clone, Debug)]
pub struct GatParams {
    pub heads: Vec<GatHead>,
    pub leaky_slope: f64,
    pub activation: Activation,
}

impl GatParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(heads >= 1, "GAT needs at least one head");
        let heads = (0..heads)
            .map(|k| GatHead {
                w: store.add(format!("{name}.h{k}.w"), Group::Weight, glorot(d, d, rng)),
                a_src: store.add(format!("{name}.h{k}.a_src"), Group::Weight, glorot(d, 1, rng)),
                a_dst: store.add(format!("{name}.h{k}.a_dst"), Group::Weight, glorot(d, 1, rng)),
            })
            .collect();
        Self {
            heads,
            leaky_slope: 0.2,
            activation: Activation::Elu,
        }
    }
}

/// Single-layer GAT over self-inclusive neighborhoods; heads are averaged
/// after the activation so the output width stays `d`.
pub fn gat_forward(
    tape: &mut Tape,
    store: &ParamStore,
    params: &GatParams,
    graph: &Graph,
    h: Var,
) -> Result<Var> {
    let mut outs = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let out = gat_head(tape, store, head, params.leaky_slope, graph, h)?;
        outs.push(params.activation.apply(tape, out)?);
    }
    tape.reduce(crate::autodiff::Reduce::Mean, &outs)
}

/// One head before activation; returns the attention node so callers can
/// inspect coefficients through [`Tape::attention_coefficients`].
pub fn gat_head(
    tape: &mut Tape,
    store: &ParamStore,
    head: &GatHead,
    slope: f64,
    graph: &Graph,
    h: Var,
) -> Result<Var> {
    let w = tape.param(store, head.w)?;
    let z = tape.matmul(h, w)?;
    let a_src = tape.param(store, head.a_src)?;
    let a_dst = tape.param(store, head.a_dst)?;
    let s = tape.matmul(z, a_src)?;
    let t = tape.matmul(z, a_dst)?;
    tape.neighborhood_attention(graph.adjacency_with_self(), z, s, t, slope)
}

/// Message-passing layer of either kind.
#[derive(Clone, Debug)]
pub enum GnnLayer {
    Sage(SageParams),
    Gat(GatParams),
}

impl GnnLayer {
    pub fn init(
        kind: GnnKind,
        store: &mut ParamStore,
        name: &str,
        d: usize,
        gat_heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        match kind {
            GnnKind::Sage => GnnLayer::Sage(SageParams::init(store, name, d, rng)),
            GnnKind::Gat => GnnLayer::Gat(GatParams::init(store, name, d, gat_heads, rng)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, graph: &Graph, h: Var) -> Result<Var> {
        match self {
            GnnLayer::Sage(p) => sage_forward(tape, store, p, graph, h),
            GnnLayer::Gat(p) => gat_forward(tape, store, p, graph, h),
        }
    }
}
