use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Group, ParamId, ParamStore, Reduce, Tape, Tensor, Var};
use crate::error::{LlcError, Result};
use crate::layers::glorot;

/// Candidate fusion operations, in their fixed serialization order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FusionKind {
    Sum,
    Mean,
    Max,
    Concat,
    Lstm,
    Att,
}

impl FusionKind {
    pub const ALL: [FusionKind; 6] = [
        FusionKind::Sum,
        FusionKind::Mean,
        FusionKind::Max,
        FusionKind::Concat,
        FusionKind::Lstm,
        FusionKind::Att,
    ];

    /// Position in [`FusionKind::ALL`]; also the column of the selector logits.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Sum => "SUM",
            FusionKind::Mean => "MEAN",
            FusionKind::Max => "MAX",
            FusionKind::Concat => "CONCAT",
            FusionKind::Lstm => "LSTM",
            FusionKind::Att => "ATT",
        }
    }
}

impl std::fmt::Display for FusionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FusionKind {
    type Err = LlcError;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| LlcError::arg(format!("unknown fusion '{s}'")))
    }
}

/// Trainable weights owned by one block's fusion operations.
#[derive(Clone, Debug)]
pub struct FusionParams {
    /// `(K + 1) d x d`; input from block `i` occupies row slot `i`.
    pub concat_proj: ParamId,
    pub lstm_wih: ParamId,
    pub lstm_whh: ParamId,
    pub lstm_bias: ParamId,
    pub att_w: ParamId,
    /// `d x 1` shared query.
    pub att_q: ParamId,
    pub width: usize,
    pub slots: usize,
}

impl FusionParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        slots: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut add = |suffix: &str, t: Tensor| store.add(format!("{name}.{suffix}"), Group::Weight, t);
        let concat_proj = add("concat_proj", glorot(slots * d, d, rng));
        let lstm_wih = add("lstm_wih", glorot(d, 4 * d, rng));
        let lstm_whh = add("lstm_whh", glorot(d, 4 * d, rng));
        let lstm_bias = add("lstm_bias", Tensor::zeros(1, 4 * d));
        let att_w = add("att_w", glorot(d, d, rng));
        let att_q = add("att_q", glorot(d, 1, rng));
        Self {
            concat_proj,
            lstm_wih,
            lstm_whh,
            lstm_bias,
            att_w,
            att_q,
            width: d,
            slots,
        }
    }
}

/// Applies one fusion operation to `inputs`, given as `(source block,
/// representation)` pairs in ascending source order. Output width is `d`.
///
/// * SUM / MEAN / MAX: elementwise reduction.
/// * CONCAT: zero-padded slot concatenation times the projection.
/// * LSTM: final hidden state of an LSTM cell run over the inputs in order.
/// * ATT: softmax over `tanh(x_i W_a) q` per node, then a weighted sum.
pub fn fusion_apply(
    tape: &mut Tape,
    store: &ParamStore,
    kind: FusionKind,
    params: &FusionParams,
    inputs: &[(usize, Var)],
) -> Result<Var> {
    let Some(&(_, first)) = inputs.first() else {
        return Err(LlcError::arg("fusion over an empty input list"));
    };
    let d = params.width;
    for &(src, x) in inputs {
        if tape.shape(x)[1] != d {
            return Err(LlcError::Shape {
                op: "fusion",
                left: tape.shape(x),
                right: [tape.shape(x)[0], d],
            });
        }
        if src >= params.slots {
            return Err(LlcError::arg(format!("source block {src} has no fusion slot")));
        }
    }
    let xs: Vec<Var> = inputs.iter().map(|&(_, x)| x).collect();
    match kind {
        FusionKind::Sum => tape.reduce(Reduce::Sum, &xs),
        FusionKind::Mean => tape.reduce(Reduce::Mean, &xs),
        FusionKind::Max => tape.reduce(Reduce::Max, &xs),
        FusionKind::Concat => {
            let n = tape.shape(first)[0];
            let zero = tape.leaf(Tensor::zeros(n, d))?;
            let mut parts = vec![zero; params.slots];
            for &(src, x) in inputs {
                parts[src] = x;
            }
            let joined = tape.concat(&parts, Axis::Cols)?;
            let proj = tape.param(store, params.concat_proj)?;
            tape.matmul(joined, proj)
        }
        FusionKind::Lstm => {
            let wih = tape.param(store, params.lstm_wih)?;
            let whh = tape.param(store, params.lstm_whh)?;
            let bias = tape.param(store, params.lstm_bias)?;
            let mut state: Option<(Var, Var)> = None;
            for &x in &xs {
                let xin = tape.matmul(x, wih)?;
                let mut gates = tape.add(xin, bias)?;
                if let Some((h, _)) = state {
                    let rec = tape.matmul(h, whh)?;
                    gates = tape.add(gates, rec)?;
                }
                let i = tape.slice(gates, Axis::Cols, 0, d)?;
                let i = tape.sigmoid(i)?;
                let f = tape.slice(gates, Axis::Cols, d, d)?;
                let f = tape.sigmoid(f)?;
                let g = tape.slice(gates, Axis::Cols, 2 * d, d)?;
                let g = tape.tanh(g)?;
                let o = tape.slice(gates, Axis::Cols, 3 * d, d)?;
                let o = tape.sigmoid(o)?;
                let ig = tape.mul(i, g)?;
                let c = match state {
                    Some((_, c_prev)) => {
                        let keep = tape.mul(f, c_prev)?;
                        tape.add(keep, ig)?
                    }
                    None => ig,
                };
                let tc = tape.tanh(c)?;
                let h = tape.mul(o, tc)?;
                state = Some((h, c));
            }
            Ok(state.expect("nonempty inputs").0)
        }
        FusionKind::Att => {
            let w = tape.param(store, params.att_w)?;
            let q = tape.param(store, params.att_q)?;
            let mut scores = Vec::with_capacity(xs.len());
            for &x in &xs {
                let proj = tape.matmul(x, w)?;
                let act = tape.tanh(proj)?;
                scores.push(tape.matmul(act, q)?);
            }
            let scores = tape.concat(&scores, Axis::Cols)?;
            let weights = tape.softmax(scores, Axis::Cols)?;
            let mut terms = Vec::with_capacity(xs.len());
            for (k, &x) in xs.iter().enumerate() {
                let col = tape.slice(weights, Axis::Cols, k, 1)?;
                terms.push(tape.mul(col, x)?);
            }
            tape.reduce(Reduce::Sum, &terms)
        }
    }
}

/// Mixing coefficient of one candidate: exactly one (no multiply) or a
/// relaxed `1 x 1` weight on the tape.
#[derive(Clone, Copy, Debug)]
pub enum Coef {
    One,
    Weight(Var),
}

/// Weighted sum of fusion outputs, `sum_k c_k f_k(inputs)`.
pub fn fusion_mix(
    tape: &mut Tape,
    store: &ParamStore,
    params: &FusionParams,
    candidates: &[(FusionKind, Coef)],
    inputs: &[(usize, Var)],
) -> Result<Var> {
    if candidates.is_empty() {
        return Err(LlcError::arg("fusion mix with no candidates"));
    }
    let mut terms = Vec::with_capacity(candidates.len());
    for &(kind, coef) in candidates {
        let out = fusion_apply(tape, store, kind, params, inputs)?;
        terms.push(match coef {
            Coef::One => out,
            Coef::Weight(c) => tape.scale_by(out, c)?,
        });
    }
    if terms.len() == 1 {
        Ok(terms[0])
    } else {
        tape.reduce(Reduce::Sum, &terms)
    }
}
