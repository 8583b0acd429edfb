use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{LlcError, Result};
use crate::graph::{DataSplit, Graph};
use crate::search::{run_search, train_architecture, Baseline, SearchConfig};
use crate::supernet::Architecture;

/// Cosine similarity, 0 when either row is all zero.
///
/// Computed as `sign(uv) * sqrt(uv^2 / (|u|^2 |v|^2))`: scaling both rows
/// by `c` multiplies numerator and denominator by the same `c^4`, so the
/// result does not change whenever those products are exact.
fn cosine(u: &[f64], v: &[f64], nu: f64, nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let c = ((dot * dot) / (nu * nv)).sqrt().min(1.0);
    if dot < 0.0 {
        -c
    } else {
        c
    }
}

/// Mean average cosine distance between rows of `h`.
///
/// For every row the distances `1 - cos(h_u, h_v)` to the rows `v != u`
/// with `mask(u, v)` are averaged; rows without any such partner are left
/// out, and the result is the mean over the remaining rows.
pub fn mad(h: &Tensor, mask: impl Fn(usize, usize) -> bool) -> Result<f64> {
    let n = h.rows();
    if n < 2 {
        return Err(LlcError::Diagnostic(format!("MAD needs at least two rows, got {n}")));
    }
    let norms: Vec<f64> = (0..n)
        .map(|r| h.row_slice(r).iter().map(|x| x * x).sum())
        .collect();
    let mut total = 0.0;
    let mut rows = 0usize;
    for u in 0..n {
        let mut sum = 0.0;
        let mut count = 0usize;
        for v in (0..n).filter(|&v| v != u && mask(u, v)) {
            sum += 1.0 - cosine(h.row_slice(u), h.row_slice(v), norms[u], norms[v]);
            count += 1;
        }
        if count > 0 {
            total += sum / count as f64;
            rows += 1;
        }
    }
    if rows == 0 {
        return Err(LlcError::Diagnostic("empty mask".into()));
    }
    Ok(total / rows as f64)
}

/// Global MAD over all pairs drawn from `nodes`.
pub fn mad_among(h: &Tensor, nodes: &[usize]) -> Result<f64> {
    let mut rows = Vec::with_capacity(nodes.len());
    for &v in nodes {
        rows.push(h.row_slice(v).to_vec());
    }
    if rows.len() < 2 {
        return Err(LlcError::Diagnostic("empty mask".into()));
    }
    mad(&Tensor::from_rows(&rows), |_, _| true)
}

/// Connection method whose depth is swept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MadMethod {
    Stack,
    ResGcn,
    DenseGcn,
    JkNet,
    /// Searched with the full engine at each depth.
    Llc,
}

impl MadMethod {
    fn baseline(self, depth: usize) -> Option<Baseline> {
        match self {
            MadMethod::Stack => Some(Baseline::Stack(depth)),
            MadMethod::ResGcn => Some(Baseline::ResGcn(depth)),
            MadMethod::DenseGcn => Some(Baseline::DenseGcn(depth)),
            MadMethod::JkNet => Some(Baseline::JkNet(depth)),
            MadMethod::Llc => None,
        }
    }

    /// Architecture of this method with `depth` GNN blocks.
    pub fn architecture(
        self,
        depth: usize,
        graph: &Graph,
        split: &DataSplit,
        cfg: &SearchConfig,
    ) -> Result<Architecture> {
        let cfg = SearchConfig {
            n_gnn_blocks: depth,
            ..cfg.clone()
        };
        match self.baseline(depth) {
            Some(b) => b.architecture(&cfg.supernet_spec(graph)),
            None => Ok(run_search(graph, split, &cfg)?.0),
        }
    }
}

impl FromStr for MadMethod {
    type Err = LlcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stack" => Ok(MadMethod::Stack),
            "resgcn" => Ok(MadMethod::ResGcn),
            "densegcn" => Ok(MadMethod::DenseGcn),
            "jknet" => Ok(MadMethod::JkNet),
            "llc" => Ok(MadMethod::Llc),
            _ => Err(LlcError::arg(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MadRow {
    pub depth: usize,
    pub accuracy: f64,
    pub mad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MadReport {
    pub method: MadMethod,
    pub seed: u64,
    pub rows: Vec<MadRow>,
}

impl MadReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,accuracy,mad\n");
        for r in &self.rows {
            writeln!(out, "{},{:?},{:?}", r.depth, r.accuracy, r.mad).expect("string write");
        }
        out
    }
}

/// Test accuracy and test-node MAD of the final pre-head representation of
/// one trained architecture.
pub fn mad_of_architecture(
    arch: &Architecture,
    graph: &Graph,
    split: &DataSplit,
    cfg: &SearchConfig,
) -> Result<MadRow> {
    let model = train_architecture(arch, graph, split, cfg)?;
    let (_, pre_head) = model.predict(graph)?;
    Ok(MadRow {
        depth: arch.n_gnn_blocks,
        accuracy: model.metrics.test_acc,
        mad: mad_among(&pre_head, split.test())?,
    })
}

/// One row per depth: build (or search) the architecture, retrain it and
/// measure.
pub fn mad_depth_sweep(
    graph: &Graph,
    split: &DataSplit,
    method: MadMethod,
    depths: &[usize],
    cfg: &SearchConfig,
) -> Result<MadReport> {
    if let Some(&d) = depths.iter().find(|&&d| d < 2) {
        return Err(LlcError::arg(format!("depths must be at least 2, got {d}")));
    }
    let rows = depths
        .iter()
        .map(|&depth| {
            let arch = method.architecture(depth, graph, split, cfg)?;
            mad_of_architecture(&arch, graph, split, cfg)
        })
        .collect::<Result<_>>()?;
    Ok(MadReport {
        method,
        seed: cfg.seed,
        rows,
    })
}
