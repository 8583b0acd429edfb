//! Alternating optimization of operation weights and architecture logits,
//! retraining of derived designs, and fixed baselines.

mod baseline;
mod config;
mod train;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use baseline::{build_baseline, Baseline};
pub use config::SearchConfig;
pub use train::{train_architecture, TrainEpoch, TrainMetrics, TrainedModel};

use crate::autodiff::{Adam, Group, ParamId, Tape, Tensor};
use crate::error::{LlcError, Result};
use crate::graph::{DataSplit, Graph};
use crate::rng::{self, StreamRng};
use crate::supernet::{argmax, Architecture, Dropout, GumbelConfig, Supernet};

/// Fraction of `nodes` whose largest logit is at the true label.
pub fn accuracy(logits: &Tensor, labels: &[usize], nodes: &[usize]) -> f64 {
    masked_metrics(logits, labels, nodes).1
}

/// Mean cross-entropy and accuracy over `nodes`.
pub fn masked_metrics(logits: &Tensor, labels: &[usize], nodes: &[usize]) -> (f64, f64) {
    if nodes.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut loss = 0.0;
    let mut hits = 0usize;
    for &v in nodes {
        let row = logits.row_slice(v);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        loss += lse - row[labels[v]];
        if argmax(row) == labels[v] {
            hits += 1;
        }
    }
    let n = nodes.len() as f64;
    (loss / n, hits as f64 / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub epochs: Vec<EpochRecord>,
    pub architecture: Architecture,
    /// Test accuracy of the final supernet evaluated with argmax weights.
    pub test_acc: f64,
    pub seed: u64,
    pub wall_seconds: f64,
}

impl SearchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Mutable state of one search run.
#[derive(Clone)]
pub struct SearchState {
    pub supernet: Supernet,
    adam_w: Adam,
    adam_alpha: Adam,
    gumbel: StreamRng,
    dropout: StreamRng,
}

impl SearchState {
    pub fn new(graph: &Graph, cfg: &SearchConfig) -> Result<Self> {
        cfg.validate()?;
        let supernet = Supernet::new(cfg.supernet_spec(graph), cfg.seed)?;
        Ok(Self {
            supernet,
            adam_w: Adam::new(cfg.lr_w).with_weight_decay(cfg.weight_decay_w),
            adam_alpha: Adam::new(cfg.lr_alpha),
            gumbel: rng::stream(cfg.seed, rng::GUMBEL),
            dropout: rng::stream(cfg.seed, rng::DROPOUT),
        })
    }

    /// One relaxed forward pass, cross-entropy on `nodes`, and an Adam step
    /// on the parameters of `group` that the pass touched.
    fn half_step(
        &mut self,
        graph: &Graph,
        nodes: &[usize],
        group: Group,
        gumbel: &GumbelConfig,
        dropout_rate: f64,
        epoch: usize,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let dropout = (dropout_rate > 0.0).then(|| Dropout {
            rate: dropout_rate,
            rng: &mut self.dropout,
        });
        let out = self.supernet.forward(&mut tape, graph, gumbel, &mut self.gumbel, dropout)?;
        let loss = tape.cross_entropy(out.logits, graph.labels(), nodes)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            let what = match group {
                Group::Weight => "training loss",
                Group::Arch => "validation loss",
            };
            return Err(LlcError::Numeric {
                epoch,
                what: what.into(),
            });
        }
        let grads = tape.backward(loss)?;
        let store = self.supernet.store_mut();
        let ids: Vec<ParamId> = grads
            .param_ids()
            .into_iter()
            .filter(|&id| store.get(id).group == group)
            .collect();
        grads.write_to(store);
        let adam = match group {
            Group::Weight => &mut self.adam_w,
            Group::Arch => &mut self.adam_alpha,
        };
        adam.step(store, &ids)?;
        Ok(value)
    }

    /// Deterministic evaluation of the current supernet with argmax weights.
    pub fn evaluate(&self, graph: &Graph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut unused = rng::stream(0, rng::GUMBEL);
        let out = self
            .supernet
            .forward(&mut tape, graph, &GumbelConfig::argmax(), &mut unused, None)?;
        Ok(tape.value(out.logits).clone())
    }
}

/// First-order alternation for one epoch: a weight step on the training
/// loss, then an architecture step on the validation loss, each with its
/// own freshly sampled relaxation. Returns both losses as measured before
/// the respective update.
pub fn alternate_step(
    state: &mut SearchState,
    graph: &Graph,
    split: &DataSplit,
    cfg: &SearchConfig,
    epoch: usize,
) -> Result<(f64, f64)> {
    let gumbel = GumbelConfig::sample(cfg.lambda_at(epoch));
    let train_loss = state.half_step(graph, split.train(), Group::Weight, &gumbel, cfg.dropout, epoch)?;
    let val_loss = state.half_step(graph, split.val(), Group::Arch, &gumbel, 0.0, epoch)?;
    Ok((train_loss, val_loss))
}

/// Full search: `cfg.epochs` alternations under the annealed temperature,
/// then derivation from the final logits.
pub fn run_search(
    graph: &Graph,
    split: &DataSplit,
    cfg: &SearchConfig,
) -> Result<(Architecture, SearchReport)> {
    let start = Instant::now();
    let mut state = SearchState::new(graph, cfg)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (train_loss, val_loss) = alternate_step(&mut state, graph, split, cfg, epoch)?;
        let logits = state.evaluate(graph)?;
        epochs.push(EpochRecord {
            train_loss,
            val_loss,
            val_acc: accuracy(&logits, graph.labels(), split.val()),
            lambda: cfg.lambda_at(epoch),
        });
    }
    let logits = state.evaluate(graph)?;
    let architecture = state.supernet.derive();
    let report = SearchReport {
        epochs,
        architecture: architecture.clone(),
        test_acc: accuracy(&logits, graph.labels(), split.test()),
        seed: cfg.seed,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((architecture, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, split_nodes, SbmParams, SplitRatios};
    use crate::layers::GnnKind;
    use crate::supernet::FusionKind;

    fn data(noise: f64, p_in: f64, p_out: f64) -> (Graph, DataSplit) {
        let g = generate_sbm(&SbmParams {
            communities: 2,
            nodes_per_community: 20,
            p_in,
            p_out,
            feature_dim: 6,
            feature_noise: noise,
            seed: 1,
        })
        .unwrap();
        let s = split_nodes(&g, SplitRatios::default(), 0).unwrap();
        (g, s)
    }

    fn small_cfg() -> SearchConfig {
        SearchConfig {
            epochs: 6,
            retrain_epochs: 20,
            n_gnn_blocks: 2,
            hidden_dim: 8,
            seed: 5,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn metrics_on_known_logits() {
        let logits = Tensor::from_rows(&[vec![0.0, 0.0], vec![5.0, 1.0], vec![0.0, 2.0]]);
        let (loss, acc) = masked_metrics(&logits, &[0, 0, 0], &[0, 1, 2]);
        assert!((acc - 2.0 / 3.0).abs() < 1e-12, "tie counts as class 0");
        let want = (2f64.ln() + (1.0 + (-4f64).exp()).ln() + (2.0 + (1.0 + 2f64.exp()).ln() - 2.0)) / 3.0;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn search_is_deterministic() {
        let (g, s) = data(0.8, 0.4, 0.05);
        let cfg = small_cfg();
        let (a1, r1) = run_search(&g, &s, &cfg).unwrap();
        let (a2, r2) = run_search(&g, &s, &cfg).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(r1.epochs, r2.epochs);
        assert_eq!(r1.test_acc.to_bits(), r2.test_acc.to_bits());
        assert_eq!(r1.epochs.len(), cfg.epochs);
        a1.validate().unwrap();
    }

    #[test]
    fn zero_epochs_gives_fallback() {
        let (g, s) = data(0.8, 0.4, 0.05);
        let cfg = SearchConfig {
            epochs: 0,
            ..small_cfg()
        };
        let (a, r) = run_search(&g, &s, &cfg).unwrap();
        assert!(a.fallback_used);
        assert_eq!(a.output().predecessors, vec![0]);
        assert!(r.epochs.is_empty());
    }

    #[test]
    fn alternation_isolates_groups() {
        let (g, s) = data(0.8, 0.4, 0.05);
        let cfg = small_cfg();
        let mut st = SearchState::new(&g, &cfg).unwrap();
        for epoch in 0..3 {
            let gumbel = GumbelConfig::sample(cfg.lambda_at(epoch));
            let (w0, a0) = (st.supernet.store().checksum(Group::Weight), st.supernet.store().checksum(Group::Arch));
            st.half_step(&g, s.train(), Group::Weight, &gumbel, 0.0, epoch).unwrap();
            let (w1, a1) = (st.supernet.store().checksum(Group::Weight), st.supernet.store().checksum(Group::Arch));
            assert_ne!(w0, w1);
            assert_eq!(a0, a1);
            st.half_step(&g, s.val(), Group::Arch, &gumbel, 0.0, epoch).unwrap();
            let (w2, a2) = (st.supernet.store().checksum(Group::Weight), st.supernet.store().checksum(Group::Arch));
            assert_eq!(w1, w2);
            assert_ne!(a1, a2);
        }
    }

    #[test]
    fn zero_learning_rates_freeze_everything() {
        let (g, s) = data(0.8, 0.4, 0.05);
        let cfg = SearchConfig {
            lr_w: 0.0,
            lr_alpha: 0.0,
            weight_decay_w: 0.0,
            ..small_cfg()
        };
        let mut st = SearchState::new(&g, &cfg).unwrap();
        let before = (st.supernet.store().checksum(Group::Weight), st.supernet.store().checksum(Group::Arch));
        let snapshot = st.clone();
        let first = alternate_step(&mut st, &g, &s, &cfg, 0).unwrap();
        let after = (st.supernet.store().checksum(Group::Weight), st.supernet.store().checksum(Group::Arch));
        assert_eq!(before, after);
        // Same parameters and the same noise state give the same losses.
        let mut again = snapshot;
        assert_eq!(alternate_step(&mut again, &g, &s, &cfg, 0).unwrap(), first);
    }

    #[test]
    fn frozen_alpha_matches_plain_weight_training() {
        let (g, s) = data(0.8, 0.4, 0.05);
        let cfg = SearchConfig {
            lr_alpha: 0.0,
            ..small_cfg()
        };
        let mut st = SearchState::new(&g, &cfg).unwrap();
        let mut plain = st.clone();
        for epoch in 0..4 {
            let (_, val) = alternate_step(&mut st, &g, &s, &cfg, epoch).unwrap();
            let gumbel = GumbelConfig::sample(cfg.lambda_at(epoch));
            plain.half_step(&g, s.train(), Group::Weight, &gumbel, 0.0, epoch).unwrap();
            let mut tape = Tape::new();
            let out = plain
                .supernet
                .forward(&mut tape, &g, &gumbel, &mut plain.gumbel, None)
                .unwrap();
            let loss = tape.cross_entropy(out.logits, g.labels(), s.val()).unwrap();
            assert_eq!(val.to_bits(), tape.value(loss).item().to_bits());
        }
    }

    #[test]
    fn informative_input_edge_wins() {
        // Features carry the label, edges are random across classes, so the
        // direct connection from the input block is the useful one.
        let (g, s) = data(0.3, 0.1, 0.1 - 1e-9);
        let cfg = SearchConfig {
            epochs: 100,
            n_gnn_blocks: 1,
            hidden_dim: 8,
            lr_alpha: 0.05,
            fusion_subset: vec![FusionKind::Sum],
            ..SearchConfig::default()
        };
        let mut st = SearchState::new(&g, &cfg).unwrap();
        for epoch in 0..cfg.epochs {
            alternate_step(&mut st, &g, &s, &cfg, epoch).unwrap();
        }
        let gate = st.supernet.gate(0, 2).data().to_vec();
        assert!(gate[1] > gate[0], "{gate:?}");
        assert!(st.supernet.derive().output().predecessors.contains(&0));
    }

    #[test]
    fn retraining_is_deterministic_and_beats_majority() {
        let (g, s) = data(0.5, 0.4, 0.05);
        let cfg = SearchConfig {
            retrain_epochs: 80,
            ..small_cfg()
        };
        let fallback = Architecture::from_choices(
            GnnKind::Sage,
            8,
            &[(vec![], FusionKind::Sum), (vec![], FusionKind::Sum), (vec![], FusionKind::Sum)],
        )
        .unwrap();
        let m1 = train_architecture(&fallback, &g, &s, &cfg).unwrap();
        let m2 = train_architecture(&fallback, &g, &s, &cfg).unwrap();
        assert_eq!(m1.metrics, m2.metrics);
        assert!(m1.metrics.test_acc >= g.majority_fraction(s.test()));
        let best = &m1.metrics.epochs[m1.metrics.best_epoch];
        assert_eq!(best.val_acc, m1.metrics.best_val_acc);
        assert!(m1.metrics.epochs.iter().all(|e| e.val_acc <= m1.metrics.best_val_acc));
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (g, s) = data(0.5, 0.4, 0.05);
        let cfg = SearchConfig {
            retrain_epochs: 300,
            lr_w: 0.0,
            weight_decay_w: 0.0,
            patience: 4,
            ..small_cfg()
        };
        let arch = build_baseline("stack2", &cfg.supernet_spec(&g)).unwrap();
        let m = train_architecture(&arch, &g, &s, &cfg).unwrap();
        // Frozen weights never improve, so training stops after the first
        // evaluation plus `patience` stale ones.
        assert_eq!(m.metrics.epochs.len(), 5);
        assert_eq!(m.metrics.best_epoch, 0);
    }
}
