use serde::{Deserialize, Serialize};

use super::{masked_metrics, SearchConfig};
use crate::autodiff::{Adam, Group, Tape, Tensor};
use crate::error::{LlcError, Result};
use crate::graph::{DataSplit, Graph};
use crate::rng;
use crate::supernet::{Architecture, DerivedNetwork, Dropout, OperationWeights, SupernetSpec};

/// Metrics of the weights after `epoch` updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    /// Test accuracy of the best-validation weights, and only those.
    pub test_acc: f64,
    pub epochs: Vec<TrainEpoch>,
}

/// A retrained derived network holding its best-validation weights.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub network: DerivedNetwork,
    pub metrics: TrainMetrics,
}

impl TrainedModel {
    pub fn architecture(&self) -> &Architecture {
        &self.network.arch
    }

    /// Logits and pre-head representation of every node.
    pub fn predict(&self, graph: &Graph) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let out = self.network.forward(&mut tape, graph, None)?;
        Ok((tape.value(out.logits).clone(), tape.value(out.pre_head).clone()))
    }
}

struct Best {
    epoch: usize,
    val_acc: f64,
    val_loss: f64,
    test_acc: f64,
    store: crate::autodiff::ParamStore,
}

/// Trains `arch` from scratch with Adam on the training nodes.
///
/// Weights are evaluated before the first update and after each one. The
/// best epoch has the highest validation accuracy (lower validation loss
/// breaks ties); training stops once validation loss has not improved for
/// `patience` evaluations.
pub fn train_architecture(
    arch: &Architecture,
    graph: &Graph,
    split: &DataSplit,
    cfg: &SearchConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    arch.validate()?;
    let mut spec = SupernetSpec::for_architecture(arch, graph);
    spec.gat_heads = cfg.gat_heads;
    let mut net = DerivedNetwork::new(arch.clone(), OperationWeights::init(&spec, cfg.seed))?;
    let mut adam = Adam::new(cfg.lr_w).with_weight_decay(cfg.weight_decay_w);
    let mut drop_rng = rng::stream(cfg.seed, rng::DROPOUT);
    let labels = graph.labels();

    let mut history = Vec::new();
    let mut best: Option<Best> = None;
    let mut lowest_val_loss = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..=cfg.retrain_epochs {
        let training = epoch < cfg.retrain_epochs;
        let mut tape = Tape::new();
        let dropout = (training && cfg.dropout > 0.0).then(|| Dropout {
            rate: cfg.dropout,
            rng: &mut drop_rng,
        });
        let out = net.forward(&mut tape, graph, dropout)?;
        let loss = tape.cross_entropy(out.logits, labels, split.train())?;
        let train_loss = tape.value(loss).item();
        if !train_loss.is_finite() {
            return Err(LlcError::Numeric {
                epoch,
                what: "training loss".into(),
            });
        }
        let eval_logits = if training && cfg.dropout > 0.0 {
            let mut eval = Tape::new();
            let v = net.forward(&mut eval, graph, None)?.logits;
            eval.value(v).clone()
        } else {
            tape.value(out.logits).clone()
        };
        let (val_loss, val_acc) = masked_metrics(&eval_logits, labels, split.val());
        history.push(TrainEpoch {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        let improves = best
            .as_ref()
            .is_none_or(|b| val_acc > b.val_acc || (val_acc == b.val_acc && val_loss < b.val_loss));
        if improves {
            let (_, test_acc) = masked_metrics(&eval_logits, labels, split.test());
            best = Some(Best {
                epoch,
                val_acc,
                val_loss,
                test_acc,
                store: net.weights.store.clone(),
            });
        }
        if val_loss < lowest_val_loss {
            lowest_val_loss = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        if !training {
            break;
        }
        let grads = tape.backward(loss)?;
        grads.write_to(&mut net.weights.store);
        let ids: Vec<_> = grads
            .param_ids()
            .into_iter()
            .filter(|&id| net.weights.store.get(id).group == Group::Weight)
            .collect();
        adam.step(&mut net.weights.store, &ids)?;
    }
    let best = best.expect("at least one evaluation");
    net.weights.store = best.store;
    Ok(TrainedModel {
        network: net,
        metrics: TrainMetrics {
            seed: cfg.seed,
            best_epoch: best.epoch,
            best_val_acc: best.val_acc,
            best_val_loss: best.val_loss,
            test_acc: best.test_acc,
            epochs: history,
        },
    })
}
