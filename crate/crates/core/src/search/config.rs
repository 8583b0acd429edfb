use serde::{Deserialize, Serialize};

use crate::error::{LlcError, Result};
use crate::graph::Graph;
use crate::layers::GnnKind;
use crate::supernet::{FusionKind, SupernetSpec};

/// Every knob of a search or retraining run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub epochs: usize,
    pub retrain_epochs: usize,
    pub lr_w: f64,
    pub lr_alpha: f64,
    pub weight_decay_w: f64,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub seed: u64,
    pub gnn_kind: GnnKind,
    pub n_gnn_blocks: usize,
    pub hidden_dim: usize,
    pub gat_heads: usize,
    pub dropout: f64,
    pub patience: usize,
    pub fusion_subset: Vec<FusionKind>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            retrain_epochs: 300,
            lr_w: 5e-3,
            lr_alpha: 3e-3,
            weight_decay_w: 5e-4,
            lambda_start: 1.0,
            lambda_end: 0.05,
            seed: 0,
            gnn_kind: GnnKind::Sage,
            n_gnn_blocks: 4,
            hidden_dim: 64,
            gat_heads: 1,
            dropout: 0.0,
            patience: 30,
            fusion_subset: FusionKind::ALL.to_vec(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LlcError::Config(m));
        if !(self.lambda_end > 0.0 && self.lambda_start >= self.lambda_end && self.lambda_start.is_finite()) {
            return fail(format!(
                "need lambda_start >= lambda_end > 0, got {} and {}",
                self.lambda_start, self.lambda_end
            ));
        }
        // Zero is allowed and freezes the corresponding parameter group.
        for (name, lr) in [("lr_w", self.lr_w), ("lr_alpha", self.lr_alpha)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be a finite nonnegative number, got {lr}"));
            }
        }
        if !(self.weight_decay_w >= 0.0 && self.weight_decay_w.is_finite()) {
            return fail("weight_decay_w must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.hidden_dim == 0 || self.n_gnn_blocks == 0 || self.gat_heads == 0 {
            return fail("blocks, hidden_dim and gat_heads must be positive".into());
        }
        if self.patience == 0 {
            return fail("patience must be positive".into());
        }
        if self.fusion_subset.is_empty() {
            return fail("fusion_subset must not be empty".into());
        }
        Ok(())
    }

    /// Geometric interpolation from `lambda_start` at epoch 0 to
    /// `lambda_end` at the last epoch. A single-epoch run uses the start.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lambda_start;
        }
        if epoch + 1 >= self.epochs {
            return self.lambda_end;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lambda_start * (self.lambda_end / self.lambda_start).powf(t)
    }

    pub fn supernet_spec(&self, graph: &Graph) -> SupernetSpec {
        let mut spec = SupernetSpec::new(
            self.n_gnn_blocks,
            self.hidden_dim,
            self.gnn_kind,
            graph.feature_dim(),
            graph.n_classes(),
        )
        .with_fusions(&self.fusion_subset);
        spec.gat_heads = self.gat_heads;
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_monotone() {
        let cfg = SearchConfig {
            epochs: 37,
            ..SearchConfig::default()
        };
        assert_eq!(cfg.lambda_at(0), 1.0);
        assert!((cfg.lambda_at(36) - 0.05).abs() < 1e-9);
        for e in 1..37 {
            assert!(cfg.lambda_at(e) <= cfg.lambda_at(e - 1));
        }
        let mid = cfg.lambda_at(18);
        assert!((mid - 0.05f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        SearchConfig::default().validate().unwrap();
        let bad = SearchConfig {
            lambda_end: 2.0,
            ..SearchConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SearchConfig {
            lr_w: -1.0,
            ..SearchConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
