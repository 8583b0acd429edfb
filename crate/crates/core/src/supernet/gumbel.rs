use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::error::{LlcError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GumbelMode {
    /// Reparameterized sample with fresh noise on every call.
    Sample,
    /// Deterministic one-hot at the largest logit (lowest index on ties).
    Argmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumbelConfig {
    /// Softmax temperature; must be positive.
    pub lambda: f64,
    pub mode: GumbelMode,
}

impl GumbelConfig {
    pub fn sample(lambda: f64) -> Self {
        Self {
            lambda,
            mode: GumbelMode::Sample,
        }
    }

    pub fn argmax() -> Self {
        Self {
            lambda: 1.0,
            mode: GumbelMode::Argmax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda > 0.0 && self.lambda.is_finite() {
            Ok(())
        } else {
            Err(LlcError::arg(format!(
                "Gumbel temperature must be positive, got {}",
                self.lambda
            )))
        }
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Draws `-log(-log U)` with `U` uniform on the open interval (0, 1).
pub fn gumbel_noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Relaxed one-hot weights for the `1 x k` logits `alpha`.
///
/// In sample mode the weights are
/// `softmax((log_softmax(alpha) + G) / lambda)` with Gumbel noise `G`, and
/// gradients flow back to `alpha`. In argmax mode the result is an exact
/// one-hot constant.
pub fn gumbel_softmax(
    tape: &mut Tape,
    alpha: Var,
    cfg: &GumbelConfig,
    rng: &mut impl Rng,
) -> Result<Var> {
    cfg.validate()?;
    let [rows, k] = tape.shape(alpha);
    if rows != 1 {
        return Err(LlcError::Shape {
            op: "gumbel_softmax",
            left: [rows, k],
            right: [1, k],
        });
    }
    match cfg.mode {
        GumbelMode::Argmax => {
            let best = argmax(tape.value(alpha).data());
            let mut one_hot = Tensor::zeros(1, k);
            one_hot.set(0, best, 1.0);
            tape.leaf(one_hot)
        }
        GumbelMode::Sample => {
            let log_p = tape.log_softmax(alpha, Axis::Cols)?;
            let noise = tape.leaf(Tensor::row(&gumbel_noise(k, rng)))?;
            let perturbed = tape.add(log_p, noise)?;
            let scaled = tape.scale(perturbed, 1.0 / cfg.lambda)?;
            tape.softmax(scaled, Axis::Cols)
        }
    }
}
