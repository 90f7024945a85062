//! Local mini-batch training, optionally with the FedProx proximal term.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::model::{self, GradWorkspace, ModelSpec};
use crate::params::ParameterVector;
use crate::seed::{self, SimRng};

/// Proximal coefficient used when FedProx is requested without an explicit value.
pub const DEFAULT_FEDPROX_MU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of `(mu / 2) * ||w - anchor||^2`; zero gives plain SGD.
    #[serde(default)]
    pub prox_mu: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 5, batch_size: 32, learning_rate: 0.2, prox_mu: 0.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(Error::InvalidConfig("prox_mu must be non-negative".into()));
        }
        Ok(())
    }
}

/// Epoch-at-a-time trainer. Running `n` epochs through one trainer is
/// identical to a single `local_train` call with `epochs = n`.
///
/// Each step takes the gradient of the mean batch cross-entropy and, when
/// `prox_mu > 0`, applies the proximal term in closed form:
/// `w <- (w - lr * g + lr * mu * anchor) / (1 + lr * mu)`.
/// That is the exact minimizer of the linearized loss plus the proximal
/// penalty, and it stays stable for arbitrarily large `mu`.
pub struct LocalTrainer<'a> {
    spec: &'a ModelSpec,
    data: &'a [LabeledExample],
    cfg: TrainConfig,
    anchor: &'a ParameterVector,
    params: ParameterVector,
    order: Vec<usize>,
    rng: SimRng,
    ws: GradWorkspace,
}

impl<'a> LocalTrainer<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        start: &ParameterVector,
        data: &'a [LabeledExample],
        cfg: TrainConfig,
        anchor: &'a ParameterVector,
    ) -> Result<Self> {
        cfg.validate()?;
        model::validate_training(spec, start, anchor, data)?;
        Ok(Self {
            spec,
            data,
            cfg,
            anchor,
            params: start.clone(),
            order: (0..data.len()).collect(),
            rng: seed::rng(cfg.seed),
            ws: GradWorkspace::new(spec),
        })
    }

    /// One pass over the data in a freshly shuffled order. Returns the mean
    /// cross-entropy of the epoch, each batch measured before its step.
    pub fn run_epoch(&mut self) -> f64 {
        self.order.shuffle(&mut self.rng);
        let lr = self.cfg.learning_rate;
        let mu = self.cfg.prox_mu;
        let mut total = 0.0;
        for batch in self.order.chunks(self.cfg.batch_size) {
            let examples = batch.iter().map(|&i| &self.data[i]);
            let loss = model::batch_loss_grad(self.spec, self.params.values(), examples, &mut self.ws);
            total += loss * batch.len() as f64;
            let grad = &self.ws.grad;
            let values = self.params.values_mut();
            if mu > 0.0 {
                let shrink = 1.0 + lr * mu;
                for ((w, g), a) in values.iter_mut().zip(grad).zip(self.anchor.values()) {
                    *w = (*w - lr * g + lr * mu * a) / shrink;
                }
            } else {
                for (w, g) in values.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
        }
        total / self.data.len() as f64
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn into_params(self) -> Result<ParameterVector> {
        if self.params.values().iter().all(|v| v.is_finite()) {
            Ok(self.params)
        } else {
            Err(Error::NonFinite)
        }
    }
}

/// Train from `start` for `cfg.epochs` epochs. Returns the final parameters
/// and the mean training loss of the last epoch.
pub fn local_train(
    spec: &ModelSpec,
    start: &ParameterVector,
    data: &[LabeledExample],
    cfg: &TrainConfig,
    global_anchor: &ParameterVector,
) -> Result<(ParameterVector, f64)> {
    let mut trainer = LocalTrainer::new(spec, start, data, *cfg, global_anchor)?;
    let mut loss = 0.0;
    for _ in 0..cfg.epochs {
        loss = trainer.run_epoch();
    }
    Ok((trainer.into_params()?, loss))
}
