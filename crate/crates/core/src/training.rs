//! Shared minibatch loop for the standalone pre-training phases.

use serde::{Deserialize, Serialize};

use crate::autodiff::NodeId;
use crate::batching::Cycler;
use crate::error::{NocError, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Forward, ParamSet};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { steps: 200, batch: 8, seed: 0, adam: AdamConfig::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean per-item loss of each step's batch.
    pub step_losses: Vec<f64>,
    /// Mean of the step losses falling in each pass over the data.
    pub epoch_losses: Vec<f64>,
}

impl TrainingLog {
    fn from_steps(step_losses: Vec<f64>, steps_per_epoch: usize) -> Self {
        let epoch_losses = step_losses
            .chunks(steps_per_epoch.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        TrainingLog { step_losses, epoch_losses }
    }
}

/// Minimises the batch mean of `item_loss` over `n_items` examples.
pub(crate) fn minimise<T: Real>(
    params: &mut ParamSet<T>,
    n_items: usize,
    tag: u64,
    cfg: &PretrainConfig,
    item_loss: impl Fn(&mut Forward<T>, usize) -> Result<NodeId>,
) -> Result<TrainingLog> {
    if n_items == 0 {
        return Err(NocError::Argument("cannot train on an empty data source".into()));
    }
    let mut cycler = Cycler::new(n_items, cfg.batch.max(1), cfg.seed, tag);
    let mut opt = Adam::new(cfg.adam, params);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = cycler.batch_at(step);
        let mut fwd = Forward::new(params);
        let items = batch.iter().map(|&i| item_loss(&mut fwd, i)).collect::<Result<Vec<_>>>()?;
        let total = fwd.graph.add_n(&items)?;
        let mean = fwd.graph.scale(total, T::one() / T::lit(items.len() as f64));
        losses.push(fwd.value(mean).item().as_f64());
        let grads = fwd.gradients(mean)?;
        opt.update(params, grads);
    }
    Ok(TrainingLog::from_steps(losses, cycler.steps_per_epoch()))
}
