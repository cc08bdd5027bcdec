//! Caption prediction by summed activations and joint training of the
//! caption, image and text objectives on shared parameters.
//!
//! `P(w_t | w_<t, I) = softmax(f_LM(w_<t) + f_IM(I))`, and each training step
//! minimises `mean L_CM + alpha * mean L_IM + beta * mean L_LM`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_slice, NodeId};
use crate::batching::Cycler;
use crate::dataset::{LabeledImage, PairedExample, Sources};
use crate::error::{NocError, Result};
use crate::lm::{LmState, StateNodes};
use crate::model::NocModel;
use crate::optim::{Adam, AdamConfig};
use crate::params::Forward;
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::vision::{image_loss_node, ImageFeatures};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the image objective.
    pub alpha: f64,
    /// Weight of the text objective.
    pub beta: f64,
    pub lr: f64,
    pub batch_paired: usize,
    pub batch_image: usize,
    pub batch_text: usize,
    pub steps: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            lr: 1e-3,
            batch_paired: 8,
            batch_image: 8,
            batch_text: 8,
            steps: 500,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(NocError::Config(format!(
                "loss weights must be non-negative (alpha = {}, beta = {})",
                self.alpha, self.beta
            )));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(NocError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, clip_norm: self.clip_norm, ..AdamConfig::default() }
    }
}

/// Per-step losses; `total = l_cm + alpha * l_im + beta * l_lm`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: usize,
    pub l_cm: f64,
    pub l_im: f64,
    pub l_lm: f64,
    pub total: f64,
}

impl<T: Real> NocModel<T> {
    /// One fused step: returns the next state and `f_CM = f_LM + f_IM`.
    pub fn fused_step(&self, f: &mut Forward<T>, state: StateNodes, prev: usize, f_im: NodeId) -> Result<(StateNodes, NodeId)> {
        let (next, f_lm) = self.lm.step(f, state, prev)?;
        let f_cm = f.graph.add(f_lm, f_im)?;
        Ok((next, f_cm))
    }

    /// Teacher-forced caption loss node for one image/caption pair.
    pub fn caption_nll(&self, f: &mut Forward<T>, image: &ImageFeatures<T>, sentence: &[usize]) -> Result<NodeId> {
        let f_im = self.vision.activations(f, image)?;
        self.lm.sentence_nll(f, sentence, Some(f_im))
    }
}

/// Next-word distribution `softmax(f_LM + f_IM)` after feeding `prev`.
pub fn fused_distribution<T: Real>(
    model: &NocModel<T>,
    state: &LmState<T>,
    prev: usize,
    f_im: &Tensor<T>,
) -> Result<(LmState<T>, Tensor<T>)> {
    if f_im.shape() != [model.vocab_size()] {
        return Err(NocError::Dimension(format!(
            "image activations have shape {:?}, vocabulary size is {}",
            f_im.shape(),
            model.vocab_size()
        )));
    }
    let mut f = Forward::new(&model.params);
    let s = model.lm.state_nodes(&mut f, state)?;
    let im = f.input(f_im.clone());
    let (next, f_cm) = model.fused_step(&mut f, s, prev, im)?;
    let probs = Tensor::vector(softmax_slice(f.value(f_cm).data()));
    Ok((LmState { hidden: f.value(next.hidden).clone(), cell: f.value(next.cell).clone() }, probs))
}

pub fn caption_loss<T: Real>(model: &NocModel<T>, image: &ImageFeatures<T>, sentence: &[usize]) -> Result<T> {
    let mut f = Forward::new(&model.params);
    let l = model.caption_nll(&mut f, image, sentence)?;
    Ok(f.value(l).item())
}

/// Batches drawn from each source for one joint step.
pub struct JointBatch<'a, T> {
    pub paired: Vec<&'a PairedExample<T>>,
    pub images: Vec<&'a LabeledImage<T>>,
    pub texts: Vec<&'a [usize]>,
}

fn mean_of<T: Real>(f: &mut Forward<T>, items: &[NodeId]) -> Result<Option<NodeId>> {
    if items.is_empty() {
        return Ok(None);
    }
    let s = f.graph.add_n(items)?;
    Ok(Some(f.graph.scale(s, T::one() / T::lit(items.len() as f64))))
}

/// Builds the weighted joint objective on one graph. Terms with zero weight
/// are evaluated for the breakdown but left out of the differentiated total.
pub fn joint_objective<T: Real>(
    f: &mut Forward<T>,
    model: &NocModel<T>,
    batch: &JointBatch<'_, T>,
    alpha: f64,
    beta: f64,
) -> Result<(NodeId, [f64; 3])> {
    if batch.paired.is_empty() && batch.images.is_empty() && batch.texts.is_empty() {
        return Err(NocError::Argument("joint step needs at least one non-empty batch".into()));
    }
    let cm = batch
        .paired
        .iter()
        .map(|ex| model.caption_nll(f, &ex.image, &ex.caption))
        .collect::<Result<Vec<_>>>()?;
    let im = batch
        .images
        .iter()
        .map(|ex| {
            let a = model.vision.activations(f, &ex.image)?;
            image_loss_node(f, a, &ex.labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let lm = batch
        .texts
        .iter()
        .map(|s| model.lm.sentence_nll(f, s, None))
        .collect::<Result<Vec<_>>>()?;
    let (cm, im, lm) = (mean_of(f, &cm)?, mean_of(f, &im)?, mean_of(f, &lm)?);
    let val = |f: &Forward<T>, n: Option<NodeId>| n.map_or(0.0, |n| f.value(n).item().as_f64());
    let parts = [val(f, cm), val(f, im), val(f, lm)];

    let mut terms = Vec::new();
    terms.extend(cm);
    if alpha > 0.0 {
        terms.extend(im.map(|n| f.graph.scale(n, T::lit(alpha))));
    }
    if beta > 0.0 {
        terms.extend(lm.map(|n| f.graph.scale(n, T::lit(beta))));
    }
    let total = if terms.is_empty() {
        // every non-empty term carries zero weight
        let zero = f.input(Tensor::scalar(T::zero()));
        f.graph.sum(zero)
    } else {
        f.graph.add_n(&terms)?
    };
    Ok((total, parts))
}

/// Computes the joint objective and applies one optimiser update.
pub fn joint_step<T: Real>(
    model: &mut NocModel<T>,
    opt: &mut Adam<T>,
    batch: &JointBatch<'_, T>,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossBreakdown> {
    let mut f = Forward::new(&model.params);
    let (total, [l_cm, l_im, l_lm]) = joint_objective(&mut f, model, batch, cfg.alpha, cfg.beta)?;
    let total_value = f.value(total).item().as_f64();
    let grads = f.gradients(total)?;
    opt.update(&mut model.params, grads);
    Ok(LossBreakdown { step, l_cm, l_im, l_lm, total: total_value })
}

/// Resumable joint-training loop. Each source is cycled independently in
/// seeded shuffled order; batches depend only on `(seed, step)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub optimizer: Adam<T>,
    pub step: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, model: &NocModel<T>) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(config.adam(), &model.params);
        Ok(Trainer { config, optimizer, step: 0 })
    }

    /// Runs `steps` more joint steps.
    pub fn run(&mut self, model: &mut NocModel<T>, sources: &Sources<T>, steps: usize) -> Result<Vec<LossBreakdown>> {
        if sources.paired.is_empty() {
            return Err(NocError::Argument("paired image-caption source is empty".into()));
        }
        let c = &self.config;
        let mut paired = Cycler::new(sources.paired.len(), c.batch_paired, c.seed, 1);
        let mut images = Cycler::new(sources.images.len(), c.batch_image, c.seed, 2);
        let mut texts = Cycler::new(sources.texts.len(), c.batch_text, c.seed, 3);
        let mut log = Vec::with_capacity(steps);
        for _ in 0..steps {
            let s = self.step;
            let batch = JointBatch {
                paired: paired.batch_at(s).into_iter().map(|i| &sources.paired[i]).collect(),
                images: images.batch_at(s).into_iter().map(|i| &sources.images[i]).collect(),
                texts: texts.batch_at(s).into_iter().map(|i| sources.texts[i].as_slice()).collect(),
            };
            log.push(joint_step(model, &mut self.optimizer, &batch, &self.config, s)?);
            self.step += 1;
        }
        Ok(log)
    }
}

pub fn train_noc<T: Real>(model: &mut NocModel<T>, sources: &Sources<T>, cfg: &TrainConfig) -> Result<Vec<LossBreakdown>> {
    let mut trainer = Trainer::new(cfg.clone(), model)?;
    trainer.run(model, sources, cfg.steps)
}
