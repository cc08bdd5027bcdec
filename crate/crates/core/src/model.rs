//! The caption model: language model, visual head and shared embeddings
//! living in one parameter set.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{NocError, Result};
use crate::lm::{seeded_rng, LmParams};
use crate::params::{ParamId, ParamSet};
use crate::scalar::Real;
use crate::vision::VisualParams;
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// LSTM hidden size.
    pub hidden: usize,
    /// Hidden width of the visual head.
    pub visual_hidden: usize,
    /// Image feature dimension.
    pub features: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: 128, visual_hidden: 64, features: 40, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NocModel<T> {
    pub vocab: Vocabulary,
    pub params: ParamSet<T>,
    pub lm: LmParams,
    pub vision: VisualParams,
    pub config: ModelConfig,
}

impl<T: Real> NocModel<T> {
    /// Randomly initialised model around `embeddings`; the table's `frozen`
    /// flag carries over to the shared embedding parameter.
    pub fn new(vocab: Vocabulary, embeddings: EmbeddingTable<T>, config: ModelConfig) -> Result<Self> {
        Self::build(vocab, embeddings, config, true)
    }

    /// Model whose LSTM and visual weights are all zero.
    pub fn zeros(vocab: Vocabulary, embeddings: EmbeddingTable<T>, config: ModelConfig) -> Result<Self> {
        Self::build(vocab, embeddings, config, false)
    }

    fn build(vocab: Vocabulary, embeddings: EmbeddingTable<T>, config: ModelConfig, random: bool) -> Result<Self> {
        if embeddings.vocab_size() != vocab.len() {
            return Err(NocError::Dimension(format!(
                "embedding table has {} rows for a vocabulary of {}",
                embeddings.vocab_size(),
                vocab.len()
            )));
        }
        let frozen = embeddings.frozen;
        let mut params = ParamSet::new();
        let e = params.insert("embedding", embeddings.into_matrix());
        params.set_frozen(e, frozen);
        let mut rng = seeded_rng(config.seed);
        let (lm, vision) = if random {
            let lm = LmParams::register(&mut params, e, config.hidden, Some(&mut rng));
            let vision = VisualParams::register(&mut params, config.features, config.visual_hidden, vocab.len(), Some(&mut rng));
            (lm, vision)
        } else {
            let lm = LmParams::register(&mut params, e, config.hidden, None);
            let vision = VisualParams::register(&mut params, config.features, config.visual_hidden, vocab.len(), None);
            (lm, vision)
        };
        Ok(NocModel { vocab, params, lm, vision, config })
    }

    pub fn embedding(&self) -> ParamId {
        self.lm.embedding
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn set_embeddings_frozen(&mut self, frozen: bool) {
        self.params.set_frozen(self.lm.embedding, frozen);
    }

    /// Freezes or thaws every visual-head parameter.
    pub fn set_vision_frozen(&mut self, frozen: bool) {
        for id in self.vision.ids() {
            self.params.set_frozen(id, frozen);
        }
    }

    pub fn set_lm_zero(&mut self) {
        for id in self.lm.own_ids() {
            self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn set_vision_zero(&mut self) {
        for id in self.vision.ids() {
            self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}
