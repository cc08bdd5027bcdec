//! Visual recognition head: image features to vocabulary-wide activations.

use std::collections::{BTreeSet, HashSet};

use crate::autodiff::NodeId;
use crate::error::{NocError, Result};
use crate::params::{uniform, Forward, ParamId, ParamSet};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::training::{minimise, PretrainConfig, TrainingLog};
use crate::vocab::Vocabulary;

/// Bundled stopword list, one word per line.
pub const STOPWORDS: &str = include_str!("../data/stopwords.txt");

pub fn stopword_list() -> Vec<&'static str> {
    STOPWORDS.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// Vocabulary ids of the bundled stopwords present in `vocab`.
pub fn stopword_ids(vocab: &Vocabulary) -> HashSet<usize> {
    stopword_list().into_iter().filter_map(|w| vocab.id(w)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures<T> {
    pub id: String,
    pub vector: Tensor<T>,
}

impl<T: Real> ImageFeatures<T> {
    pub fn new(id: impl Into<String>, values: Vec<T>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(NocError::Argument("image features must be finite and non-empty".into()));
        }
        Ok(ImageFeatures { id: id.into(), vector: Tensor::vector(values) })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Positive label ids; the binary target `z` is implicit over the vocabulary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelVector {
    labels: BTreeSet<usize>,
}

impl LabelVector {
    pub fn new(labels: impl IntoIterator<Item = usize>) -> Self {
        LabelVector { labels: labels.into_iter().collect() }
    }

    pub fn contains(&self, id: usize) -> bool {
        self.labels.contains(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Dense binary vector of length `vocab_size`.
    pub fn dense<T: Real>(&self, vocab_size: usize) -> Result<Tensor<T>> {
        let mut z = Tensor::zeros(&[vocab_size]);
        for &l in &self.labels {
            if l >= vocab_size {
                return Err(NocError::Index { index: l, size: vocab_size });
            }
            z.data_mut()[l] = T::one();
        }
        Ok(z)
    }
}

/// Distinct content-word ids of a caption: stopwords and control tokens dropped.
pub fn extract_labels(caption: &[usize], stopwords: &HashSet<usize>) -> LabelVector {
    LabelVector::new(
        caption.iter().copied().filter(|id| !Vocabulary::is_control(*id) && !stopwords.contains(id)),
    )
}

/// Two-layer perceptron `F -> H_v -> V` with a rectifier hidden layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisualParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub features: usize,
    pub hidden: usize,
    pub vocab: usize,
}

impl VisualParams {
    /// Glorot-uniform weights and zero biases, or all zeros when `rng` is `None`.
    pub fn register<T: Real>(
        params: &mut ParamSet<T>,
        features: usize,
        hidden: usize,
        vocab: usize,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Self {
        let (w1, w2) = match rng {
            Some(mut r) => (
                uniform(&mut r, &[hidden, features], (6.0 / (features + hidden) as f64).sqrt()),
                uniform(&mut r, &[vocab, hidden], (6.0 / (hidden + vocab) as f64).sqrt()),
            ),
            None => (Tensor::zeros(&[hidden, features]), Tensor::zeros(&[vocab, hidden])),
        };
        VisualParams {
            w1: params.insert("vision.w1", w1),
            b1: params.insert("vision.b1", Tensor::zeros(&[hidden])),
            w2: params.insert("vision.w2", w2),
            b2: params.insert("vision.b2", Tensor::zeros(&[vocab])),
            features,
            hidden,
            vocab,
        }
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn feature_node<T: Real>(&self, f: &mut Forward<T>, img: &ImageFeatures<T>) -> Result<NodeId> {
        if img.dim() != self.features {
            return Err(NocError::Dimension(format!(
                "image `{}` has {} features, the visual head expects {}",
                img.id,
                img.dim(),
                self.features
            )));
        }
        Ok(f.input(img.vector.clone()))
    }

    /// Raw activations `f_IM` for one image.
    pub fn activations<T: Real>(&self, f: &mut Forward<T>, img: &ImageFeatures<T>) -> Result<NodeId> {
        let x = self.feature_node(f, img)?;
        let w1 = f.bind(self.w1);
        let b1 = f.bind(self.b1);
        let w2 = f.bind(self.w2);
        let b2 = f.bind(self.b2);
        let g = &mut f.graph;
        let h = g.matvec(w1, x)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h);
        let o = g.matvec(w2, h)?;
        g.add(o, b2)
    }
}

/// Multi-label loss on activations: softmax first, then binary cross-entropy
/// of every vocabulary entry against `z`, with logs clamped at `1e-12`.
pub fn image_loss_node<T: Real>(f: &mut Forward<T>, activations: NodeId, z: &LabelVector) -> Result<NodeId> {
    let v = f.value(activations).len();
    let zt = z.dense::<T>(v)?;
    let zn = f.input(zt);
    let g = &mut f.graph;
    let s = g.softmax(activations)?;
    let log_s = g.log(s);
    let one_minus_s = g.one_minus(s);
    let log_rest = g.log(one_minus_s);
    let not_z = g.one_minus(zn);
    let pos = g.dot(zn, log_s)?;
    let neg = g.dot(not_z, log_rest)?;
    let total = g.add(pos, neg)?;
    Ok(g.scale(total, -T::one()))
}

pub fn image_activations<T: Real>(params: &ParamSet<T>, vp: &VisualParams, img: &ImageFeatures<T>) -> Result<Tensor<T>> {
    let mut f = Forward::new(params);
    let a = vp.activations(&mut f, img)?;
    Ok(f.value(a).clone())
}

pub fn image_loss<T: Real>(params: &ParamSet<T>, vp: &VisualParams, img: &ImageFeatures<T>, z: &LabelVector) -> Result<T> {
    let mut f = Forward::new(params);
    let a = vp.activations(&mut f, img)?;
    let l = image_loss_node(&mut f, a, z)?;
    Ok(f.value(l).item())
}

/// The multi-label loss evaluated directly on given activations.
pub fn image_loss_from_activations<T: Real>(activations: &Tensor<T>, z: &LabelVector) -> Result<T> {
    let empty = ParamSet::new();
    let mut f = Forward::new(&empty);
    let a = f.input(activations.clone());
    let l = image_loss_node(&mut f, a, z)?;
    Ok(f.value(l).item())
}

/// Standalone training of the visual head on labelled images.
pub fn vision_pretrain<T: Real>(
    params: &mut ParamSet<T>,
    vp: &VisualParams,
    data: &[(ImageFeatures<T>, LabelVector)],
    cfg: &PretrainConfig,
) -> Result<TrainingLog> {
    minimise(params, data.len(), 0x494d, cfg, |f, i| {
        let (img, z) = &data[i];
        let a = vp.activations(f, img)?;
        image_loss_node(f, a, z)
    })
}
