//! Novel object captioning: an LSTM language model over tied word
//! embeddings and a visual recognition head, fused by summing their
//! vocabulary activations and trained jointly on paired, image-only and
//! text-only data.

pub mod autodiff;
pub mod batching;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decode;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod vision;
pub mod vocab;

pub use error::{NocError, Result};
pub use scalar::Real;

pub type Tensor = tensor::Tensor<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type Graph = autodiff::Graph<f64>;
pub type GraphF32 = autodiff::Graph<f32>;
pub type Model = model::NocModel<f64>;
pub type Embeddings = embedding::EmbeddingTable<f64>;
pub type Image = vision::ImageFeatures<f64>;
