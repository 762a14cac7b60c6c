//! The variational topic model: a feed-forward inference network over
//! document embeddings and/or bags of words, a logistic-normal latent with a
//! Laplace-approximated Dirichlet prior, and a product-of-experts decoder.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod network;
pub mod params;
pub mod prior;
mod topic_model;
pub mod train;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_model, save_model};
pub use config::{InputMode, ModelConfig};
pub use network::{
    compute_gradients, decode, elbo_loss, encode, reparameterize, LossParts, Noise, Phase,
    Posterior,
};
pub use params::{Gradients, ModelParameters};
pub use prior::{laplace_prior, PriorParams};
pub use topic_model::{inference_rng, TopicModel};
pub use train::{train, EpochLoss, TrainingSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input has {found} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("training batches need at least two documents")]
    BatchTooSmall,
    #[error("noise tensors do not match the batch shape")]
    NoiseShape,
    #[error("bag-of-words target in batch row {row} is all zeros")]
    ZeroBowTarget { row: usize },
    #[error("{count} document(s) have no embedding, e.g. {example:?}")]
    MissingEmbeddings { count: usize, example: String },
    #[error("no trainable documents (every bag of words is empty)")]
    NoTrainingDocuments,
    #[error("vocabulary has {found} tokens but the model expects {expected}")]
    VocabularyMismatch { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("the inference input for mode {mode} needs {what}")]
    MissingInput { mode: InputMode, what: &'static str },
    #[error("samples must be at least 1")]
    ZeroSamples,
    #[error("top_n must lie in 1..={vocab_size}, got {top_n}")]
    TopN { top_n: usize, vocab_size: usize },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A point on the topic simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicDistribution(Vec<f64>);

impl TopicDistribution {
    pub const TOLERANCE: f64 = 1e-6;

    /// Accepts a non-negative vector of length at least one whose
    /// components sum to one within [`Self::TOLERANCE`].
    pub fn new(theta: Vec<f64>) -> Option<Self> {
        let ok = !theta.is_empty()
            && theta.iter().all(|&t| t >= 0.0 && t.is_finite())
            && (theta.iter().sum::<f64>() - 1.0).abs() <= Self::TOLERANCE;
        ok.then_some(Self(theta))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn num_topics(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Most likely topic; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}
