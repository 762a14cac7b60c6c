//! Contextualized neural topic model.
//!
//! A ProdLDA-style variational autoencoder whose inference network reads a
//! language-independent document embedding (optionally alongside the bag of
//! words), so a model trained on one language can assign topics to
//! documents in another. Includes corpus preparation, the binary embedding
//! container, training and inference, and the evaluation metrics used for
//! cross-lingual comparison.

pub mod corpus;
pub mod embeddings;
pub mod metrics;
pub mod model;
pub mod synthetic;
