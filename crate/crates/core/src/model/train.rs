use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::config::ModelConfig;
use super::network::{compute_gradients, update_running_stats, Noise};
use super::params::ModelParameters;
use super::prior::laplace_prior;
use super::{ModelError, TopicModel};
use crate::corpus::{BowVector, Vocabulary};
use crate::embeddings::EmbeddingMatrix;

/// Mean per-document loss components over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Builds one encoder input row: embedding first, then raw bag-of-words
/// counts, according to the input mode.
pub fn input_vector(
    config: &ModelConfig,
    embedding: Option<&[f32]>,
    bow: Option<&BowVector>,
) -> Result<Vec<f64>, ModelError> {
    let mode = config.input_mode;
    let mut row = Vec::with_capacity(config.input_dim());
    if mode.uses_embedding() {
        let e = embedding.ok_or(ModelError::MissingInput {
            mode,
            what: "a document embedding",
        })?;
        if e.len() != config.embedding_dim {
            return Err(ModelError::DimensionMismatch {
                expected: config.embedding_dim,
                found: e.len(),
            });
        }
        row.extend(e.iter().map(|&v| f64::from(v)));
    }
    if mode.uses_bow() {
        let b = bow.ok_or(ModelError::MissingInput {
            mode,
            what: "a bag of words",
        })?;
        if b.vocab_size() != config.vocab_size {
            return Err(ModelError::DimensionMismatch {
                expected: config.vocab_size,
                found: b.vocab_size(),
            });
        }
        row.extend(b.to_dense());
    }
    Ok(row)
}

/// Dense design matrix and reconstruction targets for training.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub ids: Vec<String>,
    /// `(N, input_dim)`
    pub inputs: Array2<f64>,
    /// `(N, V)` raw counts
    pub targets: Array2<f64>,
    /// Documents dropped because their bag of words was empty.
    pub excluded_zero_bow: usize,
}

impl TrainingSet {
    /// Joins bags of words with embeddings by id. Empty bags of words are
    /// excluded and counted; missing embeddings are an error in the modes
    /// that need them.
    pub fn build(
        docs: &[(String, BowVector)],
        embeddings: Option<&EmbeddingMatrix>,
        config: &ModelConfig,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if config.input_mode.uses_embedding() {
            let m = embeddings.ok_or(ModelError::MissingInput {
                mode: config.input_mode,
                what: "an embedding matrix",
            })?;
            if m.dim() != config.embedding_dim {
                return Err(ModelError::DimensionMismatch {
                    expected: config.embedding_dim,
                    found: m.dim(),
                });
            }
            let missing: Vec<&str> = docs
                .iter()
                .filter(|(id, _)| m.get(id).is_none())
                .map(|(id, _)| id.as_str())
                .collect();
            if let Some(first) = missing.first() {
                return Err(ModelError::MissingEmbeddings {
                    count: missing.len(),
                    example: first.to_string(),
                });
            }
        }

        let kept: Vec<&(String, BowVector)> = docs.iter().filter(|(_, b)| !b.is_zero()).collect();
        let excluded_zero_bow = docs.len() - kept.len();
        if excluded_zero_bow > 0 {
            log::warn!("excluded {excluded_zero_bow} document(s) with an empty bag of words");
        }
        if kept.is_empty() {
            return Err(ModelError::NoTrainingDocuments);
        }

        let mut inputs = Array2::zeros((kept.len(), config.input_dim()));
        let mut targets = Array2::zeros((kept.len(), config.vocab_size));
        for (r, (id, bow)) in kept.iter().enumerate() {
            if bow.vocab_size() != config.vocab_size {
                return Err(ModelError::VocabularyMismatch {
                    expected: config.vocab_size,
                    found: bow.vocab_size(),
                });
            }
            let emb = embeddings.and_then(|m| m.get(id));
            let row = input_vector(config, emb, Some(bow))?;
            inputs
                .row_mut(r)
                .assign(&ndarray::ArrayView1::from(&row[..]));
            for (p, c) in bow.iter() {
                targets[[r, p]] = f64::from(c);
            }
        }
        Ok(Self {
            ids: kept.iter().map(|(id, _)| id.clone()).collect(),
            inputs,
            targets,
            excluded_zero_bow,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Splits a permutation into minibatches. A trailing batch of one document
/// is merged into the previous batch, since batchnorm needs two rows.
fn minibatches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut batches: Vec<&[usize]> = order.chunks(batch_size).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        batches.pop();
        let start = (batches.len() - 1) * batch_size;
        *batches.last_mut().expect("at least one batch") = &order[start..];
    }
    batches
}

/// Trains a model from scratch. Deterministic for a fixed `config.seed`:
/// initialization, shuffling and all noise come from one seeded stream.
pub fn train(
    data: &TrainingSet,
    vocab: Vocabulary,
    config: &ModelConfig,
) -> Result<TopicModel, ModelError> {
    config.validate()?;
    if vocab.len() != config.vocab_size {
        return Err(ModelError::VocabularyMismatch {
            expected: config.vocab_size,
            found: vocab.len(),
        });
    }
    if data.inputs.ncols() != config.input_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: config.input_dim(),
            found: data.inputs.ncols(),
        });
    }
    if data.targets.ncols() != config.vocab_size {
        return Err(ModelError::VocabularyMismatch {
            expected: config.vocab_size,
            found: data.targets.ncols(),
        });
    }
    if config.epochs > 0 && data.len() < 2 {
        return Err(ModelError::BatchTooSmall);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParameters::init(config, &mut rng);
    let prior = laplace_prior(config.num_topics, config.prior_alpha);
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        eps: config.adam_eps,
    };
    let learn_scale = config.learn_decoder_bn_scale;
    let mut state = AdamState::new(&mut params, learn_scale);
    let hidden = *config.hidden_sizes.last().expect("validated");

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        for (batch_idx, batch) in minibatches(&order, config.batch_size)
            .into_iter()
            .enumerate()
        {
            let x = data.inputs.select(Axis(0), batch);
            let y = data.targets.select(Axis(0), batch);
            let noise = Noise::sample(
                &mut rng,
                batch.len(),
                hidden,
                config.num_topics,
                config.dropout_rate,
            );
            let (loss, grads, stats) =
                compute_gradients(&params, config, &prior, x.view(), y.view(), &noise)?;
            if !loss.total.is_finite() || !grads.all_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            adam_step(&mut params, &grads, &mut state, &adam, learn_scale);
            update_running_stats(&mut params, &stats, config.batchnorm_momentum);
            let n = batch.len() as f64;
            sums.0 += loss.total * n;
            sums.1 += loss.recon * n;
            sums.2 += loss.kl * n;
        }
        let n = data.len() as f64;
        let epoch_loss = EpochLoss {
            total: sums.0 / n,
            recon: sums.1 / n,
            kl: sums.2 / n,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} (recon {:.4}, kl {:.4})",
            epoch_loss.total,
            epoch_loss.recon,
            epoch_loss.kl
        );
        log.push(epoch_loss);
    }

    Ok(TopicModel {
        config: config.clone(),
        params,
        vocab,
        training_log: log,
    })
}
