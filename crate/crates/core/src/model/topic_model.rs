use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use super::network::{encode, softmax, Phase, Posterior};
use super::params::ModelParameters;
use super::train::EpochLoss;
use super::{ModelError, TopicDistribution};
use crate::corpus::Vocabulary;

/// A trained model frozen for inference: batchnorm uses running statistics
/// and dropout is off.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub config: ModelConfig,
    pub params: ModelParameters,
    pub vocab: Vocabulary,
    pub training_log: Vec<EpochLoss>,
}

/// Noise stream for the document at `index`. Each document gets its own
/// ChaCha stream so results do not depend on batching or ordering.
pub fn inference_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

impl TopicModel {
    pub fn num_topics(&self) -> usize {
        self.config.num_topics
    }

    /// Posterior parameters for a batch of inputs, in eval mode.
    pub fn posterior(&self, inputs: ArrayView2<f64>) -> Result<Posterior, ModelError> {
        encode(&self.params, &self.config, inputs, Phase::Eval)
    }

    /// Averages `softmax(mu + sigma * eps)` over `samples` draws.
    pub fn infer_topics<R: Rng + ?Sized>(
        &self,
        input: ArrayView1<f64>,
        samples: usize,
        rng: &mut R,
    ) -> Result<TopicDistribution, ModelError> {
        if samples == 0 {
            return Err(ModelError::ZeroSamples);
        }
        let post = self.posterior(input.insert_axis(Axis(0)))?;
        let mu = post.mu.row(0);
        let std = post.logvar.row(0).mapv(|lv| (0.5 * lv).exp());
        let k = mu.len();
        let mut acc = Array1::<f64>::zeros(k);
        let mut z = Array1::<f64>::zeros(k);
        for _ in 0..samples {
            for i in 0..k {
                let e: f64 = StandardNormal.sample(rng);
                z[i] = mu[i] + std[i] * e;
            }
            acc += &softmax(z.view());
        }
        acc /= samples as f64;
        Ok(normalized(acc))
    }

    /// `softmax(mu)`: the zero-noise, single-sample estimate.
    pub fn infer_noiseless(&self, input: ArrayView1<f64>) -> Result<TopicDistribution, ModelError> {
        let post = self.posterior(input.insert_axis(Axis(0)))?;
        Ok(normalized(softmax(post.mu.row(0))))
    }

    /// Infers every row of `inputs`, row `i` drawing from
    /// `inference_rng(seed, i)`.
    pub fn infer_batch(
        &self,
        inputs: ArrayView2<f64>,
        samples: usize,
        seed: u64,
    ) -> Result<Vec<TopicDistribution>, ModelError> {
        inputs
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| self.infer_topics(row, samples, &mut inference_rng(seed, i as u64)))
            .collect()
    }

    /// Vocabulary indices of each topic's `top_n` heaviest words, by
    /// descending weight with ties going to the lower index.
    pub fn topic_word_indices(&self, top_n: usize) -> Result<Vec<Vec<usize>>, ModelError> {
        top_indices(&self.params.beta, top_n)
    }

    pub fn topic_words(&self, top_n: usize) -> Result<Vec<Vec<String>>, ModelError> {
        Ok(self
            .topic_word_indices(top_n)?
            .into_iter()
            .map(|idx| {
                idx.into_iter()
                    .map(|i| {
                        self.vocab
                            .token(i)
                            .expect("index within vocabulary")
                            .to_string()
                    })
                    .collect()
            })
            .collect())
    }
}

/// Removes rounding drift so the result passes simplex validation.
fn normalized(v: Array1<f64>) -> TopicDistribution {
    let sum = v.sum();
    let v = v.mapv(|x| x / sum).to_vec();
    TopicDistribution::new(v).expect("softmax average lies on the simplex")
}

pub(crate) fn top_indices(beta: &Array2<f64>, top_n: usize) -> Result<Vec<Vec<usize>>, ModelError> {
    let v = beta.ncols();
    if top_n == 0 || top_n > v {
        return Err(ModelError::TopN {
            top_n,
            vocab_size: v,
        });
    }
    Ok(beta
        .rows()
        .into_iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..v).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx.truncate(top_n);
            idx
        })
        .collect())
}

impl ModelParameters {
    /// Convenience for tests and tools: a frozen model around raw
    /// parameters.
    pub fn into_model(self, config: ModelConfig, vocab: Vocabulary) -> TopicModel {
        TopicModel {
            config,
            params: self,
            vocab,
            training_log: Vec::new(),
        }
    }
}
