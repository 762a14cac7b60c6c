use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which representation feeds the inference network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Document embedding only (zero-shot capable).
    Contextual,
    /// Bag of words only; the plain ProdLDA encoder.
    Bow,
    /// Embedding concatenated with the bag of words, embedding first.
    Combined,
}

impl InputMode {
    pub fn uses_embedding(self) -> bool {
        matches!(self, InputMode::Contextual | InputMode::Combined)
    }

    pub fn uses_bow(self) -> bool {
        matches!(self, InputMode::Bow | InputMode::Combined)
    }
}

impl std::str::FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contextual" => Ok(InputMode::Contextual),
            "bow" => Ok(InputMode::Bow),
            "combined" => Ok(InputMode::Combined),
            other => Err(format!("unknown input mode {other:?}")),
        }
    }
}

impl std::fmt::Display for InputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputMode::Contextual => "contextual",
            InputMode::Bow => "bow",
            InputMode::Combined => "combined",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_topics: usize,
    pub input_mode: InputMode,
    pub vocab_size: usize,
    /// Zero in `bow` mode.
    pub embedding_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub prior_alpha: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub inference_samples: usize,
    pub batchnorm_momentum: f64,
    pub batchnorm_eps: f64,
    /// When false the decoder batchnorm keeps a unit scale and only learns
    /// its shift.
    pub learn_decoder_bn_scale: bool,
    /// L2-normalize the embedding part of the input before encoding.
    pub normalize_embeddings: bool,
}

impl ModelConfig {
    pub fn new(
        num_topics: usize,
        input_mode: InputMode,
        vocab_size: usize,
        embedding_dim: usize,
    ) -> Self {
        Self {
            num_topics,
            input_mode,
            vocab_size,
            embedding_dim,
            hidden_sizes: vec![100, 100],
            dropout_rate: 0.2,
            prior_alpha: 0.02,
            learning_rate: 2e-3,
            adam_beta1: 0.99,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            inference_samples: 100,
            batchnorm_momentum: 0.1,
            batchnorm_eps: 1e-5,
            learn_decoder_bn_scale: false,
            normalize_embeddings: false,
        }
    }

    /// Width of the encoder input vector.
    pub fn input_dim(&self) -> usize {
        match self.input_mode {
            InputMode::Contextual => self.embedding_dim,
            InputMode::Bow => self.vocab_size,
            InputMode::Combined => self.embedding_dim + self.vocab_size,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.num_topics < 2 {
            return bad("num_topics must be at least 2");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        match self.input_mode {
            InputMode::Bow if self.embedding_dim != 0 => {
                return bad("embedding_dim must be 0 in bow mode")
            }
            InputMode::Contextual | InputMode::Combined if self.embedding_dim == 0 => {
                return bad("embedding_dim must be positive when embeddings are used")
            }
            _ => {}
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes must be non-empty with positive widths");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.prior_alpha > 0.0 && self.prior_alpha.is_finite()) {
            return bad("prior_alpha must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 (batchnorm needs batch statistics)");
        }
        if self.inference_samples == 0 {
            return bad("inference_samples must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.batchnorm_momentum)
            || self.batchnorm_eps.is_nan()
            || self.batchnorm_eps <= 0.0
        {
            return bad("batchnorm momentum must lie in [0, 1] and eps must be positive");
        }
        Ok(())
    }
}
