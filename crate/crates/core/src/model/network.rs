//! Forward pass, ELBO and its exact gradient for the fixed encoder/decoder
//! architecture.
//!
//! Shapes use `B` for batch, `D` for input width, `H` for hidden width, `K`
//! for topics and `V` for vocabulary. All batch tensors are row-major with
//! one document per row.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use super::params::{BatchNorm, BatchNormGrad, Gradients, Linear, ModelParameters};
use super::prior::PriorParams;
use super::ModelError;

/// Stochastic draws used by one training step: reparameterization noise and
/// the two dropout masks. Mask entries are already scaled, i.e. either 0 or
/// `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub eps: Array2<f64>,
    pub encoder_mask: Array2<f64>,
    pub theta_mask: Array2<f64>,
}

impl Noise {
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        batch: usize,
        hidden: usize,
        topics: usize,
        dropout: f64,
    ) -> Self {
        let eps = Array2::from_shape_simple_fn((batch, topics), || StandardNormal.sample(rng));
        let keep = 1.0 / (1.0 - dropout);
        let mut mask = |cols| {
            Array2::from_shape_simple_fn((batch, cols), || {
                if dropout > 0.0 && rng.random::<f64>() < dropout {
                    0.0
                } else {
                    keep
                }
            })
        };
        let encoder_mask = mask(hidden);
        let theta_mask = mask(topics);
        Self {
            eps,
            encoder_mask,
            theta_mask,
        }
    }

    /// Zero noise and no dropout.
    pub fn none(batch: usize, hidden: usize, topics: usize) -> Self {
        Self {
            eps: Array2::zeros((batch, topics)),
            encoder_mask: Array2::ones((batch, hidden)),
            theta_mask: Array2::ones((batch, topics)),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.eps.nrows()
    }
}

/// Training uses batch statistics and the dropout masks in `Noise`;
/// evaluation uses running statistics and no dropout.
#[derive(Debug, Clone, Copy)]
pub enum Phase<'a> {
    Train(&'a Noise),
    Eval,
}

/// Posterior parameters for a batch, each `(B, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
}

/// Loss components, each averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Batch mean and biased variance of the three batchnorm inputs, used to
/// update running statistics after a step.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mu: (Array1<f64>, Array1<f64>),
    pub logvar: (Array1<f64>, Array1<f64>),
    pub decoder: (Array1<f64>, Array1<f64>),
    pub batch_size: usize,
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(v: ArrayView1<f64>) -> Array1<f64> {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut out = v.mapv(|x| (x - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let sm = softmax(row.view());
        row.assign(&sm);
    }
    out
}

fn log_softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

fn affine(x: &Array2<f64>, layer: &Linear) -> Array2<f64> {
    x.dot(&layer.weight.t()) + &layer.bias
}

struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

fn batchnorm_train(x: &Array2<f64>, bn: &BatchNorm, eps: f64) -> (Array2<f64>, BnCache) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = x - &mean;
    let var = centered
        .mapv(|c| c * c)
        .mean_axis(Axis(0))
        .expect("non-empty batch");
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = centered * &inv_std;
    let out = &xhat * &bn.scale + &bn.shift;
    (
        out,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

fn batchnorm_eval(x: &Array2<f64>, bn: &BatchNorm, eps: f64) -> Array2<f64> {
    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + eps).sqrt());
    ((x - &bn.running_mean) * &inv_std) * &bn.scale + &bn.shift
}

/// Returns the input gradient and accumulates the scale/shift gradients.
fn batchnorm_backward(
    dout: &Array2<f64>,
    bn: &BatchNorm,
    cache: &BnCache,
    grad: &mut BatchNormGrad,
) -> Array2<f64> {
    let b = dout.nrows() as f64;
    grad.shift += &dout.sum_axis(Axis(0));
    grad.scale += &(dout * &cache.xhat).sum_axis(Axis(0));
    let dxhat = dout * &bn.scale;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let mut dx = dxhat * b - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat;
    dx *= &(&cache.inv_std / b);
    dx
}

fn check_input(config: &ModelConfig, x: &ArrayView2<f64>) -> Result<(), ModelError> {
    if x.ncols() != config.input_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: config.input_dim(),
            found: x.ncols(),
        });
    }
    if x.nrows() == 0 {
        return Err(ModelError::EmptyBatch);
    }
    Ok(())
}

fn prepare_input(config: &ModelConfig, x: ArrayView2<f64>) -> Array2<f64> {
    let mut x = x.to_owned();
    if config.normalize_embeddings && config.input_mode.uses_embedding() {
        let e = config.embedding_dim;
        for mut row in x.rows_mut() {
            let mut emb = row.slice_mut(s![..e]);
            let norm = emb.dot(&emb).sqrt();
            if norm > 0.0 {
                emb /= norm;
            }
        }
    }
    x
}

/// Encoder activations kept for the backward pass.
struct EncoderCache {
    input: Array2<f64>,
    /// Pre-activations of the adapter followed by each hidden layer.
    pre: Vec<Array2<f64>>,
    /// Post-softplus activations, same indexing as `pre`.
    post: Vec<Array2<f64>>,
    dropped: Array2<f64>,
    mu_bn: Option<BnCache>,
    logvar_bn: Option<BnCache>,
}

fn encode_inner(
    params: &ModelParameters,
    config: &ModelConfig,
    x: ArrayView2<f64>,
    phase: Phase<'_>,
) -> (Posterior, EncoderCache) {
    let input = prepare_input(config, x);
    let mut pre = Vec::with_capacity(1 + params.hidden_layers.len());
    let mut post = Vec::with_capacity(1 + params.hidden_layers.len());
    let mut h = input.clone();
    for layer in std::iter::once(&params.input_adapter).chain(&params.hidden_layers) {
        let a = affine(&h, layer);
        h = a.mapv(softplus);
        pre.push(a);
        post.push(h.clone());
    }
    let dropped = match phase {
        Phase::Train(noise) => &h * &noise.encoder_mask,
        Phase::Eval => h,
    };
    let mu_raw = affine(&dropped, &params.mu_head);
    let lv_raw = affine(&dropped, &params.logvar_head);
    let eps = config.batchnorm_eps;
    let (mu, logvar, mu_bn, logvar_bn) = match phase {
        Phase::Train(_) => {
            let (mu, mc) = batchnorm_train(&mu_raw, &params.mu_bn, eps);
            let (lv, lc) = batchnorm_train(&lv_raw, &params.logvar_bn, eps);
            (mu, lv, Some(mc), Some(lc))
        }
        Phase::Eval => (
            batchnorm_eval(&mu_raw, &params.mu_bn, eps),
            batchnorm_eval(&lv_raw, &params.logvar_bn, eps),
            None,
            None,
        ),
    };
    (
        Posterior { mu, logvar },
        EncoderCache {
            input,
            pre,
            post,
            dropped,
            mu_bn,
            logvar_bn,
        },
    )
}

/// Maps a batch of inputs to posterior means and log-variances.
pub fn encode(
    params: &ModelParameters,
    config: &ModelConfig,
    x: ArrayView2<f64>,
    phase: Phase<'_>,
) -> Result<Posterior, ModelError> {
    check_input(config, &x)?;
    if let Phase::Train(noise) = phase {
        check_noise(noise, x.nrows(), config)?;
    }
    Ok(encode_inner(params, config, x, phase).0)
}

/// `z = mu + exp(logvar / 2) * eps`, elementwise.
pub fn reparameterize(
    mu: ArrayView2<f64>,
    logvar: ArrayView2<f64>,
    eps: ArrayView2<f64>,
) -> Array2<f64> {
    let mut z = mu.to_owned();
    Zip::from(&mut z)
        .and(&logvar)
        .and(&eps)
        .for_each(|z, &lv, &e| *z += (0.5 * lv).exp() * e);
    z
}

struct DecoderCache {
    theta: Array2<f64>,
    theta_dropped: Array2<f64>,
    bn: Option<BnCache>,
    log_word_dist: Array2<f64>,
}

fn decode_inner(
    params: &ModelParameters,
    config: &ModelConfig,
    z: &Array2<f64>,
    phase: Phase<'_>,
) -> DecoderCache {
    let theta = softmax_rows(z);
    let theta_dropped = match phase {
        Phase::Train(noise) => &theta * &noise.theta_mask,
        Phase::Eval => theta.clone(),
    };
    let logits = theta_dropped.dot(&params.beta);
    let (normed, bn) = match phase {
        Phase::Train(_) => {
            let (out, cache) = batchnorm_train(&logits, &params.decoder_bn, config.batchnorm_eps);
            (out, Some(cache))
        }
        Phase::Eval => (
            batchnorm_eval(&logits, &params.decoder_bn, config.batchnorm_eps),
            None,
        ),
    };
    DecoderCache {
        theta,
        theta_dropped,
        bn,
        log_word_dist: log_softmax_rows(&normed),
    }
}

/// Word distributions `(B, V)` for latent samples `z`; each row is a
/// softmax, so it is positive and sums to one.
pub fn decode(
    params: &ModelParameters,
    config: &ModelConfig,
    z: ArrayView2<f64>,
    phase: Phase<'_>,
) -> Array2<f64> {
    let cache = decode_inner(params, config, &z.to_owned(), phase);
    cache.log_word_dist.mapv(f64::exp)
}

fn check_noise(noise: &Noise, batch: usize, config: &ModelConfig) -> Result<(), ModelError> {
    let hidden = *config.hidden_sizes.last().expect("validated");
    let k = config.num_topics;
    if noise.eps.dim() != (batch, k)
        || noise.encoder_mask.dim() != (batch, hidden)
        || noise.theta_mask.dim() != (batch, k)
    {
        return Err(ModelError::NoiseShape);
    }
    Ok(())
}

fn check_targets(bows: &ArrayView2<f64>, batch: usize, vocab: usize) -> Result<(), ModelError> {
    if bows.dim() != (batch, vocab) {
        return Err(ModelError::DimensionMismatch {
            expected: vocab,
            found: bows.ncols(),
        });
    }
    for (row, r) in bows.rows().into_iter().enumerate() {
        if r.sum() <= 0.0 {
            return Err(ModelError::ZeroBowTarget { row });
        }
    }
    Ok(())
}

/// Per-document KL( N(mu, exp(logvar)) || N(prior.mean, prior.variance) ).
pub fn kl_to_prior(mu: ArrayView1<f64>, logvar: ArrayView1<f64>, prior: &PriorParams) -> f64 {
    let mut kl = 0.0;
    for k in 0..mu.len() {
        let pv = prior.variance[k];
        let diff = prior.mean[k] - mu[k];
        // ln(pv) - logvar written as -ln(ratio) so that q == p gives exactly 0
        let ratio = logvar[k].exp() / pv;
        kl += ratio - 1.0 - ratio.ln() + diff * diff / pv;
    }
    0.5 * kl
}

struct ForwardTrain {
    posterior: Posterior,
    enc: EncoderCache,
    dec: DecoderCache,
    loss: LossParts,
}

fn forward_train(
    params: &ModelParameters,
    config: &ModelConfig,
    prior: &PriorParams,
    x: ArrayView2<f64>,
    bows: ArrayView2<f64>,
    noise: &Noise,
) -> Result<ForwardTrain, ModelError> {
    check_input(config, &x)?;
    let b = x.nrows();
    check_noise(noise, b, config)?;
    check_targets(&bows, b, params.vocab_size())?;
    if b < 2 {
        return Err(ModelError::BatchTooSmall);
    }
    let phase = Phase::Train(noise);
    let (posterior, enc) = encode_inner(params, config, x, phase);
    let z = reparameterize(
        posterior.mu.view(),
        posterior.logvar.view(),
        noise.eps.view(),
    );
    let dec = decode_inner(params, config, &z, phase);

    let recon = -(&bows * &dec.log_word_dist).sum() / b as f64;
    let kl = posterior
        .mu
        .rows()
        .into_iter()
        .zip(posterior.logvar.rows())
        .map(|(m, lv)| kl_to_prior(m, lv, prior))
        .sum::<f64>()
        / b as f64;
    Ok(ForwardTrain {
        posterior,
        enc,
        dec,
        loss: LossParts {
            total: recon + kl,
            recon,
            kl,
        },
    })
}

/// Negative ELBO of a batch under fixed noise, in training phase.
pub fn elbo_loss(
    params: &ModelParameters,
    config: &ModelConfig,
    prior: &PriorParams,
    x: ArrayView2<f64>,
    bows: ArrayView2<f64>,
    noise: &Noise,
) -> Result<LossParts, ModelError> {
    Ok(forward_train(params, config, prior, x, bows, noise)?.loss)
}

/// Loss, exact gradient and the batch statistics of one training step.
pub fn compute_gradients(
    params: &ModelParameters,
    config: &ModelConfig,
    prior: &PriorParams,
    x: ArrayView2<f64>,
    bows: ArrayView2<f64>,
    noise: &Noise,
) -> Result<(LossParts, Gradients, BatchStats), ModelError> {
    let fwd = forward_train(params, config, prior, x, bows, noise)?;
    let b = x.nrows();
    let bf = b as f64;
    let mut grads = Gradients::zeros_like(params);

    // d(recon)/d(decoder logits) for a log-softmax likelihood.
    let totals = bows.sum_axis(Axis(1));
    let word_dist = fwd.dec.log_word_dist.mapv(f64::exp);
    let mut d_normed = word_dist * &totals.insert_axis(Axis(1)) - bows;
    d_normed /= bf;

    let dec_bn = fwd.dec.bn.as_ref().expect("train phase");
    let d_logits = batchnorm_backward(&d_normed, &params.decoder_bn, dec_bn, &mut grads.decoder_bn);
    grads.beta = standard(fwd.dec.theta_dropped.t().dot(&d_logits));
    let d_theta = d_logits.dot(&params.beta.t()) * &noise.theta_mask;

    // softmax backward, row by row
    let theta = &fwd.dec.theta;
    let inner = (theta * &d_theta).sum_axis(Axis(1)).insert_axis(Axis(1));
    let dz = theta * &(&d_theta - &inner);

    let mu = &fwd.posterior.mu;
    let logvar = &fwd.posterior.logvar;
    let prior_mean = Array1::from(prior.mean.clone());
    let prior_var = Array1::from(prior.variance.clone());
    let d_mu = &dz + &((mu - &prior_mean) / &prior_var / bf);
    let std = logvar.mapv(|lv| (0.5 * lv).exp());
    let d_logvar =
        &dz * &noise.eps * &std * 0.5 + &((logvar.mapv(f64::exp) / &prior_var - 1.0) * (0.5 / bf));

    let enc = &fwd.enc;
    let d_mu_raw = batchnorm_backward(
        &d_mu,
        &params.mu_bn,
        enc.mu_bn.as_ref().expect("train phase"),
        &mut grads.mu_bn,
    );
    let d_lv_raw = batchnorm_backward(
        &d_logvar,
        &params.logvar_bn,
        enc.logvar_bn.as_ref().expect("train phase"),
        &mut grads.logvar_bn,
    );
    grads.mu_head.weight = standard(d_mu_raw.t().dot(&enc.dropped));
    grads.mu_head.bias = d_mu_raw.sum_axis(Axis(0));
    grads.logvar_head.weight = standard(d_lv_raw.t().dot(&enc.dropped));
    grads.logvar_head.bias = d_lv_raw.sum_axis(Axis(0));

    let d_dropped = d_mu_raw.dot(&params.mu_head.weight) + d_lv_raw.dot(&params.logvar_head.weight);
    let mut d_h = d_dropped * &noise.encoder_mask;

    let layers = 1 + params.hidden_layers.len();
    for l in (0..layers).rev() {
        let d_a = &d_h * &enc.pre[l].mapv(sigmoid);
        let below = if l == 0 { &enc.input } else { &enc.post[l - 1] };
        let (layer, grad) = if l == 0 {
            (&params.input_adapter, &mut grads.input_adapter)
        } else {
            (
                &params.hidden_layers[l - 1],
                &mut grads.hidden_layers[l - 1],
            )
        };
        grad.weight = standard(d_a.t().dot(below));
        grad.bias = d_a.sum_axis(Axis(0));
        if l > 0 {
            d_h = d_a.dot(&layer.weight);
        }
    }

    let stats = BatchStats {
        mu: bn_stats(enc.mu_bn.as_ref()),
        logvar: bn_stats(enc.logvar_bn.as_ref()),
        decoder: bn_stats(fwd.dec.bn.as_ref()),
        batch_size: b,
    };
    Ok((fwd.loss, grads, stats))
}

/// Products with a transposed operand may come back column-major; the
/// optimizer and checkpoint code need row-major storage.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn bn_stats(cache: Option<&BnCache>) -> (Array1<f64>, Array1<f64>) {
    let c = cache.expect("train phase");
    (c.mean.clone(), c.var.clone())
}

/// Exponential moving average of batch statistics. The variance estimate
/// is unbiased (`n / (n - 1)`).
pub fn update_running_stats(params: &mut ModelParameters, stats: &BatchStats, momentum: f64) {
    let n = stats.batch_size as f64;
    let correction = if stats.batch_size > 1 {
        n / (n - 1.0)
    } else {
        1.0
    };
    for (bn, (mean, var)) in [
        (&mut params.mu_bn, &stats.mu),
        (&mut params.logvar_bn, &stats.logvar),
        (&mut params.decoder_bn, &stats.decoder),
    ] {
        bn.running_mean = &bn.running_mean * (1.0 - momentum) + mean * momentum;
        bn.running_var = &bn.running_var * (1.0 - momentum) + var * (momentum * correction);
    }
}
