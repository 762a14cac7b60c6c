#![allow(dead_code)]

use ctm_core::model::{
    compute_gradients, elbo_loss, laplace_prior, InputMode, ModelConfig, ModelParameters, Noise,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Floor on the relative-error denominator. Central differences at
/// h = 1e-4 on a loss of order 10 carry about 1e-11 of rounding noise, so
/// gradients below this floor are compared in absolute terms (1e-10).
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

/// `|n - a| / max(|n| + |a|, DENOMINATOR_FLOOR)`
pub fn relative_error(numerical: f64, analytical: f64) -> f64 {
    (numerical - analytical).abs() / (numerical.abs() + analytical.abs()).max(DENOMINATOR_FLOOR)
}

pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// A random instance: parameters with perturbed batchnorm affine terms,
/// inputs, positive-count bag-of-words targets and sampled noise.
pub struct Instance {
    pub config: ModelConfig,
    pub params: ModelParameters,
    pub x: Array2<f64>,
    pub bows: Array2<f64>,
    pub noise: Noise,
}

pub fn random_instance(
    mode: InputMode,
    vocab: usize,
    emb: usize,
    topics: usize,
    hidden: Vec<usize>,
    batch: usize,
    seed: u64,
) -> Instance {
    let emb = if mode == InputMode::Bow { 0 } else { emb };
    let mut config = ModelConfig::new(topics, mode, vocab, emb);
    config.hidden_sizes = hidden;
    config.prior_alpha = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParameters::init(&config, &mut rng);
    for bn in [
        &mut params.mu_bn,
        &mut params.logvar_bn,
        &mut params.decoder_bn,
    ] {
        bn.scale.mapv_inplace(|_| rng.random_range(0.5..1.5));
        bn.shift.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    for l in std::iter::once(&mut params.input_adapter)
        .chain(params.hidden_layers.iter_mut())
        .chain([&mut params.mu_head, &mut params.logvar_head])
    {
        l.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    let mut bows = Array2::from_shape_simple_fn((batch, vocab), || rng.random_range(0..3) as f64);
    for mut row in bows.rows_mut() {
        if row.sum() == 0.0 {
            row[0] = 1.0;
        }
    }
    let emb_part = Array2::from_shape_simple_fn((batch, emb), || rng.random_range(-1.0..1.0));
    let x = match mode {
        InputMode::Contextual => emb_part,
        InputMode::Bow => bows.clone(),
        InputMode::Combined => ndarray::concatenate![ndarray::Axis(1), emb_part, bows],
    };
    let hidden_last = *config.hidden_sizes.last().unwrap();
    let noise = Noise::sample(&mut rng, batch, hidden_last, topics, config.dropout_rate);
    Instance {
        config,
        params,
        x,
        bows,
        noise,
    }
}

/// Central finite differences over every trainable scalar.
pub fn check_gradients(inst: &Instance, h: f64) -> GradCheck {
    let prior = laplace_prior(inst.config.num_topics, inst.config.prior_alpha);
    let learn = inst.config.learn_decoder_bn_scale;
    let (_, grads, _) = compute_gradients(
        &inst.params,
        &inst.config,
        &prior,
        inst.x.view(),
        inst.bows.view(),
        &inst.noise,
    )
    .expect("gradients");
    let analytic: Vec<(String, Vec<f64>)> = grads
        .trainable(learn)
        .into_iter()
        .map(|(n, g)| (n, g.to_vec()))
        .collect();

    let loss_at = |p: &ModelParameters| {
        elbo_loss(
            p,
            &inst.config,
            &prior,
            inst.x.view(),
            inst.bows.view(),
            &inst.noise,
        )
        .expect("loss")
        .total
    };

    let mut params = inst.params.clone();
    let mut out = GradCheck {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (t, (name, g)) in analytic.iter().enumerate() {
        for (i, &analytic_i) in g.iter().enumerate() {
            let orig = params.trainable_mut(learn)[t].1[i];
            params.trainable_mut(learn)[t].1[i] = orig + h;
            let plus = loss_at(&params);
            params.trainable_mut(learn)[t].1[i] = orig - h;
            let minus = loss_at(&params);
            params.trainable_mut(learn)[t].1[i] = orig;
            let numerical = (plus - minus) / (2.0 * h);
            let err = relative_error(numerical, analytic_i);
            out.checked += 1;
            if err > out.max_relative_error {
                out.max_relative_error = err;
                out.worst =
                    format!("{name}[{i}]: numerical {numerical:e}, analytic {analytic_i:e}");
            }
        }
    }
    out
}
