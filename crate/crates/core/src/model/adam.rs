use super::params::{Gradients, ModelParameters};

/// Hyperparameters of the Adam update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First/second moment estimates per trainable tensor plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &mut ModelParameters, learn_decoder_scale: bool) -> Self {
        let sizes: Vec<usize> = params
            .trainable_mut(learn_decoder_scale)
            .iter()
            .map(|(_, s)| s.len())
            .collect();
        Self {
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam on flat slices:
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    debug_assert!(step >= 1);
    let bc1 = 1.0 - cfg.beta1.powf(step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(step as f64);
    for i in 0..param.len() {
        let g = grad[i];
        first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * g;
        second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = first[i] / bc1;
        let v_hat = second[i] / bc2;
        param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One optimizer step over every trainable tensor.
pub fn adam_step(
    params: &mut ModelParameters,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
    learn_decoder_scale: bool,
) {
    state.step += 1;
    let grads = grads.trainable(learn_decoder_scale);
    let tensors = params.trainable_mut(learn_decoder_scale);
    assert_eq!(
        tensors.len(),
        grads.len(),
        "gradient/parameter layout mismatch"
    );
    for (i, ((pname, p), (gname, g))) in tensors.into_iter().zip(grads).enumerate() {
        debug_assert_eq!(pname, gname);
        adam_update(
            p,
            g,
            &mut state.first[i],
            &mut state.second[i],
            state.step,
            cfg,
        );
    }
}
