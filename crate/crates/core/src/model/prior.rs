//! Gaussian approximation of a symmetric Dirichlet prior in the softmax basis.

/// Mean and variance of the logistic-normal prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorParams {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PriorParams {
    pub fn num_topics(&self) -> usize {
        self.mean.len()
    }
}

/// Laplace approximation of Dirichlet(alpha, ..., alpha) over `k` topics:
///
/// ```text
/// mean_k     = log a_k - (1/K) sum_j log a_j
/// variance_k = (1/a_k)(1 - 2/K) + (1/K^2) sum_j 1/a_j
/// ```
///
/// With a symmetric alpha the mean is exactly zero.
pub fn laplace_prior(k: usize, alpha: f64) -> PriorParams {
    assert!(k >= 2, "need at least two topics");
    assert!(alpha > 0.0, "alpha must be positive");
    let kf = k as f64;
    let inv_alpha = 1.0 / alpha;
    // (1 - 2/K) written as (K - 2)/K and the symmetric sum collapsed to
    // K/alpha, which keeps the usual settings exact in floating point.
    let variance = inv_alpha * (kf - 2.0) / kf + (kf * inv_alpha) / (kf * kf);
    PriorParams {
        mean: vec![0.0; k],
        variance: vec![variance; k],
    }
}
