use ndarray::{Array1, Array2};
use rand::Rng;

use super::config::ModelConfig;

/// Dense affine layer; `weight` is stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot_matrix(output, input, rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

fn glorot_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}

/// Per-feature batch normalization with running statistics for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    pub fn identity(features: usize) -> Self {
        Self {
            scale: Array1::ones(features),
            shift: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }

    pub fn features(&self) -> usize {
        self.scale.len()
    }
}

/// Every tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub input_adapter: Linear,
    pub hidden_layers: Vec<Linear>,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub mu_bn: BatchNorm,
    pub logvar_bn: BatchNorm,
    pub decoder_bn: BatchNorm,
    /// Topic-word weights, `(K, V)`, unnormalized.
    pub beta: Array2<f64>,
}

impl ModelParameters {
    /// Seeded Glorot initialization. Draw order is fixed: adapter, hidden
    /// layers, mu head, logvar head, beta.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let k = config.num_topics;
        let hs = &config.hidden_sizes;
        let input_adapter = Linear::glorot(config.input_dim(), hs[0], rng);
        let hidden_layers = hs
            .windows(2)
            .map(|w| Linear::glorot(w[0], w[1], rng))
            .collect();
        let last = *hs.last().expect("validated non-empty");
        let mu_head = Linear::glorot(last, k, rng);
        let logvar_head = Linear::glorot(last, k, rng);
        let beta = glorot_matrix(k, config.vocab_size, rng);
        Self {
            input_adapter,
            hidden_layers,
            mu_head,
            logvar_head,
            mu_bn: BatchNorm::identity(k),
            logvar_bn: BatchNorm::identity(k),
            decoder_bn: BatchNorm::identity(config.vocab_size),
            beta,
        }
    }

    /// All-zero weights and biases, identity batchnorms.
    pub fn zeros(config: &ModelConfig) -> Self {
        let k = config.num_topics;
        let hs = &config.hidden_sizes;
        let last = *hs.last().expect("validated non-empty");
        Self {
            input_adapter: Linear::zeros(config.input_dim(), hs[0]),
            hidden_layers: hs.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
            mu_head: Linear::zeros(last, k),
            logvar_head: Linear::zeros(last, k),
            mu_bn: BatchNorm::identity(k),
            logvar_bn: BatchNorm::identity(k),
            decoder_bn: BatchNorm::identity(config.vocab_size),
            beta: Array2::zeros((k, config.vocab_size)),
        }
    }

    pub fn num_topics(&self) -> usize {
        self.beta.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.input_adapter.input_dim()
    }

    /// Every stored tensor with its name and shape, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        type Entry<'a> = (String, Vec<usize>, &'a [f64]);
        let mut out: Vec<Entry<'_>> = Vec::new();
        fn linear<'a>(name: String, l: &'a Linear, out: &mut Vec<Entry<'a>>) {
            out.push((
                format!("{name}.weight"),
                l.weight.shape().to_vec(),
                slice(&l.weight),
            ));
            out.push((format!("{name}.bias"), vec![l.bias.len()], slice1(&l.bias)));
        }
        linear("input_adapter".into(), &self.input_adapter, &mut out);
        for (i, l) in self.hidden_layers.iter().enumerate() {
            linear(format!("hidden.{i}"), l, &mut out);
        }
        linear("mu_head".into(), &self.mu_head, &mut out);
        linear("logvar_head".into(), &self.logvar_head, &mut out);
        for (name, bn) in [
            ("mu_bn", &self.mu_bn),
            ("logvar_bn", &self.logvar_bn),
            ("decoder_bn", &self.decoder_bn),
        ] {
            let n = bn.features();
            out.push((format!("{name}.scale"), vec![n], slice1(&bn.scale)));
            out.push((format!("{name}.shift"), vec![n], slice1(&bn.shift)));
            out.push((
                format!("{name}.running_mean"),
                vec![n],
                slice1(&bn.running_mean),
            ));
            out.push((
                format!("{name}.running_var"),
                vec![n],
                slice1(&bn.running_var),
            ));
        }
        out.push(("beta".into(), self.beta.shape().to_vec(), slice(&self.beta)));
        out
    }

    /// Mutable views of the same tensors, same order as [`Self::named_tensors`].
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        fn linear<'a>(name: String, l: &'a mut Linear, out: &mut Vec<(String, &'a mut [f64])>) {
            out.push((format!("{name}.weight"), slice_mut(&mut l.weight)));
            out.push((format!("{name}.bias"), slice1_mut(&mut l.bias)));
        }
        linear("input_adapter".into(), &mut self.input_adapter, &mut out);
        for (i, l) in self.hidden_layers.iter_mut().enumerate() {
            linear(format!("hidden.{i}"), l, &mut out);
        }
        linear("mu_head".into(), &mut self.mu_head, &mut out);
        linear("logvar_head".into(), &mut self.logvar_head, &mut out);
        for (name, bn) in [
            ("mu_bn", &mut self.mu_bn),
            ("logvar_bn", &mut self.logvar_bn),
            ("decoder_bn", &mut self.decoder_bn),
        ] {
            out.push((format!("{name}.scale"), slice1_mut(&mut bn.scale)));
            out.push((format!("{name}.shift"), slice1_mut(&mut bn.shift)));
            out.push((
                format!("{name}.running_mean"),
                slice1_mut(&mut bn.running_mean),
            ));
            out.push((
                format!("{name}.running_var"),
                slice1_mut(&mut bn.running_var),
            ));
        }
        out.push(("beta".into(), slice_mut(&mut self.beta)));
        out
    }

    /// Mutable views of the tensors the optimizer updates, in the same order
    /// as [`Gradients::trainable`].
    pub fn trainable_mut(&mut self, learn_decoder_scale: bool) -> Vec<(String, &mut [f64])> {
        self.named_tensors_mut()
            .into_iter()
            .filter(|(name, _)| is_trainable(name, learn_decoder_scale))
            .collect()
    }

    pub fn trainable_count(&self, learn_decoder_scale: bool) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(name, _, _)| is_trainable(name, learn_decoder_scale))
            .map(|(_, _, data)| data.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }
}

fn is_trainable(name: &str, learn_decoder_scale: bool) -> bool {
    if name.ends_with(".running_mean") || name.ends_with(".running_var") {
        return false;
    }
    learn_decoder_scale || name != "decoder_bn.scale"
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrad {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

impl BatchNormGrad {
    fn zeros(n: usize) -> Self {
        Self {
            scale: Array1::zeros(n),
            shift: Array1::zeros(n),
        }
    }
}

/// Gradient of the loss with respect to every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub input_adapter: Linear,
    pub hidden_layers: Vec<Linear>,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub mu_bn: BatchNormGrad,
    pub logvar_bn: BatchNormGrad,
    pub decoder_bn: BatchNormGrad,
    pub beta: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParameters) -> Self {
        let lin = |l: &Linear| Linear::zeros(l.input_dim(), l.output_dim());
        Self {
            input_adapter: lin(&params.input_adapter),
            hidden_layers: params.hidden_layers.iter().map(lin).collect(),
            mu_head: lin(&params.mu_head),
            logvar_head: lin(&params.logvar_head),
            mu_bn: BatchNormGrad::zeros(params.mu_bn.features()),
            logvar_bn: BatchNormGrad::zeros(params.logvar_bn.features()),
            decoder_bn: BatchNormGrad::zeros(params.decoder_bn.features()),
            beta: Array2::zeros(params.beta.raw_dim()),
        }
    }

    /// Named gradient slices matching [`ModelParameters::trainable_mut`].
    pub fn trainable(&self, learn_decoder_scale: bool) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        fn linear<'a>(name: String, l: &'a Linear, out: &mut Vec<(String, &'a [f64])>) {
            out.push((format!("{name}.weight"), slice(&l.weight)));
            out.push((format!("{name}.bias"), slice1(&l.bias)));
        }
        linear("input_adapter".into(), &self.input_adapter, &mut out);
        for (i, l) in self.hidden_layers.iter().enumerate() {
            linear(format!("hidden.{i}"), l, &mut out);
        }
        linear("mu_head".into(), &self.mu_head, &mut out);
        linear("logvar_head".into(), &self.logvar_head, &mut out);
        for (name, bn) in [
            ("mu_bn", &self.mu_bn),
            ("logvar_bn", &self.logvar_bn),
            ("decoder_bn", &self.decoder_bn),
        ] {
            out.push((format!("{name}.scale"), slice1(&bn.scale)));
            out.push((format!("{name}.shift"), slice1(&bn.shift)));
        }
        out.push(("beta".into(), slice(&self.beta)));
        out.retain(|(name, _)| is_trainable(name, learn_decoder_scale));
        out
    }

    pub fn norm(&self, learn_decoder_scale: bool) -> f64 {
        self.trainable(learn_decoder_scale)
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.trainable(true)
            .iter()
            .all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::InputMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_count(i: usize, o: usize) -> usize {
        i * o + o
    }

    #[test]
    fn bow_mode_matches_prodlda_parameter_count() {
        let (v, k) = (50, 5);
        let cfg = ModelConfig::new(k, InputMode::Bow, v, 0);
        let p = ModelParameters::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        // ProdLDA: V->100->100 softplus encoder, two K heads, affine bn on the
        // heads, shift-only bn on the decoder, K x V topic-word matrix.
        let expected = linear_count(v, 100)
            + linear_count(100, 100)
            + 2 * linear_count(100, k)
            + 2 * 2 * k
            + v
            + k * v;
        assert_eq!(p.trainable_count(false), expected);
    }

    #[test]
    fn adapter_width_tracks_input_mode() {
        let (v, e, k) = (30, 8, 4);
        let count = |mode, e| {
            let cfg = ModelConfig::new(k, mode, v, e);
            ModelParameters::zeros(&cfg).trainable_count(false)
        };
        let bow = count(InputMode::Bow, 0);
        let ctx = count(InputMode::Contextual, e);
        let comb = count(InputMode::Combined, e);
        // only the adapter's fan-in changes
        assert_eq!(ctx as isize - bow as isize, (e as isize - v as isize) * 100);
        assert_eq!(comb - bow, e * 100);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::new(3, InputMode::Contextual, 7, 4);
        let a = ModelParameters::init(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = ModelParameters::init(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let limit = (6.0f64 / (4 + 100) as f64).sqrt();
        assert!(a.input_adapter.weight.iter().all(|w| w.abs() <= limit));
        assert!(a.input_adapter.bias.iter().all(|&b| b == 0.0));
        assert!(a.all_finite());
    }

    #[test]
    fn trainable_views_line_up() {
        let mut cfg = ModelConfig::new(3, InputMode::Combined, 7, 4);
        cfg.hidden_sizes = vec![5, 6];
        let mut p = ModelParameters::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let g = Gradients::zeros_like(&p);
        for learn in [false, true] {
            let gn: Vec<(String, usize)> = g
                .trainable(learn)
                .iter()
                .map(|(n, s)| (n.clone(), s.len()))
                .collect();
            let pn: Vec<(String, usize)> = p
                .trainable_mut(learn)
                .iter()
                .map(|(n, s)| (n.clone(), s.len()))
                .collect();
            assert_eq!(gn, pn);
        }
        assert!(!g
            .trainable(false)
            .iter()
            .any(|(n, _)| n == "decoder_bn.scale"));
    }
}
