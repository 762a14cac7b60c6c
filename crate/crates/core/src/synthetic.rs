//! Synthetic parallel corpora with known topic structure.
//!
//! Each document has a true mixture `theta ~ Dirichlet(alpha)`. Its words
//! are drawn from `theta · beta`, where topic `k` puts most of its mass on
//! its own block of the vocabulary. Two "language views" embed the same
//! shared latent `h = W theta` through view-specific maps `P_v = I + s G_v`
//! plus Gaussian noise, so both views carry the same topical signal but
//! differ in their surface representation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal, StandardNormal};

use crate::corpus::{BowVector, Vocabulary};
use crate::embeddings::EmbeddingMatrix;
use crate::model::TopicDistribution;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_docs: usize,
    pub num_topics: usize,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub dirichlet_alpha: f64,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
    /// Share of each topic's mass on its own vocabulary block.
    pub block_mass: f64,
    /// Scale of the view-specific perturbation `G_v`.
    pub view_perturbation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_docs: 2000,
            num_topics: 10,
            vocab_size: 200,
            embedding_dim: 64,
            dirichlet_alpha: 0.1,
            min_doc_len: 50,
            max_doc_len: 100,
            block_mass: 0.9,
            view_perturbation: 0.1,
            noise_sigma: 0.05,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDoc {
    pub id: String,
    pub theta: TopicDistribution,
    pub bow: BowVector,
    pub view_a: Vec<f32>,
    pub view_b: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    A,
    B,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub vocab: Vocabulary,
    /// `(K, V)` true topic-word distributions.
    pub topics: Vec<Vec<f64>>,
    pub docs: Vec<SyntheticDoc>,
}

fn dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    std: f64,
) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Generates a corpus. Deterministic for a fixed config.
///
/// # Panics
///
/// On a config with zero topics, documents shorter than one word, or a
/// vocabulary smaller than the number of topics.
pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let k = config.num_topics;
    let v = config.vocab_size;
    let e = config.embedding_dim;
    assert!(k > 0 && v >= k && e > 0, "degenerate synthetic config");
    assert!(config.min_doc_len >= 1 && config.min_doc_len <= config.max_doc_len);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let block = v / k;
    let topics: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            let inside = dirichlet(&mut rng, 1.0, block);
            let mut dist = vec![(1.0 - config.block_mass) / v as f64; v];
            for (j, w) in inside.into_iter().enumerate() {
                dist[t * block + j] += config.block_mass * w;
            }
            dist
        })
        .collect();

    let w = gaussian_matrix(&mut rng, e, k, 1.0);
    let view_map = |rng: &mut ChaCha8Rng| {
        let mut p = gaussian_matrix(rng, e, e, config.view_perturbation / (e as f64).sqrt());
        for (i, row) in p.iter_mut().enumerate() {
            row[i] += 1.0;
        }
        p
    };
    let p_a = view_map(&mut rng);
    let p_b = view_map(&mut rng);
    let noise = Normal::new(0.0, config.noise_sigma).expect("finite sigma");
    let samplers: Vec<WeightedIndex<f64>> = topics
        .iter()
        .map(|t| WeightedIndex::new(t).expect("valid topic distribution"))
        .collect();

    let width = config.num_docs.to_string().len();
    let docs = (0..config.num_docs)
        .map(|d| {
            let theta = dirichlet(&mut rng, config.dirichlet_alpha, k);
            let topic_of_word = WeightedIndex::new(&theta).expect("theta on the simplex");
            let len = rng.random_range(config.min_doc_len..=config.max_doc_len);
            let mut counts = vec![0u32; v];
            for _ in 0..len {
                let t = topic_of_word.sample(&mut rng);
                counts[samplers[t].sample(&mut rng)] += 1;
            }
            let bow = BowVector::from_pairs(
                v,
                counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(p, &c)| (p, c)),
            )
            .expect("positions within vocabulary");
            let h = mat_vec(&w, &theta);
            let mut embed = |p: &[Vec<f64>]| -> Vec<f32> {
                mat_vec(p, &h)
                    .into_iter()
                    .map(|x| (x + noise.sample(&mut rng)) as f32)
                    .collect()
            };
            let view_a = embed(&p_a);
            let view_b = embed(&p_b);
            SyntheticDoc {
                id: format!("doc{d:0width$}"),
                theta: TopicDistribution::new(theta).expect("dirichlet draw on the simplex"),
                bow,
                view_a,
                view_b,
            }
        })
        .collect();

    let vocab_width = (v - 1).to_string().len();
    let vocab = Vocabulary::from_tokens((0..v).map(|i| format!("w{i:0vocab_width$}")).collect())
        .expect("distinct tokens");
    SyntheticCorpus {
        vocab,
        topics,
        docs,
    }
}

impl SyntheticCorpus {
    /// `(id, bow)` pairs for a slice of documents.
    pub fn bows(docs: &[SyntheticDoc]) -> Vec<(String, BowVector)> {
        docs.iter().map(|d| (d.id.clone(), d.bow.clone())).collect()
    }

    /// One view of a slice of documents as an embedding matrix.
    pub fn embeddings(docs: &[SyntheticDoc], view: View) -> EmbeddingMatrix {
        let dim = docs.first().map_or(1, |d| d.view_a.len());
        let mut m = EmbeddingMatrix::new(dim).expect("positive dimension");
        for d in docs {
            let v = match view {
                View::A => &d.view_a,
                View::B => &d.view_b,
            };
            m.push(d.id.clone(), v)
                .expect("finite vectors with unique ids");
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            num_docs: 50,
            num_topics: 4,
            vocab_size: 40,
            embedding_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_and_lengths() {
        let c = generate(&small());
        assert_eq!(c.docs.len(), 50);
        assert_eq!(c.vocab.len(), 40);
        assert_eq!(c.topics.len(), 4);
        for t in &c.topics {
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for d in &c.docs {
            assert!((50..=100).contains(&d.bow.total()));
            assert_eq!(d.view_a.len(), 8);
            assert_eq!(d.theta.num_topics(), 4);
        }
        assert_eq!(SyntheticCorpus::embeddings(&c.docs, View::B).len(), 50);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.docs[7].bow, b.docs[7].bow);
        assert_eq!(a.docs[7].view_b, b.docs[7].view_b);
        let c = generate(&SyntheticConfig { seed: 8, ..small() });
        assert_ne!(a.docs[7].view_a, c.docs[7].view_a);
    }

    #[test]
    fn views_are_close_but_distinct() {
        let c = generate(&small());
        for d in &c.docs {
            let diff: f32 = d
                .view_a
                .iter()
                .zip(&d.view_b)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let norm: f32 = d.view_a.iter().map(|a| a * a).sum();
            assert!(diff > 0.0);
            assert!(diff < norm, "views should share most of their signal");
        }
    }

    #[test]
    fn words_follow_dominant_topic_block() {
        let cfg = small();
        let c = generate(&cfg);
        let block = cfg.vocab_size / cfg.num_topics;
        let mut hits = 0;
        let mut total = 0;
        for d in c
            .docs
            .iter()
            .filter(|d| d.theta.as_slice().iter().any(|&p| p > 0.9))
        {
            let top = d.theta.argmax();
            for (p, n) in d.bow.iter() {
                total += n;
                if p / block == top {
                    hits += n;
                }
            }
        }
        assert!(total > 0);
        assert!(f64::from(hits) / f64::from(total) > 0.8);
    }
}
