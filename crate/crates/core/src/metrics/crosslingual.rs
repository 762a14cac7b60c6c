//! Agreement between topic predictions for the same documents in different
//! languages: argmax match rate, KL divergence and centroid similarity of
//! the predicted topics' words.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MetricsError, PredictionSet, Result, EPSILON};
use crate::embeddings::EmbeddingMatrix;
use crate::model::TopicDistribution;

/// Percentage of documents whose most likely topic agrees. Both sets must
/// cover exactly the same ids.
pub fn match_rate(a: &PredictionSet, b: &PredictionSet) -> Result<f64> {
    if a.num_topics() != b.num_topics() {
        return Err(MetricsError::TopicCountMismatch(
            a.num_topics(),
            b.num_topics(),
        ));
    }
    a.same_ids(b)?;
    let hits = a
        .iter()
        .filter(|(id, ta)| b.get(id).is_some_and(|tb| tb.argmax() == ta.argmax()))
        .count();
    Ok(100.0 * hits as f64 / a.len() as f64)
}

fn clamp_normalize(p: &[f64], epsilon: f64) -> Vec<f64> {
    let clamped: Vec<f64> = p.iter().map(|&v| v.max(epsilon)).collect();
    let sum: f64 = clamped.iter().sum();
    clamped.into_iter().map(|v| v / sum).collect()
}

/// `KL(p || q)` after clamping both to at least `epsilon` and
/// renormalizing.
pub fn kl_divergence(p: &TopicDistribution, q: &TopicDistribution, epsilon: f64) -> Result<f64> {
    if p.num_topics() != q.num_topics() {
        return Err(MetricsError::TopicCountMismatch(
            p.num_topics(),
            q.num_topics(),
        ));
    }
    let p = clamp_normalize(p.as_slice(), epsilon);
    let q = clamp_normalize(q.as_slice(), epsilon);
    let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}

fn centroid(words: &[String], table: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; table.dim()];
    let mut found = 0usize;
    for w in words {
        if let Some(v) = table.get(w) {
            for (s, &x) in sum.iter_mut().zip(v) {
                *s += f64::from(x);
            }
            found += 1;
        }
    }
    if found == 0 {
        return Err(MetricsError::NoWordVectors(words.to_vec()));
    }
    Ok(sum.into_iter().map(|s| s / found as f64).collect())
}

/// Cosine similarity between the mean word vectors of two topics. Words
/// without a vector are skipped.
pub fn centroid_similarity(
    topic_a: &[String],
    topic_b: &[String],
    table: &EmbeddingMatrix,
) -> Result<f64> {
    let a = centroid(topic_a, table)?;
    let b = centroid(topic_b, table)?;
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricsError::ZeroCentroid);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Argument order of a KL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(other || reference)`: the non-English (or uniform) prediction
    /// first.
    OtherToReference,
    /// `KL(reference || other)`
    ReferenceToOther,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrosslingualOptions {
    pub kl_direction: KlDirection,
    pub baseline_kl_direction: KlDirection,
    pub epsilon: f64,
    /// Words per topic used for centroids.
    pub centroid_words: usize,
}

impl Default for CrosslingualOptions {
    fn default() -> Self {
        Self {
            kl_direction: KlDirection::OtherToReference,
            baseline_kl_direction: KlDirection::OtherToReference,
            epsilon: EPSILON,
            centroid_words: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageRow {
    pub docs: usize,
    pub mat: f64,
    pub kl: f64,
    pub cd: Option<f64>,
}

/// Uniform-distribution baseline. Centroid similarity is undefined for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub docs: usize,
    pub mat: f64,
    pub kl: f64,
    pub cd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosslingualReport {
    pub num_topics: usize,
    pub kl_direction: KlDirection,
    pub baseline_kl_direction: KlDirection,
    pub languages: BTreeMap<String, LanguageRow>,
    pub baseline: BaselineRow,
}

fn directed_kl(
    other: &TopicDistribution,
    reference: &TopicDistribution,
    direction: KlDirection,
    epsilon: f64,
) -> Result<f64> {
    match direction {
        KlDirection::OtherToReference => kl_divergence(other, reference, epsilon),
        KlDirection::ReferenceToOther => kl_divergence(reference, other, epsilon),
    }
}

/// Compares each language's predictions with the reference (training
/// language) predictions of the same documents.
///
/// `topic_words` holds each topic's words by descending weight; the first
/// `options.centroid_words` are used when `word_vectors` is given.
///
/// The baseline's match rate is the expected agreement of an argmax drawn
/// uniformly at random, 100/K, because a uniform distribution has no
/// argmax of its own.
pub fn evaluate_crosslingual(
    languages: &BTreeMap<String, PredictionSet>,
    reference: &PredictionSet,
    topic_words: &[Vec<String>],
    word_vectors: Option<&EmbeddingMatrix>,
    options: &CrosslingualOptions,
) -> Result<CrosslingualReport> {
    let k = reference.num_topics();
    let mut rows = BTreeMap::new();
    for (lang, preds) in languages {
        if preds.num_topics() != k {
            return Err(MetricsError::TopicCountMismatch(k, preds.num_topics()));
        }
        let paired = reference.restricted_to(preds)?;
        let mat = match_rate(preds, &paired)?;
        let mut kl_sum = 0.0;
        let mut cd_sum = 0.0;
        for (id, theta) in preds.iter() {
            let reference_theta = paired.get(id).expect("restricted to the same ids");
            kl_sum += directed_kl(
                theta,
                reference_theta,
                options.kl_direction,
                options.epsilon,
            )?;
            if let Some(table) = word_vectors {
                let words = |topic: usize| -> Result<&[String]> {
                    let w = topic_words.get(topic).ok_or(MetricsError::UnknownTopic {
                        topic,
                        available: topic_words.len(),
                    })?;
                    Ok(&w[..w.len().min(options.centroid_words)])
                };
                cd_sum += centroid_similarity(
                    words(theta.argmax())?,
                    words(reference_theta.argmax())?,
                    table,
                )?;
            }
        }
        let n = preds.len() as f64;
        rows.insert(
            lang.clone(),
            LanguageRow {
                docs: preds.len(),
                mat,
                kl: kl_sum / n,
                cd: word_vectors.map(|_| cd_sum / n),
            },
        );
    }

    let uniform = TopicDistribution::uniform(k);
    let mut mat_sum = 0.0;
    let mut kl_sum = 0.0;
    for (_, theta) in reference.iter() {
        // P(uniform random topic == reference argmax) = 1/K
        mat_sum += 100.0 / k as f64;
        kl_sum += directed_kl(
            &uniform,
            theta,
            options.baseline_kl_direction,
            options.epsilon,
        )?;
    }
    let n = reference.len() as f64;
    Ok(CrosslingualReport {
        num_topics: k,
        kl_direction: options.kl_direction,
        baseline_kl_direction: options.baseline_kl_direction,
        languages: rows,
        baseline: BaselineRow {
            docs: reference.len(),
            mat: mat_sum / n,
            kl: kl_sum / n,
            cd: None,
        },
    })
}
