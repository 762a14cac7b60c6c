//! NPMI topic coherence over document-level co-occurrence.

use std::collections::{BTreeSet, HashMap};

use super::{MetricsError, Result};
use crate::corpus::{BowVector, Vocabulary};

/// Document frequencies of words and word pairs. Pair counts are computed
/// on demand from sorted posting lists.
#[derive(Debug, Clone, Default)]
pub struct CooccurrenceStats {
    doc_count: usize,
    postings: HashMap<String, Vec<u32>>,
}

impl CooccurrenceStats {
    /// Each item is the set of tokens one document contains.
    pub fn from_token_sets<I, D, S>(docs: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut postings: HashMap<String, Vec<u32>> = HashMap::new();
        let mut doc_count = 0usize;
        for (d, doc) in docs.into_iter().enumerate() {
            let unique: BTreeSet<String> =
                doc.into_iter().map(|s| s.as_ref().to_string()).collect();
            for tok in unique {
                postings.entry(tok).or_default().push(d as u32);
            }
            doc_count = d + 1;
        }
        Self {
            doc_count,
            postings,
        }
    }

    /// Document-level presence of vocabulary tokens in bags of words.
    pub fn from_bows<'a>(
        bows: impl IntoIterator<Item = &'a BowVector>,
        vocab: &Vocabulary,
    ) -> Self {
        Self::from_token_sets(bows.into_iter().map(|b| {
            b.iter()
                .map(|(p, _)| vocab.token(p).expect("bow position within vocabulary"))
                .collect::<Vec<_>>()
        }))
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn word_doc_freq(&self, word: &str) -> usize {
        self.postings.get(word).map_or(0, Vec::len)
    }

    pub fn pair_doc_freq(&self, a: &str, b: &str) -> usize {
        let (Some(pa), Some(pb)) = (self.postings.get(a), self.postings.get(b)) else {
            return 0;
        };
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < pa.len() && j < pb.len() {
            match pa[i].cmp(&pb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Normalized PMI of one word pair:
/// `log((P(a,b) + eps) / (P(a) P(b))) / -log(P(a,b) + eps)`.
///
/// A pair involving a word that never occurs scores -1, the limit for words
/// that never co-occur. A pair present in every document scores 1.
pub fn npmi_pair(stats: &CooccurrenceStats, a: &str, b: &str, epsilon: f64) -> f64 {
    let n = stats.doc_count() as f64;
    let pa = stats.word_doc_freq(a) as f64 / n;
    let pb = stats.word_doc_freq(b) as f64 / n;
    if pa == 0.0 || pb == 0.0 {
        return -1.0;
    }
    let pab = stats.pair_doc_freq(a, b) as f64 / n;
    if pab >= 1.0 {
        return 1.0;
    }
    let joint = pab + epsilon;
    let npmi = (joint / (pa * pb)).ln() / -joint.ln();
    npmi.clamp(-1.0, 1.0)
}

/// Mean over topics of the mean NPMI over all pairs among each topic's
/// first `top_n` words.
pub fn npmi_coherence(
    topics: &[Vec<String>],
    stats: &CooccurrenceStats,
    top_n: usize,
    epsilon: f64,
) -> Result<f64> {
    if topics.is_empty() {
        return Err(MetricsError::NoTopics);
    }
    if top_n < 2 {
        return Err(MetricsError::TopNTooSmall(top_n));
    }
    if stats.doc_count() == 0 {
        return Err(MetricsError::NoDocuments);
    }
    let mut total = 0.0;
    for (t, words) in topics.iter().enumerate() {
        if words.len() < top_n {
            return Err(MetricsError::TopicTooShort {
                topic: t,
                found: words.len(),
                top_n,
            });
        }
        let words = &words[..top_n];
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..top_n {
            for j in i + 1..top_n {
                sum += npmi_pair(stats, &words[i], &words[j], epsilon);
                pairs += 1;
            }
        }
        total += sum / pairs as f64;
    }
    Ok(total / topics.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EPSILON;
    use proptest::prelude::*;

    fn stats(docs: &[&[&str]]) -> CooccurrenceStats {
        CooccurrenceStats::from_token_sets(docs.iter().map(|d| d.iter().copied()))
    }

    #[test]
    fn counts_and_invariant() {
        let s = stats(&[&["a", "b", "a"], &["a"], &["b", "c"], &[]]);
        assert_eq!(s.doc_count(), 4);
        assert_eq!(s.word_doc_freq("a"), 2);
        assert_eq!(s.pair_doc_freq("a", "b"), 1);
        assert_eq!(s.pair_doc_freq("b", "a"), 1);
        assert_eq!(s.pair_doc_freq("a", "zzz"), 0);
    }

    #[test]
    fn perfect_association_is_one() {
        // P(a) = P(b) = P(a,b) = 0.5
        let s = stats(&[&["a", "b"], &["c"], &["a", "b"], &["d"]]);
        assert!((npmi_pair(&s, "a", "b", EPSILON) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn independence_is_zero() {
        // P(a) = P(b) = 0.5, P(a,b) = 0.25
        let s = stats(&[&["a", "b"], &["a"], &["b"], &[]]);
        assert!(npmi_pair(&s, "a", "b", EPSILON).abs() < 1e-9);
    }

    #[test]
    fn edge_cases() {
        let s = stats(&[&["a", "b"], &["a", "b"]]);
        assert_eq!(npmi_pair(&s, "a", "b", EPSILON), 1.0);
        assert_eq!(npmi_pair(&s, "a", "missing", EPSILON), -1.0);
        // never together
        let s = stats(&[&["a"], &["b"]]);
        let v = npmi_pair(&s, "a", "b", EPSILON);
        assert!((-1.0..-0.9).contains(&v));
    }

    #[test]
    fn coherence_averages_topics_and_pairs() {
        let s = stats(&[&["a", "b"], &["c"], &["a", "b"], &["d"]]);
        let topics = vec![
            vec!["a".to_string(), "b".to_string()],
            vec!["c".to_string(), "d".to_string()],
        ];
        let expected = (npmi_pair(&s, "a", "b", EPSILON) + npmi_pair(&s, "c", "d", EPSILON)) / 2.0;
        let tau = npmi_coherence(&topics, &s, 2, EPSILON).unwrap();
        assert!((tau - expected).abs() < 1e-15);
    }

    #[test]
    fn coherence_errors() {
        let s = stats(&[&["a", "b"]]);
        assert!(matches!(
            npmi_coherence(&[], &s, 10, EPSILON),
            Err(MetricsError::NoTopics)
        ));
        let t = vec![vec!["a".to_string(), "b".to_string()]];
        assert!(matches!(
            npmi_coherence(&t, &s, 1, EPSILON),
            Err(MetricsError::TopNTooSmall(1))
        ));
        assert!(matches!(
            npmi_coherence(&t, &s, 3, EPSILON),
            Err(MetricsError::TopicTooShort { .. })
        ));
    }

    #[test]
    fn stats_from_bows() {
        let vocab = Vocabulary::from_tokens(vec!["x".into(), "y".into()]).unwrap();
        let bows = [
            BowVector::from_pairs(2, [(0, 3)]).unwrap(),
            BowVector::from_pairs(2, [(0, 1), (1, 1)]).unwrap(),
        ];
        let s = CooccurrenceStats::from_bows(&bows, &vocab);
        assert_eq!(s.doc_count(), 2);
        assert_eq!(s.word_doc_freq("x"), 2);
        assert_eq!(s.pair_doc_freq("x", "y"), 1);
    }

    fn corpus() -> impl Strategy<Value = Vec<Vec<u8>>> {
        proptest::collection::vec(proptest::collection::vec(0u8..8, 0..6), 1..30)
    }

    proptest! {
        #[test]
        fn pair_bounds_and_range(docs in corpus(), a in 0u8..8, b in 0u8..8) {
            let s = CooccurrenceStats::from_token_sets(
                docs.iter().map(|d| d.iter().map(|w| format!("w{w}")))
            );
            let (a, b) = (format!("w{a}"), format!("w{b}"));
            let pab = s.pair_doc_freq(&a, &b);
            prop_assert!(pab <= s.word_doc_freq(&a).min(s.word_doc_freq(&b)));
            prop_assert!(s.word_doc_freq(&a) <= s.doc_count());
            let v = npmi_pair(&s, &a, &b, EPSILON);
            prop_assert!((-1.0..=1.0).contains(&v));
        }

        #[test]
        fn coherence_is_permutation_invariant(docs in corpus(), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let s = CooccurrenceStats::from_token_sets(
                docs.iter().map(|d| d.iter().map(|w| format!("w{w}")))
            );
            let mut topics: Vec<Vec<String>> = vec![
                (0..4).map(|w| format!("w{w}")).collect(),
                (4..8).map(|w| format!("w{w}")).collect(),
            ];
            let tau = npmi_coherence(&topics, &s, 4, EPSILON).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            topics.shuffle(&mut rng);
            for t in topics.iter_mut() {
                t.shuffle(&mut rng);
            }
            let shuffled = npmi_coherence(&topics, &s, 4, EPSILON).unwrap();
            prop_assert!((tau - shuffled).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&tau));
        }
    }
}
