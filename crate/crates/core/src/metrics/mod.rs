//! Evaluation: topic coherence, cross-lingual agreement of topic
//! predictions and inter-rater reliability.

pub mod agreement;
pub mod coherence;
pub mod crosslingual;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TopicDistribution;

pub use agreement::{gwet_ac1, ordinal_weight, RatingMatrix, Weighting};
pub use coherence::{npmi_coherence, npmi_pair, CooccurrenceStats};
pub use crosslingual::{
    centroid_similarity, evaluate_crosslingual, kl_divergence, match_rate, BaselineRow,
    CrosslingualOptions, CrosslingualReport, KlDirection, LanguageRow,
};

/// Smoothing constant shared by NPMI and KL.
pub const EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no topics given")]
    NoTopics,
    #[error("top_n must be at least 2, got {0}")]
    TopNTooSmall(usize),
    #[error("topic {topic} has {found} words, fewer than top_n = {top_n}")]
    TopicTooShort {
        topic: usize,
        found: usize,
        top_n: usize,
    },
    #[error("statistics cover no documents")]
    NoDocuments,
    #[error("topic count mismatch: {0} vs {1}")]
    TopicCountMismatch(usize, usize),
    #[error("prediction sets cover different documents, e.g. {0:?}")]
    IdMismatch(String),
    #[error("duplicate prediction id {0:?}")]
    DuplicateId(String),
    #[error("empty prediction set")]
    EmptyPredictions,
    #[error("{id:?}: theta is not a distribution over topics")]
    NotOnSimplex { id: String },
    #[error("none of the words {0:?} has a vector")]
    NoWordVectors(Vec<String>),
    #[error("centroid has zero norm")]
    ZeroCentroid,
    #[error("predicted topic {topic} has no word list (only {available} topics)")]
    UnknownTopic { topic: usize, available: usize },
    #[error("item {0:?} has fewer than two ratings")]
    TooFewRaters(String),
    #[error("score {score} for item {item:?} is outside 0..={max}")]
    ScoreOutOfRange { item: String, score: i64, max: u8 },
    #[error("rater {rater:?} rated item {item:?} twice")]
    DuplicateRating { item: String, rater: String },
    #[error("no ratings")]
    NoRatings,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Topic predictions keyed by document id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    entries: Vec<(String, TopicDistribution)>,
    index: HashMap<String, usize>,
    num_topics: usize,
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    id: String,
    theta: Vec<f64>,
}

impl PredictionSet {
    pub fn new(entries: Vec<(String, TopicDistribution)>) -> Result<Self> {
        let num_topics = entries
            .first()
            .map(|(_, t)| t.num_topics())
            .ok_or(MetricsError::EmptyPredictions)?;
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (id, theta)) in entries.iter().enumerate() {
            if theta.num_topics() != num_topics {
                return Err(MetricsError::TopicCountMismatch(
                    num_topics,
                    theta.num_topics(),
                ));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(MetricsError::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            entries,
            index,
            num_topics,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TopicDistribution> {
        self.index.get(id).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TopicDistribution)> {
        self.entries.iter().map(|(id, t)| (id.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    /// Reads `{"id": ..., "theta": [...]}` lines.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io_err = |source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: PredictionLine =
                serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let theta =
                TopicDistribution::new(parsed.theta).ok_or_else(|| MetricsError::NotOnSimplex {
                    id: parsed.id.clone(),
                })?;
            entries.push((parsed.id, theta));
        }
        Self::new(entries)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        self.write_to(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (id, theta) in self.iter() {
            let line = PredictionLine {
                id: id.to_string(),
                theta: theta.as_slice().to_vec(),
            };
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// The entries of `self` whose ids appear in `other`, in `other`'s order.
    pub(crate) fn restricted_to(&self, other: &PredictionSet) -> Result<PredictionSet> {
        let entries = other
            .ids()
            .map(|id| {
                self.get(id)
                    .map(|t| (id.to_string(), t.clone()))
                    .ok_or_else(|| MetricsError::IdMismatch(id.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub(crate) fn same_ids(&self, other: &PredictionSet) -> Result<()> {
        if self.len() != other.len() {
            let mine: HashSet<&str> = self.ids().collect();
            let example = other
                .ids()
                .find(|id| !mine.contains(id))
                .or_else(|| self.ids().find(|id| other.get(id).is_none()))
                .unwrap_or_default();
            return Err(MetricsError::IdMismatch(example.to_string()));
        }
        match self.ids().find(|id| other.get(id).is_none()) {
            Some(id) => Err(MetricsError::IdMismatch(id.to_string())),
            None => Ok(()),
        }
    }
}
