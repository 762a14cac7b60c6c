//! Corpus ingestion, tokenization, vocabulary construction and bag-of-words
//! encoding, plus alignment of comparable documents across languages.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed JSON line: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: document id must be non-empty")]
    EmptyId { path: PathBuf, line: usize },
    #[error("vocabulary size must be at least 1")]
    ZeroVocabularySize,
    #[error("cannot build a vocabulary from an empty document set")]
    NoDocuments,
    #[error("every token is a stopword; the effective vocabulary is empty")]
    EmptyVocabulary,
    #[error("duplicate vocabulary token {0:?}")]
    DuplicateToken(String),
    #[error("training language {0:?} is not among the supplied corpora")]
    MissingTrainLanguage(String),
    #[error("duplicate document id {id:?} for language {lang:?}")]
    DuplicateDocument { id: String, lang: String },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// A single document in one language. The id is shared by all language
/// versions of the same entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub lang: String,
    pub text: String,
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    #[serde(default)]
    #[allow(dead_code)]
    lang: Option<String>,
    text: String,
}

/// Result of reading a corpus file.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    /// Lines whose text was empty after trimming.
    pub dropped_empty: usize,
}

/// Reads a JSON Lines corpus. The `lang` argument overrides whatever the
/// file says. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>, lang: &str) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);

    let mut documents = Vec::new();
    let mut dropped_empty = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                path: path.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
        if raw.id.is_empty() {
            return Err(CorpusError::EmptyId {
                path: path.to_path_buf(),
                line: lineno,
            });
        }
        if raw.text.trim().is_empty() {
            dropped_empty += 1;
            continue;
        }
        documents.push(Document {
            id: raw.id,
            lang: lang.to_string(),
            text: raw.text,
        });
    }
    if dropped_empty > 0 {
        log::warn!(
            "{}: dropped {dropped_empty} document(s) with empty text",
            path.display()
        );
    }
    Ok(LoadedCorpus {
        documents,
        dropped_empty,
    })
}

/// Writes documents as JSON Lines in the same shape [`load_corpus`] reads.
pub fn write_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for doc in docs {
        let line = serde_json::to_string(doc).expect("document serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Keeps documents whose text has strictly more than `min_chars` characters.
/// `min_chars == 0` keeps everything.
pub fn filter_min_chars(docs: Vec<Document>, min_chars: usize) -> Vec<Document> {
    if min_chars == 0 {
        return docs;
    }
    docs.into_iter()
        .filter(|d| d.text.chars().count() > min_chars)
        .collect()
}

/// Keeps the first `max_tokens` whitespace-separated tokens. Text that is
/// already short enough is returned untouched.
pub fn truncate_tokens(doc: &Document, max_tokens: usize) -> Document {
    assert!(max_tokens >= 1, "max_tokens must be at least 1");
    let mut tokens = doc.text.split_whitespace();
    let head: Vec<&str> = tokens.by_ref().take(max_tokens).collect();
    let text = if tokens.next().is_none() {
        doc.text.clone()
    } else {
        head.join(" ")
    };
    Document {
        id: doc.id.clone(),
        lang: doc.lang.clone(),
        text,
    }
}

/// Lowercases, splits on Unicode whitespace and strips leading and trailing
/// non-alphanumeric characters. Tokens that become empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let t = raw.trim_matches(|c: char| !c.is_alphanumeric());
            (!t.is_empty()).then(|| t.to_lowercase())
        })
        .collect()
}

/// One stopword per line; surrounding whitespace and blank lines ignored.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect())
}

/// Ordered token list with its inverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::DuplicateToken(t.clone()));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, position: usize) -> Option<&str> {
        self.tokens.get(position).map(String::as_str)
    }

    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// One token per line; line number is the index.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for t in &self.tokens {
            writeln!(out, "{t}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_tokens(content.lines().map(str::to_string).collect())
    }
}

/// Picks the `size` most frequent non-stopword tokens. Ties go to the
/// lexicographically smaller token.
pub fn build_vocabulary(
    docs: &[Document],
    stopwords: &HashSet<String>,
    size: usize,
) -> Result<Vocabulary> {
    if size == 0 {
        return Err(CorpusError::ZeroVocabularySize);
    }
    if docs.is_empty() {
        return Err(CorpusError::NoDocuments);
    }
    let mut freq: HashMap<String, u64> = HashMap::new();
    for doc in docs {
        for tok in tokenize(&doc.text) {
            if !stopwords.contains(&tok) {
                *freq.entry(tok).or_default() += 1;
            }
        }
    }
    if freq.is_empty() {
        return Err(CorpusError::EmptyVocabulary);
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_by(|(ta, fa), (tb, fb)| fb.cmp(fa).then_with(|| ta.cmp(tb)));
    ranked.truncate(size);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t).collect())
}

/// Sparse in-vocabulary token counts. Absent positions are zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BowVector {
    counts: BTreeMap<usize, u32>,
    vocab_size: usize,
}

impl BowVector {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            counts: BTreeMap::new(),
            vocab_size,
        }
    }

    /// Builds from (position, count) pairs. Zero counts are skipped and
    /// repeated positions accumulate. Returns `None` if a position is out of
    /// range.
    pub fn from_pairs(
        vocab_size: usize,
        pairs: impl IntoIterator<Item = (usize, u32)>,
    ) -> Option<Self> {
        let mut bow = Self::new(vocab_size);
        for (pos, count) in pairs {
            if pos >= vocab_size {
                return None;
            }
            if count > 0 {
                *bow.counts.entry(pos).or_default() += count;
            }
        }
        Some(bow)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn get(&self, position: usize) -> u32 {
        self.counts.get(&position).copied().unwrap_or(0)
    }

    /// Non-zero entries in ascending position order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counts.iter().map(|(&p, &c)| (p, c))
    }

    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.vocab_size];
        for (p, c) in self.iter() {
            dense[p] = f64::from(c);
        }
        dense
    }
}

pub fn to_bow(doc: &Document, vocab: &Vocabulary) -> BowVector {
    let mut bow = BowVector::new(vocab.len());
    for tok in tokenize(&doc.text) {
        if let Some(p) = vocab.position(&tok) {
            *bow.counts.entry(p).or_default() += 1;
        }
    }
    bow
}

#[derive(Serialize, Deserialize)]
struct BowLine {
    id: String,
    counts: Vec<(usize, u32)>,
}

/// Writes `{"id": ..., "counts": [[position, count], ...]}` per line.
pub fn write_bows(bows: &[(String, BowVector)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for (id, bow) in bows {
        let line = BowLine {
            id: id.clone(),
            counts: bow.iter().collect(),
        };
        let line = serde_json::to_string(&line).expect("bow line serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads the format produced by [`write_bows`]. Positions must be below
/// `vocab_size`.
pub fn read_bows(path: impl AsRef<Path>, vocab_size: usize) -> Result<Vec<(String, BowVector)>> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut bows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let parsed: BowLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let bow = BowVector::from_pairs(vocab_size, parsed.counts).ok_or_else(|| {
            malformed(format!(
                "position out of range for vocabulary size {vocab_size}"
            ))
        })?;
        bows.push((parsed.id, bow));
    }
    Ok(bows)
}

/// All language versions of one entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub docs: BTreeMap<String, Document>,
}

/// Entities in training-language order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub train_lang: String,
    pub entities: Vec<Entity>,
    /// Number of entities that have a document in each language.
    pub coverage: BTreeMap<String, usize>,
}

impl ParallelCorpus {
    /// Documents of one language, in entity order.
    pub fn documents(&self, lang: &str) -> Vec<&Document> {
        self.entities
            .iter()
            .filter_map(|e| e.docs.get(lang))
            .collect()
    }
}

pub fn align_parallel(
    corpora: &BTreeMap<String, Vec<Document>>,
    train_lang: &str,
) -> Result<ParallelCorpus> {
    let train_docs = corpora
        .get(train_lang)
        .ok_or_else(|| CorpusError::MissingTrainLanguage(train_lang.to_string()))?;

    let mut by_lang: BTreeMap<&str, HashMap<&str, &Document>> = BTreeMap::new();
    for (lang, docs) in corpora {
        let slot = by_lang.entry(lang.as_str()).or_default();
        for doc in docs {
            if slot.insert(doc.id.as_str(), doc).is_some() {
                return Err(CorpusError::DuplicateDocument {
                    id: doc.id.clone(),
                    lang: lang.clone(),
                });
            }
        }
    }

    let mut coverage: BTreeMap<String, usize> = corpora.keys().map(|l| (l.clone(), 0)).collect();
    let mut entities = Vec::with_capacity(train_docs.len());
    for train_doc in train_docs {
        let mut docs = BTreeMap::new();
        for (lang, index) in &by_lang {
            if let Some(doc) = index.get(train_doc.id.as_str()) {
                let mut doc = (*doc).clone();
                doc.lang = (*lang).to_string();
                docs.insert(doc.lang.clone(), doc);
                *coverage.get_mut(*lang).expect("language seeded") += 1;
            }
        }
        entities.push(Entity {
            id: train_doc.id.clone(),
            docs,
        });
    }
    Ok(ParallelCorpus {
        train_lang: train_lang.to_string(),
        entities,
        coverage,
    })
}
