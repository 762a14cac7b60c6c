//! The CTME binary container for precomputed document embeddings.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `CTME`                   |
//! | 4      | 4    | version (u32, = 1)             |
//! | 8      | 4    | dim (u32)                      |
//! | 12     | 8    | record count (u64)             |
//! | 20     | ...  | records                        |
//!
//! Each record is a u16 id length, the UTF-8 id bytes, then `dim` f32 values.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::Document;

pub const MAGIC: [u8; 4] = *b"CTME";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected \"CTME\", found {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated file: record {record} is incomplete")]
    Truncated { record: u64 },
    #[error("truncated file: header is {0} bytes, expected {HEADER_LEN}")]
    TruncatedHeader(usize),
    #[error("{extra} trailing bytes after the declared {records} records")]
    TrailingBytes { records: u64, extra: usize },
    #[error("non-finite value in record {record} ({id:?}), component {component}")]
    NonFinite {
        record: usize,
        id: String,
        component: usize,
    },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("record {record}: id is not valid UTF-8")]
    InvalidId { record: u64 },
    #[error("id {0:?} is longer than 65535 bytes")]
    IdTooLong(String),
    #[error("vector for {id:?} has {found} components, expected {dim}")]
    DimensionMismatch {
        id: String,
        found: usize,
        dim: usize,
    },
    #[error("dimension must be positive")]
    ZeroDimension,
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

/// Document vectors keyed by id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Appends a record, enforcing dimension, finiteness and id uniqueness.
    pub fn push(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                id,
                found: vector.len(),
                dim: self.dim,
            });
        }
        if id.len() > usize::from(u16::MAX) {
            return Err(EmbeddingError::IdTooLong(id));
        }
        if let Some(component) = vector.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite {
                record: self.ids.len(),
                id,
                component,
            });
        }
        if self.index.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&row| self.vector(row))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .zip(self.data.chunks_exact(self.dim))
            .map(|(id, v)| (id.as_str(), v))
    }

    /// Expected on-disk size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .ids
                .iter()
                .map(|id| 2 + id.len() + 4 * self.dim)
                .sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, vector) in self.iter() {
            buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for v in vector {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(EmbeddingError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(EmbeddingError::TruncatedHeader(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(EmbeddingError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(EmbeddingError::UnsupportedVersion(version));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let mut matrix = Self::new(dim)?;

        let mut cursor = HEADER_LEN;
        let mut vector = vec![0f32; dim];
        for record in 0..count {
            let truncated = EmbeddingError::Truncated { record };
            let id_len = bytes
                .get(cursor..cursor + 2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
                .ok_or(truncated)?;
            cursor += 2;
            let id_bytes = bytes
                .get(cursor..cursor + id_len)
                .ok_or(EmbeddingError::Truncated { record })?;
            let id = std::str::from_utf8(id_bytes)
                .map_err(|_| EmbeddingError::InvalidId { record })?
                .to_string();
            cursor += id_len;
            let payload = bytes
                .get(cursor..cursor + 4 * dim)
                .ok_or(EmbeddingError::Truncated { record })?;
            for (dst, chunk) in vector.iter_mut().zip(payload.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            cursor += 4 * dim;
            matrix.push(id, &vector)?;
        }
        if cursor != bytes.len() {
            return Err(EmbeddingError::TrailingBytes {
                records: count,
                extra: bytes.len() - cursor,
            });
        }
        Ok(matrix)
    }
}

/// Writes the container. The whole file is encoded in memory first, so an
/// invalid matrix never produces a partial file.
pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = matrix.to_bytes();
    let io_err = |source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&bytes).map_err(io_err)?;
    file.flush().map_err(io_err)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EmbeddingMatrix::from_bytes(&bytes)
}

/// Ids present on one side only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageReport {
    /// Document ids with no embedding record.
    pub missing: BTreeSet<String>,
    /// Embedding records with no matching document.
    pub extra: BTreeSet<String>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty()
    }
}

pub fn validate_against_corpus(matrix: &EmbeddingMatrix, docs: &[Document]) -> CoverageReport {
    validate_ids(matrix, docs.iter().map(|d| d.id.as_str()))
}

/// Same as [`validate_against_corpus`] for a bare id list.
pub fn validate_ids<'a>(
    matrix: &EmbeddingMatrix,
    ids: impl IntoIterator<Item = &'a str>,
) -> CoverageReport {
    let wanted: HashSet<&str> = ids.into_iter().collect();
    let missing = wanted
        .iter()
        .filter(|id| matrix.get(id).is_none())
        .map(|id| id.to_string())
        .collect();
    let extra = matrix
        .ids()
        .iter()
        .filter(|id| !wanted.contains(id.as_str()))
        .cloned()
        .collect();
    CoverageReport { missing, extra }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix::new(3).unwrap();
        m.push("a", &[1.0, -2.5, 3.25]).unwrap();
        m.push("bb", &[0.0, f32::MIN_POSITIVE, -0.0]).unwrap();
        m
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let m = EmbeddingMatrix::new(512).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], &[0x43, 0x54, 0x4D, 0x45]);
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &512u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &0u64.to_le_bytes());
        assert_eq!(EmbeddingMatrix::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn two_record_file_size() {
        // 20 header + (2 + 1 + 12) + (2 + 2 + 12)
        let m = sample();
        assert_eq!(m.to_bytes().len(), 51);
        assert_eq!(m.encoded_len(), 51);
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let m = sample();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_embeddings(&m, f.path()).unwrap();
        let back = read_embeddings(f.path()).unwrap();
        for ((ia, va), (ib, vb)) in m.iter().zip(back.iter()) {
            assert_eq!(ia, ib);
            let bits_a: Vec<u32> = va.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = vb.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        // identical input, identical bytes
        let f2 = tempfile::NamedTempFile::new().unwrap();
        write_embeddings(&back, f2.path()).unwrap();
        assert_eq!(
            std::fs::read(f.path()).unwrap(),
            std::fs::read(f2.path()).unwrap()
        );
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::BadMagic(_))
        ));
    }

    #[test]
    fn rejects_unsupported_version() {
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn truncation_names_the_record() {
        let bytes = sample().to_bytes();
        // cut in the middle of the second record's vector
        let cut = &bytes[..bytes.len() - 5];
        match EmbeddingMatrix::from_bytes(cut) {
            Err(EmbeddingError::Truncated { record }) => assert_eq!(record, 1),
            other => panic!("unexpected {other:?}"),
        }
        // cut inside the first record's id length
        match EmbeddingMatrix::from_bytes(&bytes[..21]) {
            Err(EmbeddingError::Truncated { record }) => assert_eq!(record, 0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes[..10]),
            Err(EmbeddingError::TruncatedHeader(10))
        ));
    }

    #[test]
    fn rejects_count_disagreeing_with_length() {
        let mut bytes = sample().to_bytes();
        bytes[12..20].copy_from_slice(&1u64.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::TrailingBytes { records: 1, .. })
        ));
        bytes[12..20].copy_from_slice(&3u64.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::Truncated { record: 2 })
        ));
    }

    #[test]
    fn rejects_non_finite_and_duplicates() {
        let mut bytes = sample().to_bytes();
        // first component of record 0 sits at 20 + 2 + 1
        bytes[23..27].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::NonFinite {
                record: 0,
                component: 0,
                ..
            })
        ));

        let mut m = EmbeddingMatrix::new(1).unwrap();
        m.push("x", &[1.0]).unwrap();
        let mut bytes = m.to_bytes();
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(b"x");
        bytes.extend_from_slice(&2f32.to_le_bytes());
        bytes[12..20].copy_from_slice(&2u64.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingError::DuplicateId(id)) if id == "x"
        ));
    }

    #[test]
    fn push_validates_before_write() {
        let mut m = EmbeddingMatrix::new(2).unwrap();
        assert!(matches!(
            m.push("a", &[1.0, f32::INFINITY]),
            Err(EmbeddingError::NonFinite { .. })
        ));
        assert!(matches!(
            m.push("a", &[1.0]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
        assert!(m.is_empty());
        assert!(matches!(
            EmbeddingMatrix::new(0),
            Err(EmbeddingError::ZeroDimension)
        ));
    }

    #[test]
    fn coverage_report() {
        let doc = |id: &str| Document {
            id: id.into(),
            lang: "en".into(),
            text: "t".into(),
        };
        let m = sample();
        assert!(validate_against_corpus(&m, &[doc("a"), doc("bb")]).is_empty());

        let r = validate_against_corpus(&m, &[doc("a"), doc("bb"), doc("c")]);
        assert_eq!(r.missing.iter().collect::<Vec<_>>(), ["c"]);
        assert!(r.extra.is_empty());
        assert!(!r.is_complete());

        let r = validate_against_corpus(&m, &[doc("a")]);
        assert!(r.is_complete());
        assert_eq!(r.extra.iter().collect::<Vec<_>>(), ["bb"]);
    }

    #[test]
    fn parallel_test_set_needs_one_record_per_language_version() {
        use crate::corpus::align_parallel;
        use std::collections::BTreeMap;
        let langs = ["de", "en", "fr", "it", "pt"];
        let mut corpora = BTreeMap::new();
        for l in langs {
            let docs = (0..300)
                .map(|i| Document {
                    id: format!("e{i}"),
                    lang: l.into(),
                    text: "t".into(),
                })
                .collect();
            corpora.insert(l.to_string(), docs);
        }
        let parallel = align_parallel(&corpora, "en").unwrap();
        let required: usize = parallel.entities.iter().map(|e| e.docs.len()).sum();
        assert_eq!(required, 1500);
    }

    proptest! {
        #[test]
        fn round_trip_and_size_law(
            dim in 1usize..6,
            rows in proptest::collection::vec(("[a-z0-9é]{0,8}", proptest::collection::vec(-1e6f32..1e6, 6)), 0..8)
        ) {
            let mut m = EmbeddingMatrix::new(dim).unwrap();
            for (id, v) in &rows {
                let _ = m.push(id.clone(), &v[..dim]);
            }
            let bytes = m.to_bytes();
            let expected: usize = 20 + m.ids().iter().map(|id| 2 + id.len() + 4 * dim).sum::<usize>();
            prop_assert_eq!(bytes.len(), expected);
            let back = EmbeddingMatrix::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
