use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextFileError {
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Maps a document to a fixed-width embedding.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;

    /// `doc_id` identifies the document for precomputed lookups; `text` is
    /// its content for embedders that compute on the fly.
    fn embed(&self, doc_id: &str, text: &str) -> Vec<f32>;
}

/// Deterministic bag-of-words stand-in for a sentence encoder.
///
/// Each whitespace token is hashed (64-bit FNV-1a) into one of `dim`
/// buckets with a ±1 sign taken from the hash's top bit, and the signed
/// counts are L2-normalized. Empty text, or text whose counts cancel
/// exactly, embeds to the zero vector.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding width must be positive");
        Self { dim }
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _doc_id: &str, text: &str) -> Vec<f32> {
        let mut counts = vec![0i64; self.dim];
        for token in text.split_whitespace() {
            let h = fnv1a64(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            counts[bucket] += if h >> 63 == 1 { -1 } else { 1 };
        }
        let norm = counts.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; self.dim];
        }
        counts.iter().map(|&c| (c as f64 / norm) as f32).collect()
    }
}

/// Embeddings computed offline, keyed by document id. Unknown ids embed to
/// the zero vector.
#[derive(Clone, Debug, Default)]
pub struct FileEmbedder {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl FileEmbedder {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f32>>) -> Self {
        Self { dim, vectors }
    }

    /// Reads `id<TAB>v1 v2 ... v_dim` lines, rejecting any row whose width
    /// differs from `dim`.
    pub fn load(path: &Path, dim: usize) -> Result<Self, TextFileError> {
        let shown = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| TextFileError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::from_reader(std::io::BufReader::new(file), dim, &shown)
    }

    pub fn from_reader<R: BufRead>(reader: R, dim: usize, name: &str) -> Result<Self, TextFileError> {
        let mut vectors = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| TextFileError::Io {
                path: name.to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |reason: String| TextFileError::Malformed {
                path: name.to_string(),
                line: n + 1,
                reason,
            };
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| malformed("missing tab separator".into()))?;
            let values = rest
                .split_whitespace()
                .map(|v| v.parse::<f32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| malformed(e.to_string()))?;
            if values.len() != dim {
                return Err(malformed(format!(
                    "expected {dim} values, found {}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(malformed("non-finite value".into()));
            }
            vectors.insert(id.to_string(), values);
        }
        Ok(Self { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl TextEmbedder for FileEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, doc_id: &str, _text: &str) -> Vec<f32> {
        self.vectors
            .get(doc_id)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.dim])
    }
}
