use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("no embedding available for `{0}`")]
    UnknownText(String),
    #[error("embedding for `{text}` has dimension {got}, expected {expected}")]
    Dimension {
        text: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding provider failed: {0}")]
    Failed(String),
}

/// Text embedder. Implementations must be deterministic (same text, same
/// vector) and return unit-norm vectors of [`EmbeddingProvider::dimension`].
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn seed_of(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

fn random_direction(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut v);
    v
}

/// Lowercased, whitespace-collapsed key used when a form has no known canonical.
pub fn normalize_form(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Deterministic offline embedder.
///
/// Every text maps to a canonical key (from an explicit form -> canonical map,
/// falling back to the normalized text). The vector is the key's seeded base
/// direction plus a perturbation of norm `spread` orthogonal to it, seeded by
/// the exact text. Two variants of one canonical therefore have cosine at
/// least `(1 - spread^2) / (1 + spread^2)`; distinct canonicals are nearly
/// orthogonal in the default 256 dimensions.
#[derive(Debug, Clone)]
pub struct StubProvider {
    dimension: usize,
    spread: f64,
    canonical: BTreeMap<String, String>,
}

impl StubProvider {
    pub const DEFAULT_DIMENSION: usize = 256;
    pub const DEFAULT_SPREAD: f64 = 0.15;

    pub fn new(canonical: BTreeMap<String, String>) -> Self {
        Self {
            dimension: Self::DEFAULT_DIMENSION,
            spread: Self::DEFAULT_SPREAD,
            canonical,
        }
    }

    /// Stub with no synonym knowledge: forms equal after normalization embed together.
    pub fn without_truth() -> Self {
        Self::new(BTreeMap::new())
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension;
        self
    }

    pub fn canonical_key(&self, text: &str) -> String {
        self.canonical
            .get(text)
            .cloned()
            .unwrap_or_else(|| normalize_form(text))
    }
}

impl EmbeddingProvider for StubProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let base = random_direction(seed_of(&self.canonical_key(text)), self.dimension);
        let mut noise = random_direction(seed_of(text) ^ 0x9e37_79b9_7f4a_7c15, self.dimension);
        let along = cosine(&noise, &base);
        noise.iter_mut().zip(&base).for_each(|(n, b)| *n -= along * b);
        normalize(&mut noise);
        let mut v: Vec<f64> = base
            .iter()
            .zip(&noise)
            .map(|(b, n)| b + self.spread * n)
            .collect();
        normalize(&mut v);
        Ok(v)
    }
}

/// Embeddings read from a line-delimited file of `{"text": ..., "vector": [...]}`
/// records. Vectors are renormalized on load.
#[derive(Debug, Clone)]
pub struct PrecomputedProvider {
    dimension: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    text: String,
    vector: Vec<f64>,
}

impl PrecomputedProvider {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ProviderError> {
        let mut vectors = BTreeMap::new();
        let mut dimension = None;
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::Failed(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: EmbeddingRecord = serde_json::from_str(&line)
                .map_err(|e| ProviderError::Failed(format!("line {}: {e}", idx + 1)))?;
            let expected = *dimension.get_or_insert(record.vector.len());
            if record.vector.len() != expected || expected == 0 {
                return Err(ProviderError::Dimension {
                    text: record.text,
                    expected,
                    got: record.vector.len(),
                });
            }
            let mut v = record.vector;
            normalize(&mut v);
            vectors.insert(record.text, v);
        }
        Ok(Self {
            dimension: dimension.unwrap_or(0),
            vectors,
        })
    }
}

impl EmbeddingProvider for PrecomputedProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.vectors
            .get(text)
            .cloned()
            .ok_or_else(|| ProviderError::UnknownText(text.to_string()))
    }
}
