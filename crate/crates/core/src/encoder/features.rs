use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::EncoderError;
use crate::corpus::normalize_whitespace;

pub const DEFAULT_FEATURE_DIM: usize = 1 << 18;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.update(bytes);
    h.finish()
}

/// Streaming 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Self(FNV_OFFSET)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.0 = bytes
            .iter()
            .fold(self.0, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME));
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

/// Sparse input vector. Entries are sorted by index, indices are unique and
/// every stored weight is finite and nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds a vector from arbitrary `(index, weight)` pairs; duplicate
    /// indices are summed and zeros dropped.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self, EncoderError> {
        let mut acc: Vec<(u32, f64)> = Vec::new();
        for (index, w) in pairs {
            if index >= dim {
                return Err(EncoderError::FeatureOutOfRange { index, dim });
            }
            if !w.is_finite() {
                return Err(EncoderError::BadFeatureFile(format!("non-finite weight at {index}")));
            }
            acc.push((index as u32, w));
        }
        acc.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(acc.len());
        for (i, w) in acc {
            match entries.last_mut() {
                Some((j, v)) if *j == i => *v += w,
                _ => entries.push((i, w)),
            }
        }
        entries.retain(|&(_, w)| w != 0.0);
        Ok(Self { dim, entries })
    }

    pub fn dense(values: &[f64]) -> Result<Self, EncoderError> {
        Self::from_pairs(values.len(), values.iter().copied().enumerate())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for (_, w) in &mut self.entries {
                *w /= n;
            }
        }
        self
    }
}

/// Turns text into a sparse feature vector of a fixed dimension.
pub trait Featurizer: Send + Sync {
    fn dim(&self) -> usize;

    fn featurize(&self, text: &str) -> Result<FeatureVector, EncoderError>;

    /// Identifies the featurizer configuration (recorded in run reports).
    fn describe(&self) -> String;
}

/// Hashed word unigrams and bigrams.
///
/// Text is lowercased and split on whitespace. Each n-gram (bigrams joined by
/// a single space) is hashed with FNV-1a: the low bits modulo `dim` pick the
/// coordinate, the top bit picks the sign. Signed counts are accumulated and
/// the result is L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashedFeaturizer {
    dim: usize,
}

impl HashedFeaturizer {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self { dim }
    }

    fn slot(&self, gram: &str) -> (usize, f64) {
        let h = fnv1a64(gram.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % self.dim as u64) as usize, sign)
    }
}

impl Default for HashedFeaturizer {
    fn default() -> Self {
        Self::new(DEFAULT_FEATURE_DIM)
    }
}

impl Featurizer for HashedFeaturizer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn featurize(&self, text: &str) -> Result<FeatureVector, EncoderError> {
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower.split_whitespace().collect();
        let mut pairs = Vec::with_capacity(tokens.len() * 2);
        for t in &tokens {
            pairs.push(self.slot(t));
        }
        let mut bigram = String::new();
        for w in tokens.windows(2) {
            bigram.clear();
            bigram.push_str(w[0]);
            bigram.push(' ');
            bigram.push_str(w[1]);
            pairs.push(self.slot(&bigram));
        }
        Ok(FeatureVector::from_pairs(self.dim, pairs)?.normalized())
    }

    fn describe(&self) -> String {
        format!("hashed-ngram(dim={})", self.dim)
    }
}

#[derive(Deserialize)]
struct PrecomputedRecord {
    text: String,
    features: Vec<f64>,
}

/// Frozen features supplied from outside (for instance sentence vectors from
/// a pretrained model), looked up by whitespace-normalized text. Only the projection on top
/// of them is trained.
#[derive(Debug, Clone)]
pub struct PrecomputedFeaturizer {
    dim: usize,
    table: HashMap<String, FeatureVector>,
}

impl PrecomputedFeaturizer {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: &str, values: &[f64]) -> Result<(), EncoderError> {
        if values.len() != self.dim {
            return Err(EncoderError::ShapeMismatch(format!(
                "feature vector of length {} for dimension {}",
                values.len(),
                self.dim
            )));
        }
        self.table
            .insert(normalize_whitespace(text), FeatureVector::dense(values)?);
        Ok(())
    }

    /// Reads `{"text": ..., "features": [...]}` lines. All vectors must share
    /// one length, which becomes the feature dimension.
    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let content = fs::read_to_string(path)?;
        let mut out: Option<Self> = None;
        for (n, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: PrecomputedRecord =
                serde_json::from_str(line).map_err(|e| EncoderError::BadFeatureFile(format!("line {}: {e}", n + 1)))?;
            let f = out.get_or_insert_with(|| Self::new(rec.features.len()));
            f.insert(&rec.text, &rec.features)?;
        }
        out.ok_or_else(|| EncoderError::BadFeatureFile("no records".into()))
    }
}

impl Featurizer for PrecomputedFeaturizer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn featurize(&self, text: &str) -> Result<FeatureVector, EncoderError> {
        self.table
            .get(&normalize_whitespace(text))
            .cloned()
            .ok_or_else(|| EncoderError::UnknownText(text.chars().take(80).collect()))
    }

    fn describe(&self) -> String {
        format!("precomputed(dim={}, texts={})", self.dim, self.table.len())
    }
}
