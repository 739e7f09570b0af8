use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{FeatureVector, Fnv1a};
use super::EncoderError;

pub const DEFAULT_EMBED_DIM: usize = 256;

/// Norm below which a projected vector is treated as zero.
const ZERO_NORM: f64 = 1e-12;

/// A point on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values`; fails with `ZeroNorm` on (near) zero input.
    pub fn from_unnormalized(mut values: Vec<f64>) -> Result<Self, EncoderError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= ZERO_NORM) {
            return Err(EncoderError::ZeroNorm);
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine similarity of two unit vectors (their dot product).
pub fn score(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The shared projection from feature space (`H`) to embedding space (`D`).
///
/// Stored feature-major: the `D` weights that feature `j` contributes are
/// contiguous at `weights[j * D..(j + 1) * D]`, so projecting a sparse vector
/// touches one contiguous row per nonzero feature.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub(crate) features: usize,
    pub(crate) dim: usize,
    pub(crate) weights: Vec<f64>,
    pub version: u32,
    pub seed: u64,
}

impl EncoderParams {
    /// Uniform fan-in initialization in `[-1/sqrt(H), 1/sqrt(H)]`.
    pub fn init(features: usize, dim: usize, seed: u64) -> Self {
        let bound = 1.0 / (features as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..features * dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            features,
            dim,
            weights,
            version: 0,
            seed,
        }
    }

    /// Builds params from a row-major `dim × features` matrix.
    pub fn from_rows(dim: usize, features: usize, rows: &[f64]) -> Result<Self, EncoderError> {
        if rows.len() != dim * features {
            return Err(EncoderError::ShapeMismatch(format!(
                "{} values for a {dim}x{features} projection",
                rows.len()
            )));
        }
        let mut weights = vec![0.0; rows.len()];
        for d in 0..dim {
            for j in 0..features {
                weights[j * dim + d] = rows[d * features + j];
            }
        }
        Ok(Self {
            features,
            dim,
            weights,
            version: 0,
            seed: 0,
        })
    }

    /// The projection as a row-major `dim × features` matrix.
    pub fn to_rows(&self) -> Vec<f64> {
        let mut rows = vec![0.0; self.weights.len()];
        for j in 0..self.features {
            for d in 0..self.dim {
                rows[d * self.features + j] = self.weights[j * self.dim + d];
            }
        }
        rows
    }

    pub fn feature_dim(&self) -> usize {
        self.features
    }

    pub fn embed_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weight of feature `j` on output coordinate `d`.
    pub fn get(&self, d: usize, j: usize) -> f64 {
        self.weights[j * self.dim + d]
    }

    pub fn set(&mut self, d: usize, j: usize, value: f64) {
        self.weights[j * self.dim + d] = value;
    }

    pub fn feature_row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.dim..(j + 1) * self.dim]
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Checksum of the shape and every weight bit. Indexes built from these
    /// params carry it so stale indexes can be detected.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.update(&(self.features as u64).to_le_bytes());
        h.update(&(self.dim as u64).to_le_bytes());
        for w in &self.weights {
            h.update(&w.to_le_bytes());
        }
        h.finish()
    }

    /// Unnormalized projection `W f`.
    pub fn project(&self, f: &FeatureVector) -> Result<Vec<f64>, EncoderError> {
        if f.dim() != self.features {
            return Err(EncoderError::ShapeMismatch(format!(
                "feature vector of dimension {} for a projection over {}",
                f.dim(),
                self.features
            )));
        }
        let mut out = vec![0.0; self.dim];
        for &(j, w) in f.entries() {
            let j = j as usize;
            if j >= self.features {
                return Err(EncoderError::FeatureOutOfRange {
                    index: j,
                    dim: self.features,
                });
            }
            for (o, p) in out.iter_mut().zip(self.feature_row(j)) {
                *o += w * p;
            }
        }
        Ok(out)
    }
}

/// `normalize(W f)`.
pub fn encode(params: &EncoderParams, f: &FeatureVector) -> Result<Embedding, EncoderError> {
    Embedding::from_unnormalized(params.project(f)?)
}
