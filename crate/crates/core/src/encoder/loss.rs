//! Margin triplet loss over cosine scores, with exact gradients.
//!
//! For an anchor `a`, positive `p` and negatives `n_k`:
//!
//! ```text
//! loss = sum_k max(0, <e_a, e_nk> - <e_a, e_p> + margin)
//! ```
//!
//! where every `e = W f / |W f|`. The gradient flows back through the
//! normalization: for `e = u / |u|`, `dL/du = (g - <g, e> e) / |u|`.

use std::collections::HashMap;

use rayon::prelude::*;

use super::features::FeatureVector;
use super::params::{score, EncoderParams};
use super::EncoderError;

/// Sparse gradient with respect to the projection: only the feature rows
/// that appeared in the batch are stored, each of length `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    features: usize,
    dim: usize,
    rows: HashMap<u32, Vec<f64>>,
}

impl Gradient {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            features: params.feature_dim(),
            dim: params.embed_dim(),
            rows: HashMap::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.features
    }

    pub fn embed_dim(&self) -> usize {
        self.dim
    }

    /// Gradient for weight `(d, j)` of the `D × H` projection.
    pub fn get(&self, d: usize, j: usize) -> f64 {
        self.rows.get(&(j as u32)).map_or(0.0, |r| r[d])
    }

    pub fn feature_row(&self, j: usize) -> Option<&[f64]> {
        self.rows.get(&(j as u32)).map(Vec::as_slice)
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        let dim = self.dim;
        self.rows.entry(j as u32).or_insert_with(|| vec![0.0; dim])
    }

    pub fn touched_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_zero(&self) -> bool {
        self.rows.values().all(|r| r.iter().all(|&g| g == 0.0))
    }

    /// Row-major `D × H` dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.features * self.dim];
        for (&j, row) in &self.rows {
            for (d, g) in row.iter().enumerate() {
                out[d * self.features + j as usize] = *g;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.values().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }

    /// Index (feature-major) of the first non-finite entry, if any.
    pub(crate) fn first_non_finite(&self) -> Option<usize> {
        self.rows.iter().find_map(|(&j, row)| {
            row.iter()
                .position(|g| !g.is_finite())
                .map(|d| j as usize * self.dim + d)
        })
    }

    fn accumulate(&mut self, f: &FeatureVector, g_u: &[f64]) {
        for &(j, w) in f.entries() {
            for (r, g) in self.row_mut(j as usize).iter_mut().zip(g_u) {
                *r += w * g;
            }
        }
    }
}

/// One anchor's triplet terms, as indices into the batch's text list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorTerm {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Mean over anchors of the per-anchor triplet loss (summed over that
/// anchor's negatives), and its gradient.
///
/// Texts are embedded once per call, so a label shared by several anchors is
/// encoded once and its gradient contributions are pooled.
pub fn batch_loss_and_grad(
    params: &EncoderParams,
    texts: &[&FeatureVector],
    terms: &[AnchorTerm],
    margin: f64,
) -> Result<(f64, Gradient), EncoderError> {
    let dim = params.embed_dim();
    let projected: Vec<Vec<f64>> = texts.par_iter().map(|f| params.project(f)).collect::<Result<_, _>>()?;
    let mut norms = Vec::with_capacity(projected.len());
    let mut embedded = Vec::with_capacity(projected.len());
    for u in &projected {
        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n >= 1e-12) {
            return Err(EncoderError::ZeroNorm);
        }
        norms.push(n);
        embedded.push(u.iter().map(|v| v / n).collect::<Vec<f64>>());
    }

    let mut g_e = vec![vec![0.0; dim]; texts.len()];
    let mut total = 0.0;
    for t in terms {
        let ea = &embedded[t.anchor];
        let ep = &embedded[t.positive];
        let s_pos = score(ea, ep);
        for &n in &t.negatives {
            let en = &embedded[n];
            let hinge = score(ea, en) - s_pos + margin;
            if hinge <= 0.0 {
                continue;
            }
            total += hinge;
            for d in 0..dim {
                g_e[t.anchor][d] += en[d] - ep[d];
                g_e[t.positive][d] -= ea[d];
                g_e[n][d] += ea[d];
            }
        }
    }

    let scale = if terms.is_empty() {
        0.0
    } else {
        1.0 / terms.len() as f64
    };
    let mut grad = Gradient::zeros_like(params);
    for (i, g) in g_e.iter().enumerate() {
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let e = &embedded[i];
        let radial = score(g, e);
        let g_u: Vec<f64> = g
            .iter()
            .zip(e)
            .map(|(gd, ed)| scale * (gd - radial * ed) / norms[i])
            .collect();
        grad.accumulate(texts[i], &g_u);
    }
    Ok((total * scale, grad))
}

/// Loss and gradient for a single anchor with any number of negatives.
pub fn triplet_loss_and_grad(
    params: &EncoderParams,
    anchor: &FeatureVector,
    positive: &FeatureVector,
    negatives: &[FeatureVector],
    margin: f64,
) -> Result<(f64, Gradient), EncoderError> {
    let mut texts = vec![anchor, positive];
    texts.extend(negatives.iter());
    let term = AnchorTerm {
        anchor: 0,
        positive: 1,
        negatives: (2..texts.len()).collect(),
    };
    batch_loss_and_grad(params, &texts, &[term], margin)
}
