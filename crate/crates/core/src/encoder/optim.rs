//! AdamW with bias correction and decoupled weight decay.
//!
//! ```text
//! theta <- theta - lr * wd * theta
//! m     <- b1 * m + (1 - b1) * g
//! v     <- b2 * v + (1 - b2) * g^2
//! theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```
//!
//! Gradients are sparse but the update is dense: rows without a gradient
//! still decay and their moments still shrink.

use rayon::prelude::*;

use super::loss::Gradient;
use super::params::EncoderParams;
use super::EncoderError;

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    pub fn new(params: &EncoderParams, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            step: 0,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_defaults(params: &EncoderParams) -> Self {
        Self::new(params, 2e-4, 0.01)
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

pub fn adamw_step(params: &mut EncoderParams, grads: &Gradient, opt: &mut OptState) -> Result<(), EncoderError> {
    let dim = params.embed_dim();
    if grads.feature_dim() != params.feature_dim() || grads.embed_dim() != dim {
        return Err(EncoderError::ShapeMismatch("gradient does not match params".into()));
    }
    if opt.m.len() != params.len() || opt.v.len() != params.len() {
        return Err(EncoderError::ShapeMismatch(
            "optimizer state does not match params".into(),
        ));
    }
    if let Some(at) = grads.first_non_finite() {
        return Err(EncoderError::NonFiniteGradient(at));
    }

    opt.step += 1;
    let t = opt.step as i32;
    let (lr, wd, b1, b2, eps) = (opt.lr, opt.weight_decay, opt.beta1, opt.beta2, opt.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let decay = 1.0 - lr * wd;

    params
        .raw_mut()
        .par_chunks_mut(dim)
        .zip(opt.m.par_chunks_mut(dim))
        .zip(opt.v.par_chunks_mut(dim))
        .enumerate()
        .for_each(|(j, ((theta, m), v))| {
            let g = grads.feature_row(j);
            for d in 0..dim {
                let gd = g.map_or(0.0, |r| r[d]);
                theta[d] *= decay;
                m[d] = b1 * m[d] + (1.0 - b1) * gd;
                v[d] = b2 * v[d] + (1.0 - b2) * gd * gd;
                let m_hat = m[d] / bc1;
                let v_hat = v[d] / bc2;
                theta[d] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    params.version = params.version.wrapping_add(1);
    Ok(())
}
