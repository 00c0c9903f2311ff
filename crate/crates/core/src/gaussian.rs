//! Diagonal Gaussian embeddings and the asymmetric KL similarity.
//!
//! A sentence is a normal distribution `N(mean, diag(variance))`. For two
//! such distributions the KL divergence has the closed form
//!
//! ```text
//! KL(a‖b) = ½ Σ_k [ ln(σ²_b,k / σ²_a,k) + σ²_a,k / σ²_b,k + (μ_a,k − μ_b,k)² / σ²_b,k − 1 ]
//! ```
//!
//! which costs O(d). Similarity is `1 / (1 + KL(query‖reference))` and lies
//! in `(0, 1]`. A wide query against a narrow reference scores lower than
//! the other way round, which is what lets the variance encode entailment
//! direction.

use crate::error::{Error, Result};

/// Variances at or below this are rejected as degenerate.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Negative KL values down to this magnitude are treated as rounding and
/// clamped to zero.
pub const NEGATIVE_KL_TOLERANCE: f64 = 1e-9;

/// Mean and diagonal variance of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEmbedding {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl GaussianEmbedding {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch(mean.len(), variance.len()));
        }
        if mean.is_empty() {
            return Err(Error::EmptyEmbedding);
        }
        if let Some(index) = mean.iter().position(|m| !m.is_finite()) {
            return Err(Error::NonFinite { what: "mean", index });
        }
        if let Some(index) = variance.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "variance", index });
        }
        if let Some(index) = variance.iter().position(|&v| v <= MIN_VARIANCE) {
            return Err(Error::DegenerateVariance { index, value: variance[index] });
        }
        Ok(Self { mean, variance })
    }

    /// Isotropic embedding: every variance component equals `variance`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, vec![variance; d])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }
}

/// Partial derivatives of `KL(a‖b)` with respect to each parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct KlGradients {
    pub mean_a: Vec<f64>,
    pub variance_a: Vec<f64>,
    pub mean_b: Vec<f64>,
    pub variance_b: Vec<f64>,
}

fn check_dims(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(())
}

/// Sum of the per-dimension KL terms before halving and clamping.
fn raw_kl(a: &GaussianEmbedding, b: &GaussianEmbedding) -> f64 {
    a.mean
        .iter()
        .zip(&a.variance)
        .zip(b.mean.iter().zip(&b.variance))
        .map(|((&ma, &va), (&mb, &vb))| kl_term(ma, va, mb, vb))
        .sum::<f64>()
        * 0.5
}

#[inline]
fn kl_term(ma: f64, va: f64, mb: f64, vb: f64) -> f64 {
    let diff = ma - mb;
    let inv_vb = 1.0 / vb;
    (vb / va).ln() + va * inv_vb + diff * diff * inv_vb - 1.0
}

fn clamp_kl(raw: f64) -> Result<f64> {
    if raw >= 0.0 {
        Ok(raw)
    } else if raw >= -NEGATIVE_KL_TOLERANCE {
        Ok(0.0)
    } else {
        Err(Error::NegativeDivergence(raw))
    }
}

/// Closed-form `KL(a‖b)` between diagonal Gaussians.
pub fn kl_divergence(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<f64> {
    check_dims(a, b)?;
    clamp_kl(raw_kl(a, b))
}

/// `1 / (1 + KL(query‖reference))`.
///
/// An overflowing divergence maps to the smallest positive `f64` so the
/// result never leaves `(0, 1]`.
pub fn similarity(query: &GaussianEmbedding, reference: &GaussianEmbedding) -> Result<f64> {
    let kl = kl_divergence(query, reference)?;
    Ok(similarity_from_kl(kl))
}

pub(crate) fn similarity_from_kl(kl: f64) -> f64 {
    let s = 1.0 / (1.0 + kl);
    if s > 0.0 {
        s
    } else {
        f64::MIN_POSITIVE
    }
}

/// Gradients of `KL(a‖b)` with respect to both means and both variances.
pub fn kl_gradients(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<KlGradients> {
    kl_with_gradients(a, b).map(|(_, g)| g)
}

/// The divergence and its gradients in one pass.
pub fn kl_with_gradients(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<(f64, KlGradients)> {
    check_dims(a, b)?;
    let d = a.dim();
    let mut g = KlGradients {
        mean_a: Vec::with_capacity(d),
        variance_a: Vec::with_capacity(d),
        mean_b: Vec::with_capacity(d),
        variance_b: Vec::with_capacity(d),
    };
    let mut raw = 0.0;
    for k in 0..d {
        let (ma, va, mb, vb) = (a.mean[k], a.variance[k], b.mean[k], b.variance[k]);
        let diff = ma - mb;
        let inv_vb = 1.0 / vb;
        raw += kl_term(ma, va, mb, vb);
        g.mean_a.push(diff * inv_vb);
        g.mean_b.push(-diff * inv_vb);
        g.variance_a.push(0.5 * (inv_vb - 1.0 / va));
        g.variance_b.push(0.5 * (inv_vb - (va + diff * diff) * inv_vb * inv_vb));
    }
    Ok((clamp_kl(0.5 * raw)?, g))
}
