//! Sentence → Gaussian encoder.
//!
//! A base encoder turns a sentence into a vector `v`; two independent linear
//! heads map it to the mean `W_μᵀv + b_μ` and the variance
//! `softplus(W_σᵀv + b_σ) + ε`.

use std::collections::HashMap;
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianEmbedding;

/// Added to every softplus output so variances stay clear of the
/// degeneracy bound in [`crate::gaussian::MIN_VARIANCE`].
pub const VARIANCE_FLOOR: f64 = 1e-6;

pub const DEFAULT_BUCKETS: usize = 1 << 16;
pub const DEFAULT_BASE_DIM: usize = 64;
pub const DEFAULT_EMBED_DIM: usize = 32;

/// Half-width of the uniform initialisation of bag-of-token vectors.
const TABLE_INIT_HALF_WIDTH: f64 = 1.0;

/// Lowercase, split on runs of non-alphanumeric characters, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of softplus.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fixed base vectors keyed by exact sentence text.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedVectors {
    dim: usize,
    texts: Vec<String>,
    values: Vec<f32>,
    index: HashMap<String, usize>,
}

impl PrecomputedVectors {
    pub fn new(dim: usize) -> Self {
        Self { dim, texts: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    /// Insert a vector. A repeated text replaces the earlier vector.
    pub fn insert(&mut self, text: impl Into<String>, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, vector.len()));
        }
        if let Some(index) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "base vector", index });
        }
        let text = text.into();
        match self.index.get(&text) {
            Some(&row) => {
                self.values[row * self.dim..(row + 1) * self.dim].copy_from_slice(vector);
            }
            None => {
                self.index.insert(text.clone(), self.texts.len());
                self.texts.push(text);
                self.values.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&[f32]> {
        self.index.get(text).map(|&row| &self.values[row * self.dim..(row + 1) * self.dim])
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.texts.iter().zip(self.values.chunks_exact(self.dim.max(1))).map(|(t, v)| (t.as_str(), v))
    }
}

/// Trainable hashed bag-of-tokens encoder: the base vector is the mean of
/// the table rows of the sentence's token buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct BagEncoder {
    buckets: usize,
    dim: usize,
    /// Row-major `buckets × dim`.
    pub(crate) table: Vec<f64>,
}

impl BagEncoder {
    pub fn zeros(buckets: usize, dim: usize) -> Result<Self> {
        if buckets == 0 || dim == 0 {
            return Err(Error::Config("bag encoder needs buckets ≥ 1 and dim ≥ 1".into()));
        }
        Ok(Self { buckets, dim, table: vec![0.0; buckets * dim] })
    }

    pub fn random<R: Rng + ?Sized>(buckets: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let mut bag = Self::zeros(buckets, dim)?;
        for x in &mut bag.table {
            *x = rng.random_range(-TABLE_INIT_HALF_WIDTH..TABLE_INIT_HALF_WIDTH);
        }
        Ok(bag)
    }

    pub fn from_table(buckets: usize, dim: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != buckets * dim {
            return Err(Error::DimensionMismatch(buckets * dim, table.len()));
        }
        let mut bag = Self::zeros(buckets, dim)?;
        bag.table = table;
        Ok(bag)
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn bucket(&self, token: &str) -> usize {
        let mut h = FnvHasher::default();
        h.write(token.as_bytes());
        (h.finish() % self.buckets as u64) as usize
    }

    fn row(&self, bucket: usize) -> &[f64] {
        &self.table[bucket * self.dim..(bucket + 1) * self.dim]
    }

    /// Buckets of every token of `text`, with repetition.
    pub fn token_buckets(&self, text: &str) -> Result<Vec<usize>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptySentence(text.to_string()));
        }
        Ok(tokens.iter().map(|t| self.bucket(t)).collect())
    }

    fn average(&self, buckets: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &b in buckets {
            for (acc, x) in v.iter_mut().zip(self.row(b)) {
                *acc += x;
            }
        }
        let scale = 1.0 / buckets.len() as f64;
        v.iter_mut().for_each(|x| *x *= scale);
        v
    }
}

/// Source of the base vector `v` fed to the projection heads.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseEncoder {
    Precomputed(Arc<PrecomputedVectors>),
    Bag(BagEncoder),
}

impl BaseEncoder {
    pub fn dim(&self) -> usize {
        match self {
            BaseEncoder::Precomputed(p) => p.dim(),
            BaseEncoder::Bag(b) => b.dim(),
        }
    }

    pub fn base_vector(&self, text: &str) -> Result<Vec<f64>> {
        self.base_with_buckets(text).map(|(v, _)| v)
    }

    fn base_with_buckets(&self, text: &str) -> Result<(Vec<f64>, Option<Vec<usize>>)> {
        match self {
            BaseEncoder::Precomputed(p) => {
                let v = p.get(text).ok_or_else(|| Error::UnknownSentence(text.to_string()))?;
                Ok((v.iter().map(|&x| f64::from(x)).collect(), None))
            }
            BaseEncoder::Bag(bag) => {
                let buckets = bag.token_buckets(text)?;
                Ok((bag.average(&buckets), Some(buckets)))
            }
        }
    }
}

/// Which positivity transform produces the variance. Only softplus exists;
/// the identifier is kept explicit so checkpoints and callers can name it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceActivation {
    #[default]
    SoftplusFloor,
}

impl VarianceActivation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            VarianceActivation::SoftplusFloor => softplus(x) + VARIANCE_FLOOR,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            VarianceActivation::SoftplusFloor => sigmoid(x),
        }
    }
}

/// The two untied linear heads. Weights are row-major `base_dim × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHeads {
    base_dim: usize,
    dim: usize,
    pub(crate) mean_weight: Vec<f64>,
    pub(crate) mean_bias: Vec<f64>,
    pub(crate) var_weight: Vec<f64>,
    pub(crate) var_bias: Vec<f64>,
    pub activation: VarianceActivation,
}

impl ProjectionHeads {
    pub fn zeros(base_dim: usize, dim: usize) -> Result<Self> {
        if base_dim == 0 || dim == 0 {
            return Err(Error::Config("heads need base_dim ≥ 1 and dim ≥ 1".into()));
        }
        Ok(Self {
            base_dim,
            dim,
            mean_weight: vec![0.0; base_dim * dim],
            mean_bias: vec![0.0; dim],
            var_weight: vec![0.0; base_dim * dim],
            var_bias: vec![0.0; dim],
            activation: VarianceActivation::default(),
        })
    }

    /// Uniform weights with half-width `sqrt(6 / (base_dim + dim))`, zero biases.
    pub fn random<R: Rng + ?Sized>(base_dim: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let mut heads = Self::zeros(base_dim, dim)?;
        let half = (6.0 / (base_dim + dim) as f64).sqrt();
        for w in heads.mean_weight.iter_mut().chain(heads.var_weight.iter_mut()) {
            *w = rng.random_range(-half..half);
        }
        Ok(heads)
    }

    pub fn from_parts(
        base_dim: usize,
        dim: usize,
        mean_weight: Vec<f64>,
        mean_bias: Vec<f64>,
        var_weight: Vec<f64>,
        var_bias: Vec<f64>,
    ) -> Result<Self> {
        let mut heads = Self::zeros(base_dim, dim)?;
        for (got, want) in [
            (mean_weight.len(), base_dim * dim),
            (var_weight.len(), base_dim * dim),
            (mean_bias.len(), dim),
            (var_bias.len(), dim),
        ] {
            if got != want {
                return Err(Error::DimensionMismatch(want, got));
            }
        }
        heads.mean_weight = mean_weight;
        heads.mean_bias = mean_bias;
        heads.var_weight = var_weight;
        heads.var_bias = var_bias;
        Ok(heads)
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean_weight(&self) -> &[f64] {
        &self.mean_weight
    }

    pub fn mean_bias(&self) -> &[f64] {
        &self.mean_bias
    }

    pub fn var_weight(&self) -> &[f64] {
        &self.var_weight
    }

    pub fn var_bias(&self) -> &[f64] {
        &self.var_bias
    }

    fn affine(&self, weight: &[f64], bias: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = bias.to_vec();
        for (i, &vi) in v.iter().enumerate() {
            let row = &weight[i * self.dim..(i + 1) * self.dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += vi * w;
            }
        }
        out
    }

    /// Mean output and variance pre-activation for a base vector.
    pub(crate) fn project(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.affine(&self.mean_weight, &self.mean_bias, v), self.affine(&self.var_weight, &self.var_bias, v))
    }
}

/// Everything the backward pass needs about one encoded sentence.
#[derive(Debug, Clone)]
pub(crate) struct EncodeTrace {
    pub embedding: GaussianEmbedding,
    pub base: Vec<f64>,
    pub var_pre: Vec<f64>,
    pub buckets: Option<Vec<usize>>,
}

/// Base encoder plus projection heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub base: BaseEncoder,
    pub heads: ProjectionHeads,
}

impl Model {
    pub fn new(base: BaseEncoder, heads: ProjectionHeads) -> Result<Self> {
        if base.dim() != heads.base_dim() {
            return Err(Error::DimensionMismatch(base.dim(), heads.base_dim()));
        }
        Ok(Self { base, heads })
    }

    /// Randomly initialised bag-of-tokens model.
    pub fn random_bag<R: Rng + ?Sized>(
        buckets: usize,
        base_dim: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bag = BagEncoder::random(buckets, base_dim, rng)?;
        let heads = ProjectionHeads::random(base_dim, dim, rng)?;
        Self::new(BaseEncoder::Bag(bag), heads)
    }

    /// Randomly initialised heads over fixed precomputed vectors.
    pub fn random_precomputed<R: Rng + ?Sized>(
        vectors: Arc<PrecomputedVectors>,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let heads = ProjectionHeads::random(vectors.dim(), dim, rng)?;
        Self::new(BaseEncoder::Precomputed(vectors), heads)
    }

    pub fn dim(&self) -> usize {
        self.heads.dim()
    }

    pub fn encode(&self, text: &str) -> Result<GaussianEmbedding> {
        self.encode_traced(text).map(|t| t.embedding)
    }

    pub(crate) fn encode_traced(&self, text: &str) -> Result<EncodeTrace> {
        let (base, buckets) = self.base.base_with_buckets(text)?;
        let (mean, var_pre) = self.heads.project(&base);
        let activation = self.heads.activation;
        let variance = var_pre.iter().map(|&z| activation.apply(z)).collect();
        Ok(EncodeTrace { embedding: GaussianEmbedding::new(mean, variance)?, base, var_pre, buckets })
    }

    /// Trainable parameter buffers in checkpoint order: bag table (if any),
    /// mean weight, mean bias, variance weight, variance bias.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(5);
        if let BaseEncoder::Bag(bag) = &self.base {
            out.push(&bag.table);
        }
        out.push(&self.heads.mean_weight);
        out.push(&self.heads.mean_bias);
        out.push(&self.heads.var_weight);
        out.push(&self.heads.var_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(5);
        if let BaseEncoder::Bag(bag) = &mut self.base {
            out.push(&mut bag.table);
        }
        out.push(&mut self.heads.mean_weight);
        out.push(&mut self.heads.mean_bias);
        out.push(&mut self.heads.var_weight);
        out.push(&mut self.heads.var_bias);
        out
    }
}
