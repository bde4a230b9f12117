//! Differentiable text encoders.
//!
//! The encoder family is mean-pooled token embeddings followed by a square
//! linear head. Discrete tokens have no derivative, so gradients are taken
//! with respect to the one-hot selector row of each suffix position (the
//! standard relaxation in greedy coordinate methods); for this family the
//! chain rule is closed-form and exact, which is what lets the test suite
//! hold the analytic path against finite differences.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tokens::{Suffix, TokenSequence};

/// V x d table of token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    matrix: Matrix,
}

impl EmbeddingTable {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::numeric("embedding table has non-finite entries"));
        }
        Ok(EmbeddingTable { matrix })
    }

    /// Entries ~ N(0, 1/d): rows have unit expected squared norm.
    pub fn seeded(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let sigma = 1.0 / (dim as f64).sqrt();
        EmbeddingTable {
            matrix: Matrix::seeded_normal(vocab_size, dim, sigma, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, token: u32) -> &[f64] {
        self.matrix.row(token as usize)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

/// Mean-pooled embeddings with a `d x d` linear head.
///
/// Pure and immutable: encode and gradient calls are safe to run
/// concurrently from shared references.
#[derive(Debug, Clone)]
pub struct MeanPoolEncoder {
    table: EmbeddingTable,
    post_map: Matrix,
    seed: u64,
}

impl MeanPoolEncoder {
    pub fn new(table: EmbeddingTable, post_map: Matrix, seed: u64) -> Result<Self> {
        if post_map.rows() != table.dim() || post_map.cols() != table.dim() {
            return Err(Error::contract(format!(
                "post map must be {d}x{d}, got {}x{}",
                post_map.rows(),
                post_map.cols(),
                d = table.dim()
            )));
        }
        if !post_map.is_finite() {
            return Err(Error::numeric("post map has non-finite entries"));
        }
        Ok(MeanPoolEncoder {
            table,
            post_map,
            seed,
        })
    }

    /// Fully seeded encoder: iid table, identity head.
    pub fn seeded(vocab_size: usize, dim: usize, seed: u64, rng: &mut impl Rng) -> Self {
        let table = EmbeddingTable::seeded(vocab_size, dim, rng);
        MeanPoolEncoder {
            table,
            post_map: Matrix::identity(dim),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.vocab_size()
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn post_map(&self) -> &Matrix {
        &self.post_map
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mean of the token rows, through the head. Errors on empty input.
    pub fn encode(&self, tokens: &TokenSequence) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::EmptyQuery);
        }
        Ok(self.finish(self.mean_rows(tokens.ids()), tokens.len()))
    }

    /// Encoding where an empty sequence maps to the zero vector. Routing
    /// paths use this so that `route` is total.
    pub fn encode_or_zero(&self, tokens: &TokenSequence) -> Vec<f64> {
        if tokens.is_empty() {
            return vec![0.0; self.dim()];
        }
        self.finish(self.mean_rows(tokens.ids()), tokens.len())
    }

    /// Encoding of `prefix` followed by relaxed suffix positions.
    ///
    /// `suffix_weights` is L x V; suffix position `i` contributes
    /// `sum_v w[i][v] * table[v]` to the pool. With one-hot rows this equals
    /// `encode(prefix + suffix)`. Exposed so oracles can probe the relaxation
    /// independently of the analytic gradient path.
    pub fn encode_relaxed(&self, prefix: &TokenSequence, suffix_weights: &Matrix) -> Result<Vec<f64>> {
        if suffix_weights.cols() != self.vocab_size() {
            return Err(Error::contract(format!(
                "relaxed suffix weights have {} columns, vocabulary size is {}",
                suffix_weights.cols(),
                self.vocab_size()
            )));
        }
        let total = prefix.len() + suffix_weights.rows();
        if total == 0 {
            return Err(Error::EmptyQuery);
        }
        let mut sum = vec![0.0; self.dim()];
        for &id in prefix.ids() {
            for (s, &e) in sum.iter_mut().zip(self.table.row(id)) {
                *s += e;
            }
        }
        for i in 0..suffix_weights.rows() {
            for (v, &w) in suffix_weights.row(i).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (s, &e) in sum.iter_mut().zip(self.table.row(v as u32)) {
                    *s += w * e;
                }
            }
        }
        for s in &mut sum {
            *s /= total as f64;
        }
        Ok(self.post_map.vec_mul(&sum).expect("dims checked"))
    }

    fn mean_rows(&self, ids: &[u32]) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim()];
        for &id in ids {
            for (s, &e) in sum.iter_mut().zip(self.table.row(id)) {
                *s += e;
            }
        }
        let n = ids.len() as f64;
        for s in &mut sum {
            *s /= n;
        }
        sum
    }

    fn finish(&self, mean: Vec<f64>, _len: usize) -> Vec<f64> {
        self.post_map.vec_mul(&mean).expect("dims checked")
    }

    /// Exact one-hot gradients through mean pooling and the head.
    ///
    /// Given `d_output = dL/d(encode output)`, returns the L x V tensor whose
    /// `(i, v)` entry is `dL/d(one-hot weight of token v at suffix position i)`
    /// for a pooled sequence of `total_len` tokens ending in `suffix_len`
    /// suffix positions. For mean pooling every row is the same projection of
    /// the table, which is what position symmetry demands.
    pub fn onehot_grads(
        &self,
        total_len: usize,
        suffix_len: usize,
        d_output: &[f64],
        member_index: usize,
    ) -> Result<GradientTensor> {
        if suffix_len == 0 {
            return Err(Error::contract("gradient needs at least one suffix position"));
        }
        if d_output.len() != self.dim() {
            return Err(Error::contract(format!(
                "upstream gradient has length {}, encoder dim is {}",
                d_output.len(),
                self.dim()
            )));
        }
        // dL/d(mean) = post_map . d_output, then each one-hot weight scales a
        // table row into the mean with factor 1/total_len.
        let d_mean = self.post_map.mul_vec(d_output)?;
        let scale = 1.0 / total_len as f64;
        let vocab = self.vocab_size();
        let mut per_token = vec![0.0; vocab];
        for (v, slot) in per_token.iter_mut().enumerate() {
            let row = self.table.row(v as u32);
            *slot = scale * row.iter().zip(&d_mean).map(|(a, b)| a * b).sum::<f64>();
        }
        let values = Matrix::from_fn(suffix_len, vocab, |_, v| per_token[v]);
        GradientTensor::new(values, member_index)
    }
}

/// Per-member, per-position, per-vocabulary-token loss gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTensor {
    values: Matrix,
    member_index: usize,
}

impl GradientTensor {
    pub fn new(values: Matrix, member_index: usize) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::numeric("gradient tensor has non-finite entries"));
        }
        Ok(GradientTensor {
            values,
            member_index,
        })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn member_index(&self) -> usize {
        self.member_index
    }

    pub fn suffix_len(&self) -> usize {
        self.values.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.values.cols()
    }
}

/// A differentiable map from an encoder output to a scalar loss.
pub trait LossHead {
    fn loss(&self, encoded: &[f64]) -> f64;
    fn grad(&self, encoded: &[f64]) -> Vec<f64>;
}

/// `loss = w . x`
pub struct LinearHead(pub Vec<f64>);

impl LossHead for LinearHead {
    fn loss(&self, encoded: &[f64]) -> f64 {
        self.0.iter().zip(encoded).map(|(a, b)| a * b).sum()
    }

    fn grad(&self, _encoded: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
}

/// Constant loss: the zero-gradient edge case.
pub struct ConstHead(pub f64);

impl LossHead for ConstHead {
    fn loss(&self, _encoded: &[f64]) -> f64 {
        self.0
    }

    fn grad(&self, encoded: &[f64]) -> Vec<f64> {
        vec![0.0; encoded.len()]
    }
}

/// One-hot token gradients of `head(encode(q + s))` at the suffix positions.
pub fn loss_token_gradients(
    query: &TokenSequence,
    suffix: &Suffix,
    head: &dyn LossHead,
    encoder: &MeanPoolEncoder,
) -> Result<GradientTensor> {
    if suffix.is_empty() {
        return Err(Error::contract("suffix must have at least one token"));
    }
    let full = query.concat_suffix(suffix);
    let encoded = encoder.encode(&full)?;
    let loss = head.loss(&encoded);
    if !loss.is_finite() {
        return Err(Error::numeric(format!("loss is not finite: {loss}")));
    }
    let d_output = head.grad(&encoded);
    encoder.onehot_grads(full.len(), suffix.len(), &d_output, 0)
}
