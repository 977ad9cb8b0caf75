//! Token state and the per-layer attention bookkeeping.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Per-layer token embeddings. Row 0 is the global token; rows `1..=N` are
/// patch tokens in row-major grid order.
#[derive(Debug, Clone)]
pub struct TokenState {
    /// Index of the layer that produced these embeddings (0 = tower input).
    pub layer: usize,
    /// Grid side; the patch count is `grid * grid`.
    pub grid: usize,
    /// `(grid^2 + 1, width)`.
    pub embeddings: DenseMatrix,
}

impl TokenState {
    pub fn new(layer: usize, grid: usize, embeddings: DenseMatrix) -> Result<Self> {
        if embeddings.rows() != grid * grid + 1 {
            return Err(Error::Shape(format!(
                "{} embedding rows for a {grid}x{grid} grid",
                embeddings.rows()
            )));
        }
        Ok(TokenState {
            layer,
            grid,
            embeddings,
        })
    }

    pub fn patch_count(&self) -> usize {
        self.grid * self.grid
    }

    /// Embedding row of patch token `i` (0-based patch index).
    pub fn patch_row(&self, i: usize) -> &[f32] {
        self.embeddings.row(i + 1)
    }
}

/// Per-layer head-averaged attention matrices plus running sums for the
/// cumulative averages.
///
/// `qk_pre` holds the softmax output before any hook modulation (the values
/// the joint identification rule and the diagnostics are defined on);
/// `qk_post` holds the maps as actually applied to the values.
#[derive(Debug, Clone)]
pub struct AttentionStack {
    tokens: usize,
    heads: usize,
    qk_pre: Vec<DenseMatrix>,
    qk_post: Vec<DenseMatrix>,
    qq: Vec<DenseMatrix>,
    kk: Vec<DenseMatrix>,
    kk_sum: Vec<f64>,
    qk_pre_sum: Vec<f64>,
}

impl AttentionStack {
    pub fn new(tokens: usize, heads: usize) -> Self {
        AttentionStack {
            tokens,
            heads,
            qk_pre: Vec::new(),
            qk_post: Vec::new(),
            qq: Vec::new(),
            kk: Vec::new(),
            kk_sum: vec![0.0; tokens * tokens],
            qk_pre_sum: vec![0.0; tokens * tokens],
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Number of layers recorded so far.
    pub fn layers_seen(&self) -> usize {
        self.kk.len()
    }

    /// Record one layer's head-averaged attention kinds. The key-key and
    /// query-key running sums advance here, so cumulative averages at layer
    /// `l` cover exactly `l * heads` per-head matrices.
    pub fn push_layer(
        &mut self,
        qk_pre: DenseMatrix,
        qq: DenseMatrix,
        kk: DenseMatrix,
    ) -> Result<()> {
        for (name, m) in [("qk", &qk_pre), ("qq", &qq), ("kk", &kk)] {
            if m.rows() != self.tokens || m.cols() != self.tokens {
                return Err(Error::Shape(format!(
                    "{name} attention is {}x{}, tower has {} tokens",
                    m.rows(),
                    m.cols(),
                    self.tokens
                )));
            }
        }
        for (s, &v) in self.kk_sum.iter_mut().zip(kk.data().iter()) {
            *s += v as f64;
        }
        for (s, &v) in self.qk_pre_sum.iter_mut().zip(qk_pre.data().iter()) {
            *s += v as f64;
        }
        self.qk_post.push(qk_pre.clone());
        self.qk_pre.push(qk_pre);
        self.qq.push(qq);
        self.kk.push(kk);
        Ok(())
    }

    /// Replace the stored as-applied query-key map for the latest layer.
    pub fn record_qk_post(&mut self, m: DenseMatrix) {
        if let Some(slot) = self.qk_post.last_mut() {
            *slot = m;
        }
    }

    pub fn qk_pre(&self) -> &[DenseMatrix] {
        &self.qk_pre
    }

    pub fn qk_post(&self) -> &[DenseMatrix] {
        &self.qk_post
    }

    pub fn qq(&self) -> &[DenseMatrix] {
        &self.qq
    }

    pub fn kk(&self) -> &[DenseMatrix] {
        &self.kk
    }

    /// Mean of the head-averaged key-key attention over all recorded layers.
    pub fn kk_cumulative_avg(&self) -> Result<DenseMatrix> {
        self.cumulative(&self.kk_sum)
    }

    /// Mean of the head-averaged (pre-modulation) query-key attention over
    /// all recorded layers.
    pub fn qk_cumulative_avg(&self) -> Result<DenseMatrix> {
        self.cumulative(&self.qk_pre_sum)
    }

    fn cumulative(&self, sum: &[f64]) -> Result<DenseMatrix> {
        let n = self.layers_seen();
        if n == 0 {
            return Err(Error::Contract(
                "cumulative attention requested before any layer ran".into(),
            ));
        }
        let inv = 1.0 / n as f64;
        DenseMatrix::from_vec(
            self.tokens,
            self.tokens,
            sum.iter().map(|&v| (v * inv) as f32).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stochastic(tokens: usize, seed: u64) -> DenseMatrix {
        let mut s = seed;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            ((s >> 40) as f32 / 16777216.0) + 0.01
        };
        let mut m = DenseMatrix::from_fn(tokens, tokens, |_, _| next());
        for i in 0..tokens {
            let sum: f32 = m.row(i).iter().sum();
            for v in m.row_mut(i) {
                *v /= sum;
            }
        }
        m
    }

    #[test]
    fn cumulative_average_matches_direct_mean() {
        let mut stack = AttentionStack::new(5, 2);
        let mats: Vec<DenseMatrix> = (0..3).map(|i| stochastic(5, 77 + i)).collect();
        for m in &mats {
            stack
                .push_layer(stochastic(5, 1), stochastic(5, 2), m.clone())
                .unwrap();
        }
        let avg = stack.kk_cumulative_avg().unwrap();
        let direct = DenseMatrix::mean_of(&mats).unwrap();
        assert!(avg.max_abs_diff(&direct) < 1e-6);
        assert!(avg.max_row_sum_deviation() < 1e-5);
    }

    #[test]
    fn empty_stack_has_no_cumulative() {
        let stack = AttentionStack::new(4, 1);
        assert!(stack.kk_cumulative_avg().is_err());
    }
}
