//! The per-layer modulation seam.
//!
//! A hook sees the layer input, the per-head projections, and the per-head
//! post-softmax attention; it may rewrite the attention in place and, once
//! the layer has produced its output embeddings, rewrite those too. Returned
//! attention must stay row-stochastic (enforced by the tower when contract
//! checking is on).

use crate::error::Result;
use crate::numerics::DenseMatrix;

use super::state::{AttentionStack, TokenState};

/// Everything a hook may inspect while a layer's attention is being formed.
pub struct AttentionCtx<'a> {
    /// 1-based layer index.
    pub layer: usize,
    /// Total number of layers in the tower.
    pub total_layers: usize,
    /// Layer input embeddings (before the pre-attention norm).
    pub state: &'a TokenState,
    /// Per-head `(tokens, head_dim)` projections.
    pub queries: &'a [DenseMatrix],
    pub keys: &'a [DenseMatrix],
    pub values: &'a [DenseMatrix],
    /// Attention bookkeeping including the current layer (already pushed).
    pub stack: &'a AttentionStack,
}

pub trait LayerHook {
    /// Runs before the layer computes anything, on the raw input embeddings.
    /// The stack covers layers before this one.
    fn before_layer(
        &mut self,
        _layer: usize,
        _state: &mut TokenState,
        _stack: &AttentionStack,
    ) -> Result<()> {
        Ok(())
    }

    /// May rewrite the per-head post-softmax attention in place.
    fn modulate_attention(
        &mut self,
        _ctx: &AttentionCtx<'_>,
        _attention: &mut [DenseMatrix],
    ) -> Result<()> {
        Ok(())
    }

    /// Runs on the layer output embeddings (not called for the final layer,
    /// which produces dense features instead of a next-layer state).
    fn after_layer(&mut self, _layer: usize, _state: &mut TokenState) -> Result<()> {
        Ok(())
    }
}

/// The plain tower: no modulation anywhere.
pub struct IdentityHook;

impl LayerHook for IdentityHook {}
