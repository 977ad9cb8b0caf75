//! Layer hooks implementing the refocusing pipeline and the suppression
//! ablations.
//!
//! Per layer (within the configured range): locate distraction tokens from
//! the layer input, locate defocused tokens by a normalized cut of the
//! configured similarity map, redistribute attention mass per head, and
//! after the layer completes smooth the distraction tokens' over-activated
//! dimensions. When no distraction token is found the hook touches nothing,
//! so the run is bit-identical to the plain tower.

use crate::error::Result;
use crate::model_io::ModelConfig;
use crate::numerics::DenseMatrix;
use crate::spectral::{
    build_graph, fiedler, select_defocused, SimilaritySource, ThresholdRule,
};
use crate::vit::{AttentionCtx, AttentionStack, LayerHook, TokenState};

use super::distraction::{localize_distractors, patch_column_mass};
use super::redistribute::{redistribute_attention_heads, redistribute_embeddings};
use super::suppress::{apply_suppression, mask_attention_columns, SuppressionStrategy};

/// Per-layer record of what the hook did, for diagnostics and analysis
/// exports.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub layer: usize,
    pub phi: Vec<f64>,
    pub omega: Vec<f64>,
    pub distraction: Vec<usize>,
    pub defocused: Vec<usize>,
    pub fiedler: Option<Vec<f64>>,
    pub orientation_flipped: bool,
    pub median_fallback: bool,
}

/// Cumulative attention column mass per patch token; zeros before any layer
/// has run.
pub fn cumulative_column_mass(stack: &AttentionStack, patches: usize) -> Result<Vec<f64>> {
    if stack.layers_seen() == 0 {
        return Ok(vec![0.0; patches]);
    }
    Ok(patch_column_mass(&stack.qk_cumulative_avg()?))
}

fn similarity_matrix(
    stack: &AttentionStack,
    source: SimilaritySource,
    patches: usize,
) -> Result<DenseMatrix> {
    let full = match source {
        SimilaritySource::KkCumAvg => stack.kk_cumulative_avg()?,
        SimilaritySource::Kk => stack.kk().last().expect("layer pushed").clone(),
        SimilaritySource::Qq => stack.qq().last().expect("layer pushed").clone(),
        SimilaritySource::Qk => stack.qk_pre().last().expect("layer pushed").clone(),
    };
    // Strip the global token: the cut is over the spatial grid only.
    Ok(full.sub_square(1, 1, patches))
}

/// The attention-refocusing hook.
pub struct RefocusHook<'a> {
    config: &'a ModelConfig,
    similarity: SimilaritySource,
    threshold_rule: ThresholdRule,
    apply: bool,
    current_dis: Vec<usize>,
    weight_sum: Vec<f64>,
    weight_count: Vec<u32>,
    weight_width: usize,
    /// Collected when tracing is enabled via [`RefocusHook::with_trace`].
    pub trace: Option<Vec<LayerTrace>>,
}

impl<'a> RefocusHook<'a> {
    pub fn new(
        config: &'a ModelConfig,
        similarity: SimilaritySource,
        threshold_rule: ThresholdRule,
    ) -> Self {
        RefocusHook {
            config,
            similarity,
            threshold_rule,
            apply: true,
            current_dis: Vec::new(),
            weight_sum: Vec::new(),
            weight_count: Vec::new(),
            weight_width: 0,
            trace: None,
        }
    }

    /// Locate and trace, but never modify: diagnostics over an unmodified
    /// tower.
    pub fn observer(
        config: &'a ModelConfig,
        similarity: SimilaritySource,
        threshold_rule: ThresholdRule,
    ) -> Self {
        let mut hook = Self::new(config, similarity, threshold_rule);
        hook.apply = false;
        hook
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Per-token mean of layer-normalized embedding weights,
    /// `(1/L) sum_l f_l / sum_k f_l[k]`, accumulated while tracing. Layers
    /// where a token's denominator was degenerate are skipped for that
    /// token. `(values, width)` with values laid out token-major.
    pub fn mean_relative_weights(&self) -> Option<(Vec<f64>, usize)> {
        if self.weight_width == 0 {
            return None;
        }
        let width = self.weight_width;
        let mut out = self.weight_sum.clone();
        for (i, chunk) in out.chunks_mut(width).enumerate() {
            let n = self.weight_count[i];
            if n == 0 {
                for v in chunk.iter_mut() {
                    *v = f64::NAN;
                }
            } else {
                for v in chunk.iter_mut() {
                    *v /= n as f64;
                }
            }
        }
        Some((out, width))
    }

    fn accumulate_weights(&mut self, state: &TokenState) {
        let n = state.patch_count();
        let width = state.embeddings.cols();
        if self.weight_width == 0 {
            self.weight_width = width;
            self.weight_sum = vec![0.0; n * width];
            self.weight_count = vec![0; n];
        }
        for i in 0..n {
            let row = state.patch_row(i);
            let denom: f64 = row.iter().map(|&v| v as f64).sum();
            if denom.abs() < 1e-8 {
                continue;
            }
            self.weight_count[i] += 1;
            let dst = &mut self.weight_sum[i * width..(i + 1) * width];
            for (d, &v) in dst.iter_mut().zip(row.iter()) {
                *d += v as f64 / denom;
            }
        }
    }
}

impl LayerHook for RefocusHook<'_> {
    fn modulate_attention(
        &mut self,
        ctx: &AttentionCtx<'_>,
        attention: &mut [DenseMatrix],
    ) -> Result<()> {
        self.current_dis.clear();
        if self.trace.is_some() {
            self.accumulate_weights(ctx.state);
        }
        if !self.config.layer_in_redistribution_range(ctx.layer) {
            return Ok(());
        }
        let patches = ctx.state.patch_count();
        let omega = cumulative_column_mass(ctx.stack, patches)?;
        let profile = localize_distractors(ctx.state, self.config, &omega);
        let mut trace = LayerTrace {
            layer: ctx.layer,
            phi: profile.phi.clone(),
            omega: profile.omega.clone(),
            distraction: profile.distraction.clone(),
            defocused: Vec::new(),
            fiedler: None,
            orientation_flipped: false,
            median_fallback: false,
        };
        if !profile.distraction.is_empty() {
            let sim = similarity_matrix(ctx.stack, self.similarity, patches)?;
            let graph = build_graph(&sim, self.similarity)?;
            let pair = fiedler(&graph)?;
            let partition = select_defocused(
                &pair.vector,
                self.threshold_rule,
                &profile.distraction,
                &omega,
            )?;
            if self.apply && !partition.defocused.is_empty() {
                // Patch index i lives in attention column i + 1.
                let dis_cols: Vec<usize> =
                    profile.distraction.iter().map(|&i| i + 1).collect();
                let def_cols: Vec<usize> =
                    partition.defocused.iter().map(|&i| i + 1).collect();
                redistribute_attention_heads(attention, &dis_cols, &def_cols, self.config.beta)?;
            }
            trace.defocused = partition.defocused;
            trace.fiedler = Some(pair.vector);
            trace.orientation_flipped = partition.flipped;
            trace.median_fallback = partition.used_median_fallback;
            if self.apply {
                self.current_dis = profile.distraction;
            }
        }
        if let Some(t) = &mut self.trace {
            t.push(trace);
        }
        Ok(())
    }

    fn after_layer(&mut self, _layer: usize, state: &mut TokenState) -> Result<()> {
        if self.current_dis.is_empty() {
            return Ok(());
        }
        redistribute_embeddings(
            state,
            &self.current_dis,
            &self.config.distraction_dims,
            self.config.receptive_field,
        )?;
        self.current_dis.clear();
        Ok(())
    }
}

/// Suppression-ablation hook. Embedding strategies rewrite the layer input
/// before projections are computed; the mask strategy zeroes attention
/// columns after the softmax. Identification is causal: the column-mass
/// floor (when configured) sees layers before the current one.
pub struct SuppressionHook<'a> {
    config: &'a ModelConfig,
    strategy: SuppressionStrategy,
    current_dis: Vec<usize>,
}

impl<'a> SuppressionHook<'a> {
    pub fn new(config: &'a ModelConfig, strategy: SuppressionStrategy) -> Self {
        SuppressionHook {
            config,
            strategy,
            current_dis: Vec::new(),
        }
    }
}

impl LayerHook for SuppressionHook<'_> {
    fn before_layer(
        &mut self,
        layer: usize,
        state: &mut TokenState,
        stack: &AttentionStack,
    ) -> Result<()> {
        self.current_dis.clear();
        if !self.config.layer_in_redistribution_range(layer) {
            return Ok(());
        }
        let omega = cumulative_column_mass(stack, state.patch_count())?;
        let profile = localize_distractors(state, self.config, &omega);
        if profile.distraction.is_empty() {
            return Ok(());
        }
        apply_suppression(state, &profile.distraction, self.strategy, self.config)?;
        self.current_dis = profile.distraction;
        Ok(())
    }

    fn modulate_attention(
        &mut self,
        _ctx: &AttentionCtx<'_>,
        attention: &mut [DenseMatrix],
    ) -> Result<()> {
        if self.strategy != SuppressionStrategy::NegInfMask || self.current_dis.is_empty() {
            return Ok(());
        }
        let cols: Vec<usize> = self.current_dis.iter().map(|&i| i + 1).collect();
        for head in attention {
            mask_attention_columns(head, &cols)?;
        }
        Ok(())
    }
}
