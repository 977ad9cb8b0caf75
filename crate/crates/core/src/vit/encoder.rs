//! Forward pass of the visual tower over one window, with the per-layer
//! modulation hook and the last-layer rule (attention output only; the final
//! residual connection and MLP are skipped because they blur dense features).

use crate::error::{Error, Result};
use crate::model_io::{CheckpointStore, ModelConfig};
use crate::numerics::{layernorm_rows, softmax_rows, DenseMatrix, ImageTensor};

use super::hooks::{AttentionCtx, LayerHook};
use super::state::{AttentionStack, TokenState};

const ROW_SUM_TOL: f64 = 1e-5;

/// Tower output up to (and including) the final layer's attention
/// bookkeeping; dense features are produced by [`Tower::final_layer`] with a
/// caller-chosen proxy attention.
pub struct TowerRun {
    /// State entering the final layer (the hook's `before_layer` already
    /// applied).
    pub pre_final: TokenState,
    pub stack: AttentionStack,
}

pub struct Tower<'a> {
    ckpt: &'a CheckpointStore,
    config: &'a ModelConfig,
    check_contracts: bool,
}

impl<'a> Tower<'a> {
    pub fn new(ckpt: &'a CheckpointStore, config: &'a ModelConfig) -> Result<Self> {
        ckpt.validate_against(config)?;
        Ok(Tower {
            ckpt,
            config,
            check_contracts: cfg!(debug_assertions),
        })
    }

    /// Enable or disable the row-stochasticity checks on hook-modified
    /// attention (on by default in debug builds).
    pub fn with_contract_checks(mut self, on: bool) -> Self {
        self.check_contracts = on;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Unfold the window into patch tokens, project, prepend the global
    /// token, add positional embeddings, and apply the pre-tower norm if the
    /// checkpoint has one.
    pub fn embed_patches(&self, window: &ImageTensor) -> Result<TokenState> {
        let side = self.config.image_size;
        if window.height != side || window.width != side || window.channels != 3 {
            return Err(Error::Shape(format!(
                "window is {}x{}x{}, tower expects {side}x{side}x3",
                window.height, window.width, window.channels
            )));
        }
        let p = self.config.patch_size;
        let g = self.config.grid_side();
        let d = self.config.width;
        let patch_len = 3 * p * p;

        // (channel, ky, kx) inner order matches the stored kernel layout.
        let mut patches = DenseMatrix::zeros(g * g, patch_len);
        for gy in 0..g {
            for gx in 0..g {
                let row = patches.row_mut(gy * g + gx);
                for c in 0..3 {
                    for ky in 0..p {
                        for kx in 0..p {
                            row[c * p * p + ky * p + kx] =
                                window.get(gy * p + ky, gx * p + kx, c);
                        }
                    }
                }
            }
        }
        let projected = patches.linear(&self.ckpt.patch_kernel, self.ckpt.patch_bias.as_deref())?;

        let mut tokens = DenseMatrix::zeros(g * g + 1, d);
        for (t, &v) in tokens
            .row_mut(0)
            .iter_mut()
            .zip(self.ckpt.class_embedding.iter())
        {
            *t = v;
        }
        for i in 0..g * g {
            tokens.row_mut(i + 1).copy_from_slice(projected.row(i));
        }
        tokens.add_assign(&self.ckpt.positional)?;
        if let Some(ln) = &self.ckpt.ln_pre {
            tokens = layernorm_rows(&tokens, &ln.gain, &ln.bias, self.config.ln_eps);
        }
        let state = TokenState::new(0, g, tokens)?;
        state.embeddings.assert_finite("patch embedding")?;
        Ok(state)
    }

    /// One full residual layer (1-based index): per-head attention, hook
    /// modulation, attention output with residual, MLP with residual, then
    /// the hook's post-layer embedding rewrite.
    pub fn attention_layer(
        &self,
        state: TokenState,
        layer: usize,
        hook: &mut dyn LayerHook,
        stack: &mut AttentionStack,
    ) -> Result<TokenState> {
        let mut state = state;
        hook.before_layer(layer, &mut state, stack)?;
        let (q_heads, k_heads, v_heads) = self.project_heads(&state, layer)?;
        let mut attn = self.attention_kinds(layer, &q_heads, &k_heads, stack)?;

        {
            let ctx = AttentionCtx {
                layer,
                total_layers: self.config.layers,
                state: &state,
                queries: &q_heads,
                keys: &k_heads,
                values: &v_heads,
                stack,
            };
            hook.modulate_attention(&ctx, &mut attn)?;
        }
        self.check_hook_output(layer, &attn)?;
        stack.record_qk_post(DenseMatrix::mean_of(&attn)?);

        let lw = &self.ckpt.layers[layer - 1];
        let tokens = state.embeddings.rows();
        let dh = self.config.head_dim();
        let mut concat = DenseMatrix::zeros(tokens, self.config.width);
        for (h, (a, v)) in attn.iter().zip(v_heads.iter()).enumerate() {
            let out = a.matmul(v)?;
            for t in 0..tokens {
                concat.row_mut(t)[h * dh..(h + 1) * dh].copy_from_slice(out.row(t));
            }
        }
        let attn_out = concat.linear(&lw.w_out, Some(&lw.b_out))?;
        state.embeddings.add_assign(&attn_out)?;

        let y = layernorm_rows(&state.embeddings, &lw.ln2.gain, &lw.ln2.bias, self.config.ln_eps);
        let mut hidden = y.linear(&lw.w_fc, Some(&lw.b_fc))?;
        self.config.activation.apply_inplace(&mut hidden);
        let mlp = hidden.linear(&lw.w_mlp_out, Some(&lw.b_mlp_out))?;
        state.embeddings.add_assign(&mlp)?;

        state.layer = layer;
        hook.after_layer(layer, &mut state)?;
        if self.check_contracts {
            state
                .embeddings
                .assert_finite(&format!("layer {layer} output"))?;
        }
        Ok(state)
    }

    /// Run layers `1..L-1` normally, then perform the final layer's
    /// attention bookkeeping (its key-key map completes the stack; its
    /// query-key map is recorded and modulated for diagnostics even though
    /// the dense head replaces it).
    pub fn run(&self, window: &ImageTensor, hook: &mut dyn LayerHook) -> Result<TowerRun> {
        let mut stack = AttentionStack::new(self.config.token_count(), self.config.heads);
        let mut state = self.embed_patches(window)?;
        let last = self.config.layers;
        for layer in 1..last {
            state = self.attention_layer(state, layer, hook, &mut stack)?;
        }
        hook.before_layer(last, &mut state, &stack)?;
        let (q_heads, k_heads, v_heads) = self.project_heads(&state, last)?;
        let mut attn = self.attention_kinds(last, &q_heads, &k_heads, &mut stack)?;
        {
            let ctx = AttentionCtx {
                layer: last,
                total_layers: last,
                state: &state,
                queries: &q_heads,
                keys: &k_heads,
                values: &v_heads,
                stack: &stack,
            };
            hook.modulate_attention(&ctx, &mut attn)?;
        }
        self.check_hook_output(last, &attn)?;
        stack.record_qk_post(DenseMatrix::mean_of(&attn)?);
        Ok(TowerRun {
            pre_final: state,
            stack,
        })
    }

    /// Last-layer rule: `f_L = Attn . V_L`, output projection, final norm,
    /// visual projection. No residual connection, no MLP. The supplied
    /// attention must be row-stochastic (the head-averaged proxy).
    pub fn final_layer(&self, state: &TokenState, attention: &DenseMatrix) -> Result<DenseMatrix> {
        let tokens = state.embeddings.rows();
        if attention.rows() != tokens || attention.cols() != tokens {
            return Err(Error::Shape(format!(
                "final attention is {}x{}, tower has {tokens} tokens",
                attention.rows(),
                attention.cols()
            )));
        }
        let dev = attention.max_row_sum_deviation();
        if dev > ROW_SUM_TOL {
            return Err(Error::Contract(format!(
                "final attention rows deviate from 1 by {dev:.3e}"
            )));
        }
        let lw = self
            .ckpt
            .layers
            .last()
            .ok_or_else(|| Error::Contract("tower has no layers".into()))?;
        let x = layernorm_rows(&state.embeddings, &lw.ln1.gain, &lw.ln1.bias, self.config.ln_eps);
        let v = x.linear(&lw.w_v, Some(&lw.b_v))?;
        let ctx = attention.matmul(&v)?;
        let out = ctx.linear(&lw.w_out, Some(&lw.b_out))?;
        let normed = layernorm_rows(
            &out,
            &self.ckpt.ln_post.gain,
            &self.ckpt.ln_post.bias,
            self.config.ln_eps,
        );
        let feats = normed.matmul(&self.ckpt.proj)?;
        feats.assert_finite("dense features")?;
        Ok(feats)
    }

    /// Unmodified tower: run every layer with residual and MLP, then the
    /// final norm and visual projection on all tokens.
    pub fn run_vanilla(&self, window: &ImageTensor, hook: &mut dyn LayerHook) -> Result<(DenseMatrix, AttentionStack)> {
        let mut stack = AttentionStack::new(self.config.token_count(), self.config.heads);
        let mut state = self.embed_patches(window)?;
        for layer in 1..=self.config.layers {
            state = self.attention_layer(state, layer, hook, &mut stack)?;
        }
        let normed = layernorm_rows(
            &state.embeddings,
            &self.ckpt.ln_post.gain,
            &self.ckpt.ln_post.bias,
            self.config.ln_eps,
        );
        let feats = normed.matmul(&self.ckpt.proj)?;
        feats.assert_finite("dense features")?;
        Ok((feats, stack))
    }

    fn project_heads(
        &self,
        state: &TokenState,
        layer: usize,
    ) -> Result<(Vec<DenseMatrix>, Vec<DenseMatrix>, Vec<DenseMatrix>)> {
        let lw = &self.ckpt.layers[layer - 1];
        let x = layernorm_rows(&state.embeddings, &lw.ln1.gain, &lw.ln1.bias, self.config.ln_eps);
        let q = x.linear(&lw.w_q, Some(&lw.b_q))?;
        let k = x.linear(&lw.w_k, Some(&lw.b_k))?;
        let v = x.linear(&lw.w_v, Some(&lw.b_v))?;
        Ok((
            split_heads(&q, self.config.heads),
            split_heads(&k, self.config.heads),
            split_heads(&v, self.config.heads),
        ))
    }

    /// Per-head query-key, query-query and key-key softmax maps; the
    /// head-averaged versions are pushed onto the stack, and the per-head
    /// query-key maps are returned for modulation.
    fn attention_kinds(
        &self,
        _layer: usize,
        q_heads: &[DenseMatrix],
        k_heads: &[DenseMatrix],
        stack: &mut AttentionStack,
    ) -> Result<Vec<DenseMatrix>> {
        let scale = self.config.attention_scale();
        let mut qk = Vec::with_capacity(q_heads.len());
        let mut qq = Vec::with_capacity(q_heads.len());
        let mut kk = Vec::with_capacity(q_heads.len());
        for (qh, kh) in q_heads.iter().zip(k_heads.iter()) {
            qk.push(softmax_rows(&qh.matmul_transb(kh)?, scale));
            qq.push(softmax_rows(&qh.matmul_transb(qh)?, scale));
            kk.push(softmax_rows(&kh.matmul_transb(kh)?, scale));
        }
        stack.push_layer(
            DenseMatrix::mean_of(&qk)?,
            DenseMatrix::mean_of(&qq)?,
            DenseMatrix::mean_of(&kk)?,
        )?;
        Ok(qk)
    }

    fn check_hook_output(&self, layer: usize, attn: &[DenseMatrix]) -> Result<()> {
        if !self.check_contracts {
            return Ok(());
        }
        for (h, a) in attn.iter().enumerate() {
            let dev = a.max_row_sum_deviation();
            if dev > ROW_SUM_TOL {
                return Err(Error::Contract(format!(
                    "hook broke row-stochasticity at layer {layer} head {h} \
                     (deviation {dev:.3e})"
                )));
            }
            a.assert_finite(&format!("layer {layer} head {h} attention"))?;
        }
        Ok(())
    }
}

fn split_heads(m: &DenseMatrix, heads: usize) -> Vec<DenseMatrix> {
    let dh = m.cols() / heads;
    (0..heads)
        .map(|h| {
            let mut out = DenseMatrix::zeros(m.rows(), dh);
            for t in 0..m.rows() {
                out.row_mut(t).copy_from_slice(&m.row(t)[h * dh..(h + 1) * dh]);
            }
            out
        })
        .collect()
}
