//! Per-window inference shared by segmentation, evaluation and analysis.

use crate::error::Result;
use crate::head::proxy_attention;
use crate::model_io::CheckpointStore;
use crate::numerics::{DenseMatrix, ImageTensor};
use crate::refocus::{LayerTrace, RefocusHook, SuppressionHook};
use crate::vit::{AttentionStack, IdentityHook, Tower};

use super::run_config::{Mode, RunConfig};

pub struct WindowOutput {
    /// Projected dense features, `(tokens, proj_dim)`.
    pub features: DenseMatrix,
    pub stack: AttentionStack,
    pub trace: Option<Vec<LayerTrace>>,
    /// Token-major mean relative embedding weights (tracing runs only).
    pub mean_weights: Option<(Vec<f64>, usize)>,
}

/// Run one normalized window through the tower under the configured mode.
/// `traced` additionally records per-layer localization diagnostics (for the
/// non-refocus modes an observe-only locator rides along).
pub fn window_features(
    ckpt: &CheckpointStore,
    run: &RunConfig,
    window: &ImageTensor,
    traced: bool,
) -> Result<WindowOutput> {
    let tower = Tower::new(ckpt, &run.model)?;
    let layers = run.model.layers;
    match &run.mode {
        Mode::Refocus => {
            let mut hook = RefocusHook::new(&run.model, run.similarity_source, run.threshold_rule);
            if traced {
                hook = hook.with_trace();
            }
            let out = tower.run(window, &mut hook)?;
            let attn = proxy_attention(&out.stack, run.proxy_attention, layers)?;
            let features = tower.final_layer(&out.pre_final, &attn)?;
            Ok(WindowOutput {
                features,
                stack: out.stack,
                mean_weights: hook.mean_relative_weights(),
                trace: hook.trace.take(),
            })
        }
        Mode::KkProxyBaseline => {
            if traced {
                // Observe with the locator without touching the tower.
                let mut hook =
                    RefocusHook::observer(&run.model, run.similarity_source, run.threshold_rule)
                        .with_trace();
                let out = tower.run(window, &mut hook)?;
                let attn = proxy_attention(&out.stack, run.proxy_attention, layers)?;
                let features = tower.final_layer(&out.pre_final, &attn)?;
                Ok(WindowOutput {
                    features,
                    stack: out.stack,
                    mean_weights: hook.mean_relative_weights(),
                    trace: hook.trace.take(),
                })
            } else {
                let out = tower.run(window, &mut IdentityHook)?;
                let attn = proxy_attention(&out.stack, run.proxy_attention, layers)?;
                let features = tower.final_layer(&out.pre_final, &attn)?;
                Ok(WindowOutput {
                    features,
                    stack: out.stack,
                    trace: None,
                    mean_weights: None,
                })
            }
        }
        Mode::PlainClip => {
            let (features, stack) = tower.run_vanilla(window, &mut IdentityHook)?;
            Ok(WindowOutput {
                features,
                stack,
                trace: None,
                mean_weights: None,
            })
        }
        Mode::Suppression(strategy) => {
            let mut hook = SuppressionHook::new(&run.model, *strategy);
            let out = tower.run(window, &mut hook)?;
            let attn = proxy_attention(&out.stack, run.proxy_attention, layers)?;
            let features = tower.final_layer(&out.pre_final, &attn)?;
            Ok(WindowOutput {
                features,
                stack: out.stack,
                trace: None,
                mean_weights: None,
            })
        }
    }
}

/// Resize so the short side is exactly `short_side`, preserving aspect.
pub fn resize_short_side(
    img: &ImageTensor,
    short_side: usize,
) -> Result<ImageTensor> {
    let (h, w) = (img.height, img.width);
    let (th, tw) = if h <= w {
        let tw = ((w as f64 * short_side as f64 / h as f64).round() as usize).max(short_side);
        (short_side, tw)
    } else {
        let th = ((h as f64 * short_side as f64 / w as f64).round() as usize).max(short_side);
        (th, short_side)
    };
    crate::numerics::bilinear_resize(img, th, tw)
}
