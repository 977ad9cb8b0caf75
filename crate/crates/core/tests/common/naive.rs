//! Independent reference forward pass: explicit triple-loop math in f64,
//! no shared kernels with the production path. This is the correctness
//! anchor the tower is compared against.

use refocus_core::model_io::{CheckpointStore, ModelConfig, NormParams};
use refocus_core::numerics::{Activation, DenseMatrix, ImageTensor};

pub struct NaiveOutput {
    /// Residual-stream state entering the final layer, (tokens, width).
    pub pre_final: Vec<Vec<f64>>,
    /// Dense features under the layer-averaged key-key proxy,
    /// (tokens, proj_dim).
    pub features: Vec<Vec<f64>>,
    /// Head- and layer-averaged key-key attention.
    pub kk_avg: Vec<Vec<f64>>,
}

fn layernorm(x: &[f64], p: &NormParams, eps: f64) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - mean) * inv * p.gain[j] as f64 + p.bias[j] as f64)
        .collect()
}

/// Torch-layout linear: weight (out, in), y = x W^T + b.
fn linear(x: &[Vec<f64>], w: &DenseMatrix, b: &[f32]) -> Vec<Vec<f64>> {
    let out_dim = w.rows();
    let in_dim = w.cols();
    x.iter()
        .map(|row| {
            (0..out_dim)
                .map(|o| {
                    let mut acc = b[o] as f64;
                    for i in 0..in_dim {
                        acc += row[i] * w.get(o, i) as f64;
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn softmax(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn activation(v: f64, act: Activation) -> f64 {
    match act {
        Activation::QuickGelu => v / (1.0 + (-1.702 * v).exp()),
        Activation::GeluTanh => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh())
        }
    }
}

/// Full reference forward with a configurable attention scale, so tests can
/// prove the production scale convention (per-head width) is the one that
/// matches.
pub fn forward(
    window: &ImageTensor,
    ckpt: &CheckpointStore,
    cfg: &ModelConfig,
    scale_override: Option<f64>,
) -> NaiveOutput {
    let d = cfg.width;
    let p = cfg.patch_size;
    let g = cfg.image_size / p;
    let n = g * g;
    let tokens = n + 1;
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = scale_override.unwrap_or(1.0 / (dh as f64).sqrt());

    // Patch embedding: unfold in (channel, ky, kx) order, dot against each
    // kernel row.
    let mut state: Vec<Vec<f64>> = vec![vec![0.0; d]; tokens];
    for (j, v) in state[0].iter_mut().enumerate() {
        *v = ckpt.class_embedding[j] as f64;
    }
    for gy in 0..g {
        for gx in 0..g {
            let t = gy * g + gx + 1;
            for o in 0..d {
                let mut acc = ckpt.patch_bias.as_ref().map_or(0.0, |b| b[o] as f64);
                for c in 0..3 {
                    for ky in 0..p {
                        for kx in 0..p {
                            let pix = window.get(gy * p + ky, gx * p + kx, c) as f64;
                            let w = ckpt.patch_kernel.get(o, c * p * p + ky * p + kx) as f64;
                            acc += pix * w;
                        }
                    }
                }
                state[t][o] = acc;
            }
        }
    }
    for (t, row) in state.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += ckpt.positional.get(t, j) as f64;
        }
    }
    if let Some(ln) = &ckpt.ln_pre {
        state = state.iter().map(|r| layernorm(r, ln, cfg.ln_eps)).collect();
    }

    let mut kk_sum = vec![vec![0.0f64; tokens]; tokens];

    // Layers 1..L-1 in full; the last layer contributes only its key-key
    // attention and values.
    for layer in 0..cfg.layers {
        let lw = &ckpt.layers[layer];
        let x: Vec<Vec<f64>> = state.iter().map(|r| layernorm(r, &lw.ln1, cfg.ln_eps)).collect();
        let q = linear(&x, &lw.w_q, &lw.b_q);
        let k = linear(&x, &lw.w_k, &lw.b_k);
        let v = linear(&x, &lw.w_v, &lw.b_v);

        // Key-key attention, head-averaged, added to the running sum.
        for h in 0..heads {
            let base = h * dh;
            for t in 0..tokens {
                let mut row = vec![0.0f64; tokens];
                for (s, item) in row.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for dd in 0..dh {
                        dot += k[t][base + dd] * k[s][base + dd];
                    }
                    *item = dot * scale;
                }
                softmax(&mut row);
                for (s, val) in row.iter().enumerate() {
                    kk_sum[t][s] += val / heads as f64;
                }
            }
        }

        if layer == cfg.layers - 1 {
            break; // last layer: no residual, no MLP
        }

        // Per-head query-key attention applied to values.
        let mut concat = vec![vec![0.0f64; d]; tokens];
        for h in 0..heads {
            let base = h * dh;
            for t in 0..tokens {
                let mut row = vec![0.0f64; tokens];
                for (s, item) in row.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for dd in 0..dh {
                        dot += q[t][base + dd] * k[s][base + dd];
                    }
                    *item = dot * scale;
                }
                softmax(&mut row);
                for dd in 0..dh {
                    let mut acc = 0.0;
                    for (s, val) in row.iter().enumerate() {
                        acc += val * v[s][base + dd];
                    }
                    concat[t][base + dd] = acc;
                }
            }
        }
        let attn_out = linear(&concat, &lw.w_out, &lw.b_out);
        for t in 0..tokens {
            for j in 0..d {
                state[t][j] += attn_out[t][j];
            }
        }
        let y: Vec<Vec<f64>> = state.iter().map(|r| layernorm(r, &lw.ln2, cfg.ln_eps)).collect();
        let mut hidden = linear(&y, &lw.w_fc, &lw.b_fc);
        for row in hidden.iter_mut() {
            for val in row.iter_mut() {
                *val = activation(*val, cfg.activation);
            }
        }
        let mlp = linear(&hidden, &lw.w_mlp_out, &lw.b_mlp_out);
        for t in 0..tokens {
            for j in 0..d {
                state[t][j] += mlp[t][j];
            }
        }
    }

    let kk_avg: Vec<Vec<f64>> = kk_sum
        .iter()
        .map(|row| row.iter().map(|v| v / cfg.layers as f64).collect())
        .collect();

    // Final layer: attention output only, with the proxy attention.
    let lw = ckpt.layers.last().unwrap();
    let x: Vec<Vec<f64>> = state.iter().map(|r| layernorm(r, &lw.ln1, cfg.ln_eps)).collect();
    let v = linear(&x, &lw.w_v, &lw.b_v);
    let mut ctx = vec![vec![0.0f64; d]; tokens];
    for t in 0..tokens {
        for j in 0..d {
            let mut acc = 0.0;
            for s in 0..tokens {
                acc += kk_avg[t][s] * v[s][j];
            }
            ctx[t][j] = acc;
        }
    }
    let out = linear(&ctx, &lw.w_out, &lw.b_out);
    let normed: Vec<Vec<f64>> = out
        .iter()
        .map(|r| layernorm(r, &ckpt.ln_post, cfg.ln_eps))
        .collect();
    let proj_dim = ckpt.proj.cols();
    let features: Vec<Vec<f64>> = normed
        .iter()
        .map(|row| {
            (0..proj_dim)
                .map(|o| {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += row[j] * ckpt.proj.get(j, o) as f64;
                    }
                    acc
                })
                .collect()
        })
        .collect();

    NaiveOutput {
        pre_final: state,
        features,
        kk_avg,
    }
}

pub fn max_abs_diff_rows(a: &DenseMatrix, b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in b.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            worst = worst.max((a.get(i, j) as f64 - v).abs());
        }
    }
    worst
}
