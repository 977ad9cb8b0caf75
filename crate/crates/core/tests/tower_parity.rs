//! Tower correctness against the independent triple-loop reference.

mod common;

use common::naive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refocus_core::head::proxy_attention;
use refocus_core::model_io::CheckpointStore;
use refocus_core::numerics::ImageTensor;
use refocus_core::pipeline::{fixture_run_config, write_fixture_checkpoint};
use refocus_core::vit::{IdentityHook, Tower};
use tempfile::tempdir;

fn random_window(side: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor {
        height: side,
        width: side,
        channels: 3,
        data: (0..side * side * 3)
            .map(|_| rng.random::<f32>() * 2.0 - 1.0)
            .collect(),
    }
}

#[test]
fn identity_hook_matches_naive_reference() {
    let dir = tempdir().unwrap();
    let ckpt_path = dir.path().join("tiny.safetensors");
    write_fixture_checkpoint(&ckpt_path, 7).unwrap();
    let run = fixture_run_config();
    let ckpt = CheckpointStore::load(&ckpt_path, &run.model).unwrap();
    let tower = Tower::new(&ckpt, &run.model).unwrap();

    for seed in [1u64, 2, 3] {
        let window = random_window(run.model.image_size, seed);
        let out = tower.run(&window, &mut IdentityHook).unwrap();
        let reference = naive::forward(&window, &ckpt, &run.model, None);

        let state_diff = naive::max_abs_diff_rows(&out.pre_final.embeddings, &reference.pre_final);
        assert!(
            state_diff < 1e-4,
            "pre-final state diff {state_diff} (seed {seed})"
        );

        let attn = proxy_attention(&out.stack, run.proxy_attention, run.model.layers).unwrap();
        let features = tower.final_layer(&out.pre_final, &attn).unwrap();
        let feat_diff = naive::max_abs_diff_rows(&features, &reference.features);
        assert!(
            feat_diff < 1e-4,
            "feature diff {feat_diff} (seed {seed})"
        );
    }
}

#[test]
fn layer_averaged_kk_matches_naive_reference() {
    let dir = tempdir().unwrap();
    let ckpt_path = dir.path().join("tiny.safetensors");
    write_fixture_checkpoint(&ckpt_path, 11).unwrap();
    let run = fixture_run_config();
    let ckpt = CheckpointStore::load(&ckpt_path, &run.model).unwrap();
    let tower = Tower::new(&ckpt, &run.model).unwrap();

    let window = random_window(run.model.image_size, 5);
    let out = tower.run(&window, &mut IdentityHook).unwrap();
    let reference = naive::forward(&window, &ckpt, &run.model, None);

    let kk = out.stack.kk_cumulative_avg().unwrap();
    let diff = naive::max_abs_diff_rows(&kk, &reference.kk_avg);
    assert!(diff < 1e-5, "kk average diff {diff}");
}

/// The attention logits must be scaled by the per-head width, not the full
/// embedding width; the reference run with the wrong scale disagrees far
/// beyond the parity tolerance.
#[test]
fn scale_convention_is_per_head_width() {
    let dir = tempdir().unwrap();
    let ckpt_path = dir.path().join("tiny.safetensors");
    write_fixture_checkpoint(&ckpt_path, 13).unwrap();
    let run = fixture_run_config();
    let ckpt = CheckpointStore::load(&ckpt_path, &run.model).unwrap();
    let tower = Tower::new(&ckpt, &run.model).unwrap();

    let window = random_window(run.model.image_size, 9);
    let out = tower.run(&window, &mut IdentityHook).unwrap();

    let full_width_scale = 1.0 / (run.model.width as f64).sqrt();
    let wrong = naive::forward(&window, &ckpt, &run.model, Some(full_width_scale));
    let right = naive::forward(&window, &ckpt, &run.model, None);

    let diff_right = naive::max_abs_diff_rows(&out.pre_final.embeddings, &right.pre_final);
    let diff_wrong = naive::max_abs_diff_rows(&out.pre_final.embeddings, &wrong.pre_final);
    assert!(diff_right < 1e-4, "per-head scale parity {diff_right}");
    assert!(
        diff_wrong > 100.0 * diff_right.max(1e-9),
        "full-width scale should visibly disagree: right {diff_right}, wrong {diff_wrong}"
    );
}

#[test]
fn patch_embedding_matches_unfold_project_oracle() {
    let dir = tempdir().unwrap();
    let ckpt_path = dir.path().join("tiny.safetensors");
    write_fixture_checkpoint(&ckpt_path, 23).unwrap();
    let run = fixture_run_config();
    let ckpt = CheckpointStore::load(&ckpt_path, &run.model).unwrap();
    let tower = Tower::new(&ckpt, &run.model).unwrap();

    let window = random_window(run.model.image_size, 31);
    let state = tower.embed_patches(&window).unwrap();
    assert_eq!(state.patch_count(), 9);

    let embedded = naive_embed(&window, &ckpt, &run.model);
    let diff = naive::max_abs_diff_rows(&state.embeddings, &embedded);
    assert!(diff < 1e-5, "embedding diff {diff}");
}

/// Standalone unfold-project oracle (duplicates the reference embedding
/// stage so it can be checked in isolation).
fn naive_embed(
    window: &ImageTensor,
    ckpt: &CheckpointStore,
    cfg: &refocus_core::model_io::ModelConfig,
) -> Vec<Vec<f64>> {
    let d = cfg.width;
    let p = cfg.patch_size;
    let g = cfg.image_size / p;
    let tokens = g * g + 1;
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
                            acc += window.get(gy * p + ky, gx * p + kx, c) as f64
                                * ckpt.patch_kernel.get(o, c * p * p + ky * p + kx) as f64;
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
        state = state
            .iter()
            .map(|r| {
                let dlen = r.len() as f64;
                let mean = r.iter().sum::<f64>() / dlen;
                let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dlen;
                let inv = 1.0 / (var + cfg.ln_eps).sqrt();
                r.iter()
                    .enumerate()
                    .map(|(j, v)| (v - mean) * inv * ln.gain[j] as f64 + ln.bias[j] as f64)
                    .collect()
            })
            .collect();
    }
    state
}
