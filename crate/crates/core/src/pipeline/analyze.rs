//! Diagnostic exports for one image: per-layer query-attention heatmaps,
//! distraction masks, the per-dimension mean embedding-weight histogram, and
//! the per-token (attention mass, max embedding weight) scatter.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model_io::{save_pnm, CheckpointStore};
use crate::numerics::ImageTensor;

use super::infer::{resize_short_side, window_features};
use super::run_config::RunConfig;

#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub files: Vec<PathBuf>,
    pub layers: usize,
    pub grid: usize,
    /// Patch index the heatmaps follow; the global token when absent.
    pub query: Option<usize>,
    /// Layers on which at least one distraction token fired.
    pub layers_with_distraction: usize,
}

/// Analyze a single centered window of the image: resize so the short side
/// equals the window, center-crop, run the tower in the configured mode with
/// tracing, and write the diagnostic bundle into `out_dir`.
pub fn analyze(
    img: &ImageTensor,
    ckpt: &CheckpointStore,
    run: &RunConfig,
    query: Option<usize>,
    out_dir: &Path,
) -> Result<AnalyzeOutcome> {
    run.validate()?;
    let g = run.model.grid_side();
    let n = run.model.patch_count();
    if let Some(q) = query {
        if q >= n {
            return Err(Error::Parameter(format!(
                "query patch {q} outside the {n}-token grid"
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let resized = resize_short_side(img, run.window)?;
    let y0 = (resized.height - run.window) / 2;
    let x0 = (resized.width - run.window) / 2;
    let crop = resized.crop(y0, x0, run.window, run.window);
    let window = crop.normalize(&run.model.channel_mean, &run.model.channel_std)?;

    let out = window_features(ckpt, run, &window, true)?;
    let mut files = Vec::new();

    // Per-layer heatmaps of the as-applied query-key attention row.
    let query_row = query.map_or(0, |q| q + 1);
    for (idx, attn) in out.stack.qk_post().iter().enumerate() {
        let layer = idx + 1;
        let row = attn.row(query_row);
        let plane: Vec<f32> = (0..n).map(|i| row[i + 1]).collect();
        let pgm = out_dir.join(format!("attn_layer_{layer:02}.pgm"));
        save_heatmap_pgm(&pgm, &plane, g)?;
        files.push(pgm);
        let csv = out_dir.join(format!("attn_layer_{layer:02}.csv"));
        write_plane_csv(&csv, &plane, g)?;
        files.push(csv);
    }

    // Distraction masks per traced layer.
    let trace = out.trace.as_deref().unwrap_or(&[]);
    let mut layers_with_distraction = 0usize;
    for t in trace {
        if !t.distraction.is_empty() {
            layers_with_distraction += 1;
        }
        let mut mask = vec![0.0f32; n];
        for &i in &t.distraction {
            mask[i] = 1.0;
        }
        let path = out_dir.join(format!("distraction_layer_{:02}.pgm", t.layer));
        save_heatmap_pgm(&path, &mask, g)?;
        files.push(path);
    }

    // Mean relative embedding weights: per-dimension means over tokens, and
    // the per-token scatter against cumulative attention column mass.
    if let Some((weights, width)) = &out.mean_weights {
        let width = *width;
        let mut per_dim = vec![0.0f64; width];
        let mut valid_tokens = 0usize;
        for i in 0..n {
            let row = &weights[i * width..(i + 1) * width];
            if row[0].is_nan() {
                continue;
            }
            valid_tokens += 1;
            for (acc, &v) in per_dim.iter_mut().zip(row.iter()) {
                *acc += v;
            }
        }
        if valid_tokens > 0 {
            for v in per_dim.iter_mut() {
                *v /= valid_tokens as f64;
            }
        }
        let hist = out_dir.join("embedding_weights.csv");
        let mut text = String::from("dim,mean_weight\n");
        for (j, v) in per_dim.iter().enumerate() {
            text.push_str(&format!("{j},{v}\n"));
        }
        fs::write(&hist, text).map_err(|e| Error::io(&hist, e))?;
        files.push(hist);

        // Scatter: omega from the full-run averaged attention, phi from the
        // layer-averaged relative weights, flag from the identification rule.
        let omega = crate::refocus::patch_column_mass(&out.stack.qk_cumulative_avg()?);
        let scatter = out_dir.join("token_scatter.csv");
        let mut text = String::from("index,omega,phi,is_distraction\n");
        for i in 0..n {
            let row = &weights[i * width..(i + 1) * width];
            let phi = if row[0].is_nan() {
                f64::NAN
            } else {
                let as_f32: Vec<f32> = row.iter().map(|&v| v as f32).collect();
                max_relative_weight_from_mean(&as_f32, &run.model.distraction_dims)
            };
            let mut hit = phi.is_finite() && phi > run.model.tau;
            if let Some(floor) = run.model.attn_weight_floor {
                hit = hit && omega[i] > floor;
            }
            text.push_str(&format!("{i},{},{phi},{}\n", omega[i], hit as u8));
        }
        fs::write(&scatter, text).map_err(|e| Error::io(&scatter, e))?;
        files.push(scatter);
    }

    // The analyzed window itself, for visual reference.
    let window_path = out_dir.join("window.ppm");
    save_pnm(&window_path, &crop)?;
    files.push(window_path);

    Ok(AnalyzeOutcome {
        files,
        layers: out.stack.layers_seen(),
        grid: g,
        query,
        layers_with_distraction,
    })
}

/// The mean-weight rows are already ratios; the maximum over the distraction
/// dimensions is the scatter ordinate.
fn max_relative_weight_from_mean(mean_row: &[f32], dims: &[usize]) -> f64 {
    if dims.is_empty() {
        return f64::NAN;
    }
    dims.iter()
        .map(|&j| mean_row[j] as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn save_heatmap_pgm(path: &Path, plane: &[f32], grid: usize) -> Result<()> {
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in plane {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = ImageTensor {
        height: grid,
        width: grid,
        channels: 1,
        data: plane.iter().map(|&v| (v - lo) / span).collect(),
    };
    save_pnm(path, &img)
}

fn write_plane_csv(path: &Path, plane: &[f32], grid: usize) -> Result<()> {
    let mut text = String::new();
    for y in 0..grid {
        let row: Vec<String> = (0..grid)
            .map(|x| format!("{}", plane[y * grid + x]))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
