//! Sliding-window segmentation of one image.

use rayon::prelude::*;

use crate::error::Result;
use crate::head::{classify_patches, upsample_logits};
use crate::model_io::{CheckpointStore, ClassEmbeddingSet, SegmentationMap};
use crate::numerics::{bilinear_resize_plane, ImageTensor};

use super::infer::{resize_short_side, window_features};
use super::run_config::RunConfig;
use super::window::{window_origins, LogitCanvas};

#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub map: SegmentationMap,
    /// Dimensions after the short-side resize (and padding when applied).
    pub resized: (usize, usize),
    pub windows: usize,
    /// True when the resized image was smaller than one window and had to be
    /// reflect-padded.
    pub padded: bool,
    pub zero_norm_patches: usize,
}

/// Resize, slide the window grid, accumulate per-pixel class logits with
/// overlap averaging, argmax after upsampling back to the original
/// resolution.
pub fn segment_image(
    img: &ImageTensor,
    ckpt: &CheckpointStore,
    classes: &ClassEmbeddingSet,
    run: &RunConfig,
) -> Result<SegmentOutcome> {
    run.validate()?;
    let (orig_h, orig_w) = (img.height, img.width);
    let resized = resize_short_side(img, run.short_side)?;
    let padded_img = resized.reflect_pad_to(run.window, run.window);
    let padded = padded_img.height != resized.height || padded_img.width != resized.width;
    let normalized = padded_img.normalize(&run.model.channel_mean, &run.model.channel_std)?;

    let ys = window_origins(normalized.height, run.window, run.stride);
    let xs = window_origins(normalized.width, run.window, run.stride);
    let origins: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .collect();

    // Windows run in parallel; the canvas accumulates in fixed order below,
    // so the result does not depend on the worker count.
    let window_results: Vec<Result<(crate::head::ScorePlanes, usize)>> = origins
        .par_iter()
        .map(|&(y, x)| {
            let crop = normalized.crop(y, x, run.window, run.window);
            let out = window_features(ckpt, run, &crop, false)?;
            let patches = out.features.sub_rows(1, run.model.patch_count());
            let logits = classify_patches(&patches, run.model.grid_side(), classes)?;
            let planes = upsample_logits(&logits, run.window, run.window)?;
            Ok((planes, logits.zero_norm_patches))
        })
        .collect();

    let mut canvas = LogitCanvas::new(normalized.height, normalized.width, classes.len());
    let mut zero_norm = 0usize;
    for (result, &(y, x)) in window_results.into_iter().zip(origins.iter()) {
        let (planes, zn) = result?;
        zero_norm += zn;
        canvas.add_window(y, x, &planes)?;
    }
    let merged = canvas.into_average()?;

    // Per-class upsampling to the original resolution with a running argmax;
    // ties go to the lowest class index.
    let mut best_score = vec![f32::NEG_INFINITY; orig_h * orig_w];
    let mut best_label = vec![0u32; orig_h * orig_w];
    for c in 0..classes.len() {
        let full = bilinear_resize_plane(
            merged.plane(c),
            merged.height,
            merged.width,
            orig_h,
            orig_w,
        )?;
        for (i, &score) in full.iter().enumerate() {
            if score > best_score[i] {
                best_score[i] = score;
                best_label[i] = c as u32;
            }
        }
    }

    Ok(SegmentOutcome {
        map: SegmentationMap {
            height: orig_h,
            width: orig_w,
            labels: best_label,
            classes: classes.names.clone(),
        },
        resized: (normalized.height, normalized.width),
        windows: origins.len(),
        padded,
        zero_norm_patches: zero_norm,
    })
}
