//! mIoU evaluation over a dataset manifest.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_io::{load_image, load_label_map, CheckpointStore, ClassEmbeddingSet,
    DatasetManifest};

use super::run_config::RunConfig;
use super::segment::segment_image;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIoU {
    pub name: String,
    #[serde(flatten)]
    pub counts: ClassCounts,
    /// `tp / (tp + fp + fn)`; absent when the class never occurs at all.
    pub iou: Option<f64>,
    /// Present in the ground truth (and therefore part of the mean).
    pub present: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalTiming {
    pub total_seconds: f64,
    pub per_image_seconds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassIoU>,
    /// Mean IoU over classes present in the ground truth; absent for an
    /// empty evaluation.
    pub miou: Option<f64>,
    pub evaluated_classes: usize,
    pub images: usize,
    pub total_pixels: u64,
    pub ignored_pixels: u64,
    /// No class was present in the ground truth (e.g. everything ignored).
    pub empty: bool,
    /// Echo of the configuration that produced the numbers.
    pub config: RunConfig,
    pub timing: EvalTiming,
}

/// Accumulate one image's confusion counts. `ignore` pixels are skipped;
/// ground-truth values outside the class table are data errors.
pub fn accumulate_confusion(
    gt: &[u32],
    pred: &[u32],
    n_classes: usize,
    ignore: u32,
    counts: &mut [ClassCounts],
    ignored: &mut u64,
) -> Result<()> {
    if gt.len() != pred.len() || counts.len() != n_classes {
        return Err(Error::Shape("confusion buffers disagree".into()));
    }
    for (&g, &p) in gt.iter().zip(pred.iter()) {
        if g == ignore {
            *ignored += 1;
            continue;
        }
        let g = g as usize;
        let p = p as usize;
        if g >= n_classes {
            return Err(Error::Decode(format!(
                "label value {g} outside the class table of {n_classes}"
            )));
        }
        if g == p {
            counts[g].tp += 1;
        } else {
            counts[g].fn_ += 1;
            if p < n_classes {
                counts[p].fp += 1;
            }
        }
    }
    Ok(())
}

/// Build the per-class report and mIoU from summed counts.
pub fn report_from_confusion(
    class_names: &[String],
    counts: &[ClassCounts],
) -> (Vec<ClassIoU>, Option<f64>, usize) {
    let mut rows = Vec::with_capacity(class_names.len());
    let mut sum = 0.0f64;
    let mut present_count = 0usize;
    for (name, c) in class_names.iter().zip(counts.iter()) {
        let union = c.tp + c.fp + c.fn_;
        let iou = if union > 0 {
            Some(c.tp as f64 / union as f64)
        } else {
            None
        };
        let present = c.tp + c.fn_ > 0;
        if present {
            present_count += 1;
            sum += iou.unwrap_or(0.0);
        }
        rows.push(ClassIoU {
            name: name.clone(),
            counts: c.clone(),
            iou,
            present,
        });
    }
    let miou = if present_count > 0 {
        Some(sum / present_count as f64)
    } else {
        None
    };
    (rows, miou, present_count)
}

/// Segment every manifest item and report per-class IoU and mIoU. Images
/// run in parallel; integer confusion counts make the accumulation
/// order-independent, so the report is invariant to manifest ordering
/// (timing aside).
pub fn evaluate(
    manifest: &DatasetManifest,
    ckpt: &CheckpointStore,
    classes: &ClassEmbeddingSet,
    run: &RunConfig,
) -> Result<EvalReport> {
    run.validate()?;
    if manifest.classes != classes.names {
        return Err(Error::Parameter(format!(
            "manifest class table ({:?}...) does not match the embedding set ({:?}...)",
            manifest.classes.first(),
            classes.names.first()
        )));
    }
    let started = Instant::now();
    let n_classes = manifest.classes.len();

    struct PerImage {
        counts: Vec<ClassCounts>,
        ignored: u64,
        pixels: u64,
        seconds: f64,
    }

    let per_image: Vec<Result<PerImage>> = manifest
        .items
        .par_iter()
        .map(|item| {
            let t0 = Instant::now();
            let img = load_image(&item.image)?;
            let (lh, lw, gt) = load_label_map(&item.label)?;
            let outcome = segment_image(&img, ckpt, classes, run)?;
            if (lh, lw) != (outcome.map.height, outcome.map.width) {
                return Err(Error::Shape(format!(
                    "label map {}x{} vs prediction {}x{}",
                    lh, lw, outcome.map.height, outcome.map.width
                )));
            }
            let mut counts = vec![ClassCounts::default(); n_classes];
            let mut ignored = 0u64;
            accumulate_confusion(
                &gt,
                &outcome.map.labels,
                n_classes,
                manifest.ignore_label,
                &mut counts,
                &mut ignored,
            )?;
            Ok(PerImage {
                counts,
                ignored,
                pixels: gt.len() as u64,
                seconds: t0.elapsed().as_secs_f64(),
            })
        })
        .collect();

    let mut totals = vec![ClassCounts::default(); n_classes];
    let mut ignored = 0u64;
    let mut pixels = 0u64;
    let mut per_image_seconds = Vec::with_capacity(manifest.items.len());
    for result in per_image {
        let img = result?;
        for (t, c) in totals.iter_mut().zip(img.counts.iter()) {
            t.tp += c.tp;
            t.fp += c.fp;
            t.fn_ += c.fn_;
        }
        ignored += img.ignored;
        pixels += img.pixels;
        per_image_seconds.push(img.seconds);
    }

    let (rows, miou, present) = report_from_confusion(&manifest.classes, &totals);
    Ok(EvalReport {
        classes: rows,
        miou,
        evaluated_classes: present,
        images: manifest.items.len(),
        total_pixels: pixels,
        ignored_pixels: ignored,
        empty: present == 0,
        config: run.clone(),
        timing: EvalTiming {
            total_seconds: started.elapsed().as_secs_f64(),
            per_image_seconds,
        },
    })
}

impl EvalReport {
    /// Serialize with the timing subtree removed; two runs with identical
    /// inputs and configuration are byte-identical under this view.
    pub fn to_json_without_timing(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)
            .map_err(|e| Error::Decode(format!("report encode: {e}")))?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("timing");
        }
        serde_json::to_string_pretty(&value)
            .map_err(|e| Error::Decode(format!("report encode: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Decode(format!("report encode: {e}")))
    }
}
