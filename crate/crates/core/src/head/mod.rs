//! Dense prediction head: choose the proxy attention for the final layer,
//! classify patch features against the class embeddings by cosine
//! similarity, and upsample class logits to pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_io::ClassEmbeddingSet;
use crate::numerics::{bilinear_resize_plane, DenseMatrix};
use crate::vit::AttentionStack;

/// Which attention replaces the final layer's query-key map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyAttention {
    /// Layer-averaged key-key attention (the strongest choice).
    #[default]
    KkAvg,
    /// Last layer's key-key attention.
    KkLast,
    /// Layer-averaged query-query attention.
    QqAvg,
    /// Last layer's query-query attention.
    QqLast,
}

/// Mean over all layers and heads of the key-key attention. The stack must
/// cover the whole tower.
pub fn layer_averaged_kk(stack: &AttentionStack, expected_layers: usize) -> Result<DenseMatrix> {
    if stack.layers_seen() != expected_layers {
        return Err(Error::Contract(format!(
            "attention stack holds {} layers, tower has {expected_layers}",
            stack.layers_seen()
        )));
    }
    stack.kk_cumulative_avg()
}

/// Resolve the configured proxy attention from a complete stack.
pub fn proxy_attention(
    stack: &AttentionStack,
    choice: ProxyAttention,
    expected_layers: usize,
) -> Result<DenseMatrix> {
    if stack.layers_seen() != expected_layers {
        return Err(Error::Contract(format!(
            "attention stack holds {} layers, tower has {expected_layers}",
            stack.layers_seen()
        )));
    }
    match choice {
        ProxyAttention::KkAvg => stack.kk_cumulative_avg(),
        ProxyAttention::KkLast => Ok(stack.kk().last().expect("nonempty stack").clone()),
        ProxyAttention::QqAvg => DenseMatrix::mean_of(stack.qq()),
        ProxyAttention::QqLast => Ok(stack.qq().last().expect("nonempty stack").clone()),
    }
}

/// Per-patch class cosine scores on the token grid.
#[derive(Debug, Clone)]
pub struct LogitsMap {
    pub grid: usize,
    /// (patches, classes), every score in [-1, 1].
    pub scores: DenseMatrix,
    /// Patches whose feature norm was numerically zero (scored by raw dot
    /// product with an epsilon guard).
    pub zero_norm_patches: usize,
}

/// Cosine classification of patch features (rows of the projected dense
/// output, global token excluded by the caller) against unit-norm class
/// embeddings.
pub fn classify_patches(
    patch_features: &DenseMatrix,
    grid: usize,
    classes: &ClassEmbeddingSet,
) -> Result<LogitsMap> {
    if patch_features.rows() != grid * grid {
        return Err(Error::Shape(format!(
            "{} feature rows for a {grid}x{grid} grid",
            patch_features.rows()
        )));
    }
    if patch_features.cols() != classes.width() {
        return Err(Error::Shape(format!(
            "feature width {} vs class-embedding width {}",
            patch_features.cols(),
            classes.width()
        )));
    }
    let mut normalized = patch_features.clone();
    let mut zero_norm = 0usize;
    for i in 0..normalized.rows() {
        let row = normalized.row_mut(i);
        let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm < 1e-12 {
            zero_norm += 1;
            continue; // raw dot product with unit class rows
        }
        let inv = (1.0 / norm) as f32;
        for v in row {
            *v *= inv;
        }
    }
    let mut scores = normalized.matmul_transb(&classes.embeddings)?;
    for v in scores.data_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(LogitsMap {
        grid,
        scores,
        zero_norm_patches: zero_norm,
    })
}

/// Class-major stack of score planes at pixel resolution.
#[derive(Debug, Clone)]
pub struct ScorePlanes {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// `classes * height * width`, plane by plane.
    pub data: Vec<f32>,
}

impl ScorePlanes {
    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }
}

/// Bilinear upsampling of each class plane from the token grid to pixels.
/// The argmax is taken only after upsampling and window merging.
pub fn upsample_logits(logits: &LogitsMap, height: usize, width: usize) -> Result<ScorePlanes> {
    let g = logits.grid;
    if height < g || width < g {
        return Err(Error::Parameter(format!(
            "target {height}x{width} smaller than the {g}x{g} grid"
        )));
    }
    let classes = logits.scores.cols();
    let mut data = Vec::with_capacity(classes * height * width);
    let mut plane = vec![0.0f32; g * g];
    for c in 0..classes {
        for i in 0..g * g {
            plane[i] = logits.scores.get(i, c);
        }
        data.extend(bilinear_resize_plane(&plane, g, g, height, width)?);
    }
    Ok(ScorePlanes {
        height,
        width,
        classes,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes_2x4() -> ClassEmbeddingSet {
        ClassEmbeddingSet::new(
            vec!["a".into(), "b".into()],
            DenseMatrix::from_vec(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn feature_equal_to_class_embedding_scores_one() {
        let classes = classes_2x4();
        let feats =
            DenseMatrix::from_vec(1, 4, vec![0.0, 3.0, 0.0, 0.0]).unwrap();
        let logits = classify_patches(&feats, 1, &classes).unwrap();
        assert!((logits.scores.get(0, 1) - 1.0).abs() < 1e-6);
        assert!(logits.scores.get(0, 0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_feature_scores_zero_everywhere() {
        let classes = classes_2x4();
        let feats = DenseMatrix::from_vec(1, 4, vec![0.0, 0.0, 5.0, 0.0]).unwrap();
        let logits = classify_patches(&feats, 1, &classes).unwrap();
        assert!(logits.scores.get(0, 0).abs() < 1e-6);
        assert!(logits.scores.get(0, 1).abs() < 1e-6);
    }

    #[test]
    fn mixed_feature_has_cosine_components() {
        let classes = classes_2x4();
        let feats = DenseMatrix::from_vec(1, 4, vec![0.8, 0.6, 0.0, 0.0]).unwrap();
        let logits = classify_patches(&feats, 1, &classes).unwrap();
        assert!((logits.scores.get(0, 0) - 0.8).abs() < 1e-6);
        assert!((logits.scores.get(0, 1) - 0.6).abs() < 1e-6);
    }

    #[test]
    fn zero_norm_feature_is_guarded_and_counted() {
        let classes = classes_2x4();
        let feats = DenseMatrix::zeros(1, 4);
        let logits = classify_patches(&feats, 1, &classes).unwrap();
        assert_eq!(logits.zero_norm_patches, 1);
        assert_eq!(logits.scores.get(0, 0), 0.0);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let classes = classes_2x4();
        let feats = DenseMatrix::zeros(1, 5);
        assert!(matches!(
            classify_patches(&feats, 1, &classes),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn class_scaling_does_not_change_scores() {
        // Normalization on load makes the scores literally invariant.
        let a = classes_2x4();
        let b = ClassEmbeddingSet::new(
            vec!["a".into(), "b".into()],
            DenseMatrix::from_vec(2, 4, vec![7.0, 0.0, 0.0, 0.0, 0.0, 0.25, 0.0, 0.0]).unwrap(),
            None,
        )
        .unwrap();
        let feats = DenseMatrix::from_vec(4, 4, (0..16).map(|i| i as f32 * 0.3 - 2.0).collect())
            .unwrap();
        let la = classify_patches(&feats, 2, &a).unwrap();
        let lb = classify_patches(&feats, 2, &b).unwrap();
        assert!(la.scores.max_abs_diff(&lb.scores) < 1e-6);
    }

    #[test]
    fn identity_upsample_preserves_scores() {
        let logits = LogitsMap {
            grid: 2,
            scores: DenseMatrix::from_vec(4, 1, vec![0.1, 0.4, -0.2, 0.9]).unwrap(),
            zero_norm_patches: 0,
        };
        let planes = upsample_logits(&logits, 2, 2).unwrap();
        assert_eq!(planes.plane(0), &[0.1, 0.4, -0.2, 0.9]);
    }

    #[test]
    fn checkerboard_upsample_matches_resize_oracle() {
        let logits = LogitsMap {
            grid: 2,
            scores: DenseMatrix::from_vec(4, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            zero_norm_patches: 0,
        };
        let planes = upsample_logits(&logits, 4, 4).unwrap();
        let oracle = bilinear_resize_plane(&[0.0, 1.0, 1.0, 0.0], 2, 2, 4, 4).unwrap();
        assert_eq!(planes.plane(0), oracle.as_slice());
    }
}
