//! Suppression-strategy ablations: instead of redistributing, distraction
//! tokens are masked out of the attention, clamped, or smoothed over.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_io::ModelConfig;
use crate::numerics::DenseMatrix;
use crate::vit::TokenState;

use super::redistribute::grid_neighbors;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionStrategy {
    /// Zero the distraction columns of the post-softmax attention and
    /// renormalize each row (the post-softmax identity of a pre-softmax
    /// negative-infinity mask).
    NegInfMask,
    /// Clamp distraction-dimension entries so the relative weight cannot
    /// exceed the identification threshold.
    LowPass,
    /// Replace distraction-token embeddings with the mean of their 3x3
    /// neighbors, all dimensions.
    MeanFilter,
    /// Same with the median (even neighbor counts average the middle pair).
    MedianFilter,
}

impl FromStr for SuppressionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_inf_mask" => Ok(Self::NegInfMask),
            "low_pass" => Ok(Self::LowPass),
            "mean_filter" => Ok(Self::MeanFilter),
            "median_filter" => Ok(Self::MedianFilter),
            other => Err(Error::Parameter(format!(
                "unknown suppression strategy '{other}' \
                 (neg_inf_mask | low_pass | mean_filter | median_filter)"
            ))),
        }
    }
}

impl fmt::Display for SuppressionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::NegInfMask => "neg_inf_mask",
            Self::LowPass => "low_pass",
            Self::MeanFilter => "mean_filter",
            Self::MedianFilter => "median_filter",
        };
        f.write_str(s)
    }
}

/// Suppress distraction tokens in the embeddings. `NegInfMask` is a no-op
/// here: it acts on the attention via [`mask_attention_columns`].
pub fn apply_suppression(
    state: &mut TokenState,
    t_dis: &[usize],
    strategy: SuppressionStrategy,
    config: &ModelConfig,
) -> Result<()> {
    if t_dis.is_empty() {
        return Ok(());
    }
    let grid = state.grid;
    if let Some(&bad) = t_dis.iter().find(|&&i| i >= grid * grid) {
        return Err(Error::Shape(format!(
            "patch index {bad} outside a {grid}x{grid} grid"
        )));
    }
    match strategy {
        SuppressionStrategy::NegInfMask => Ok(()),
        SuppressionStrategy::LowPass => {
            for &i in t_dis {
                let row = state.embeddings.row_mut(i + 1);
                let denom: f64 = row.iter().map(|&v| v as f64).sum();
                if denom.abs() < 1e-8 {
                    continue;
                }
                let limit = (config.tau * denom) as f32;
                for &j in &config.distraction_dims {
                    // Keep the relative weight at or below tau whatever the
                    // sign of the denominator.
                    row[j] = if denom > 0.0 {
                        row[j].min(limit)
                    } else {
                        row[j].max(limit)
                    };
                }
            }
            Ok(())
        }
        SuppressionStrategy::MeanFilter | SuppressionStrategy::MedianFilter => {
            let snapshot = state.embeddings.clone();
            let width = snapshot.cols();
            for &i in t_dis {
                let neighbors = grid_neighbors(i, grid, 3);
                let mut vals: Vec<f64> = Vec::with_capacity(neighbors.len());
                for j in 0..width {
                    vals.clear();
                    vals.extend(neighbors.iter().map(|&nb| snapshot.get(nb + 1, j) as f64));
                    let v = if strategy == SuppressionStrategy::MeanFilter {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    } else {
                        median(&mut vals)
                    };
                    state.embeddings.set(i + 1, j, v as f32);
                }
            }
            Ok(())
        }
    }
}

/// Zero the given columns of a post-softmax attention map and renormalize
/// each row over the remaining columns.
pub fn mask_attention_columns(attn: &mut DenseMatrix, cols: &[usize]) -> Result<()> {
    let width = attn.cols();
    if let Some(&bad) = cols.iter().find(|&&c| c >= width) {
        return Err(Error::Shape(format!(
            "column {bad} outside attention of {width} columns"
        )));
    }
    if cols.is_empty() {
        return Ok(());
    }
    for r in 0..attn.rows() {
        let row = attn.row_mut(r);
        for &c in cols {
            row[c] = 0.0;
        }
        let sum: f64 = row.iter().map(|&v| v as f64).sum();
        if sum <= 0.0 {
            return Err(Error::Numeric(format!(
                "row {r} has no attention mass left after masking"
            )));
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v = (*v as f64 * inv) as f32;
        }
    }
    Ok(())
}

fn median(vals: &mut [f64]) -> f64 {
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::Variant;

    fn tiny_config(width: usize, dims: Vec<usize>, tau: f64) -> ModelConfig {
        let mut cfg = ModelConfig::b16();
        cfg.variant = Variant::Custom;
        cfg.width = width;
        cfg.distraction_dims = dims;
        cfg.tau = tau;
        cfg
    }

    fn state_from(grid: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> TokenState {
        let mut m = DenseMatrix::zeros(grid * grid + 1, width);
        for i in 0..grid * grid {
            for j in 0..width {
                m.set(i + 1, j, f(i, j));
            }
        }
        TokenState::new(1, grid, m).unwrap()
    }

    #[test]
    fn mask_zeroes_columns_and_renormalizes() {
        let mut m = DenseMatrix::from_vec(2, 3, vec![0.2, 0.3, 0.5, 0.1, 0.6, 0.3]).unwrap();
        mask_attention_columns(&mut m, &[1]).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert!(m.max_row_sum_deviation() < 1e-6);
        assert!((m.get(0, 0) - 0.2 / 0.7).abs() < 1e-6);
    }

    #[test]
    fn mean_filter_on_constant_field_is_identity() {
        let cfg = tiny_config(4, vec![0], 0.1);
        let mut state = state_from(3, 4, |_, j| 1.0 + j as f32);
        let before = state.embeddings.clone();
        apply_suppression(&mut state, &[4], SuppressionStrategy::MeanFilter, &cfg).unwrap();
        assert!(state.embeddings.max_abs_diff(&before) < 1e-7);
    }

    #[test]
    fn median_filter_takes_median_of_eight_neighbors() {
        // Interior token of a 3x3 grid; neighbors hold 1..=8 at dim 0, so
        // the median is 4.5 regardless of the center value.
        let mut next_val = 0.0f32;
        let mut state = state_from(3, 1, |i, _| {
            if i == 4 {
                100.0
            } else {
                next_val += 1.0;
                next_val
            }
        });
        let cfg = tiny_config(1, vec![0], 0.1);
        apply_suppression(&mut state, &[4], SuppressionStrategy::MedianFilter, &cfg).unwrap();
        assert_eq!(state.embeddings.get(5, 0), 4.5);
    }

    #[test]
    fn low_pass_clamps_relative_weight_to_tau() {
        let cfg = tiny_config(4, vec![0], 0.5);
        let mut state = state_from(2, 4, |i, j| {
            if i == 0 && j == 0 {
                10.0
            } else {
                1.0
            }
        });
        apply_suppression(&mut state, &[0], SuppressionStrategy::LowPass, &cfg).unwrap();
        let row = state.embeddings.row(1);
        // Clamp target is tau times the pre-clamp sum (10 + 3 = 13).
        assert!((row[0] - 6.5).abs() < 1e-6);
        // Non-distraction dims untouched.
        assert_eq!(row[1], 1.0);
    }

    #[test]
    fn neg_inf_mask_leaves_embeddings_alone() {
        let cfg = tiny_config(4, vec![0], 0.1);
        let mut state = state_from(2, 4, |i, j| (i * 4 + j) as f32);
        let before = state.embeddings.clone();
        apply_suppression(&mut state, &[1], SuppressionStrategy::NegInfMask, &cfg).unwrap();
        assert_eq!(state.embeddings.data(), before.data());
    }

    #[test]
    fn unknown_strategy_string_is_parameter_error() {
        assert!(matches!(
            "gaussian_blur".parse::<SuppressionStrategy>(),
            Err(Error::Parameter(_))
        ));
    }
}
