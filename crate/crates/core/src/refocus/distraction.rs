//! Distractor localization.
//!
//! A patch token's maximum relative embedding weight over the distraction
//! dimensions, `phi_i = max_j f_i[j] / sum_k f_i[k]`, identifies tokens whose
//! over-activation will soak up attention. The base rule thresholds phi
//! alone; the large-model rule additionally requires a high cumulative
//! attention column mass, because on that model high embedding weight alone
//! over-triggers.

use crate::model_io::ModelConfig;
use crate::numerics::DenseMatrix;
use crate::vit::TokenState;

/// Denominators smaller than this exclude the token from consideration.
const DEGENERATE_DENOM: f64 = 1e-8;

/// Per-token statistics of one layer plus the identified distraction set.
#[derive(Debug, Clone)]
pub struct DistractionProfile {
    pub layer: usize,
    /// Maximum relative embedding weight per patch token; NaN where the
    /// denominator was degenerate or no distraction dimensions exist.
    pub phi: Vec<f64>,
    /// Cumulative attention column mass per patch token.
    pub omega: Vec<f64>,
    /// Sorted patch-token indices (never contains the global token).
    pub distraction: Vec<usize>,
}

/// Maximum relative embedding weight of one embedding row.
pub fn max_relative_weight(row: &[f32], dims: &[usize]) -> f64 {
    if dims.is_empty() {
        return f64::NAN;
    }
    let denom: f64 = row.iter().map(|&v| v as f64).sum();
    if denom.abs() < DEGENERATE_DENOM {
        return f64::NAN;
    }
    dims.iter()
        .map(|&j| row[j] as f64 / denom)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Identify the distraction set of a layer from its input embeddings.
/// `omega` is the cumulative head/layer-averaged attention column mass per
/// patch token (used only when the joint rule is active, but always recorded
/// in the profile for diagnostics).
pub fn localize_distractors(
    state: &TokenState,
    config: &ModelConfig,
    omega: &[f64],
) -> DistractionProfile {
    let n = state.patch_count();
    debug_assert_eq!(omega.len(), n);
    let mut phi = Vec::with_capacity(n);
    let mut distraction = Vec::new();
    for i in 0..n {
        let p = max_relative_weight(state.patch_row(i), &config.distraction_dims);
        let mut hit = p.is_finite() && p > config.tau;
        if let Some(floor) = config.attn_weight_floor {
            hit = hit && omega[i] > floor;
        }
        if hit {
            distraction.push(i);
        }
        phi.push(p);
    }
    DistractionProfile {
        layer: state.layer,
        phi,
        omega: omega.to_vec(),
        distraction,
    }
}

/// Column mass per patch token of a token-space attention matrix: the sum of
/// each patch column over all query rows (global row included; the global
/// column is skipped because distraction candidates are patch tokens only).
pub fn patch_column_mass(attn: &DenseMatrix) -> Vec<f64> {
    let sums = attn.col_sums();
    sums[1..].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::Variant;

    fn b16_like_config() -> ModelConfig {
        let mut cfg = ModelConfig::b16();
        cfg.variant = Variant::Custom;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.image_size = 224 * 4; // unused here
        cfg
    }

    fn state_with_rows(rows: Vec<Vec<f32>>, grid: usize, width: usize) -> TokenState {
        let mut m = DenseMatrix::zeros(grid * grid + 1, width);
        for (i, r) in rows.into_iter().enumerate() {
            m.row_mut(i + 1).copy_from_slice(&r);
        }
        TokenState::new(1, grid, m).unwrap()
    }

    #[test]
    fn uniform_token_is_not_distraction() {
        // All 768 entries equal: phi = 1/768 < tau = 5/768.
        let cfg = ModelConfig::b16();
        let row = vec![0.3f32; 768];
        assert!((max_relative_weight(&row, &cfg.distraction_dims) - 1.0 / 768.0).abs() < 1e-9);
    }

    #[test]
    fn planted_spike_crosses_threshold() {
        // One distraction dimension at 10 among 767 ones:
        // phi = 10 / 777 ~ 0.01287 > 5/768.
        let cfg = ModelConfig::b16();
        let mut row = vec![1.0f32; 768];
        row[4] = 10.0;
        let phi = max_relative_weight(&row, &cfg.distraction_dims);
        assert!((phi - 10.0 / 777.0).abs() < 1e-9);
        assert!(phi > cfg.tau);
    }

    #[test]
    fn planted_spikes_recovered_exactly() {
        let mut cfg = b16_like_config();
        cfg.width = 768;
        let grid = 4;
        let mut rows: Vec<Vec<f32>> = (0..16).map(|_| vec![1.0f32; 768]).collect();
        rows[3][162] = 10.0;
        rows[11][4] = 9.0;
        let state = state_with_rows(rows, grid, 768);
        let profile = localize_distractors(&state, &cfg, &vec![0.0; 16]);
        assert_eq!(profile.distraction, vec![3, 11]);
    }

    #[test]
    fn joint_rule_requires_column_mass() {
        let mut cfg = b16_like_config();
        cfg.width = 768;
        cfg.attn_weight_floor = Some(15.0);
        let grid = 2;
        let mut rows: Vec<Vec<f32>> = (0..4).map(|_| vec![1.0f32; 768]).collect();
        rows[0][4] = 10.0;
        rows[2][4] = 10.0;
        let state = state_with_rows(rows, grid, 768);
        // Token 0 has high column mass, token 2 does not.
        let omega = vec![20.0, 0.5, 3.0, 0.5];
        let profile = localize_distractors(&state, &cfg, &omega);
        assert_eq!(profile.distraction, vec![0]);
    }

    #[test]
    fn degenerate_denominator_excluded() {
        let mut cfg = b16_like_config();
        cfg.width = 4;
        cfg.distraction_dims = vec![0];
        cfg.tau = 0.1;
        let mut m = DenseMatrix::zeros(2, 4);
        // Sums to zero: the ratio is undefined and the token is skipped even
        // though its dimension-0 entry is large.
        m.row_mut(1).copy_from_slice(&[0.5, -0.5, 0.25, -0.25]);
        let state = TokenState::new(1, 1, m).unwrap();
        let profile = localize_distractors(&state, &cfg, &[0.0]);
        assert!(profile.phi[0].is_nan());
        assert!(profile.distraction.is_empty());
    }

    #[test]
    fn phi_is_scale_invariant() {
        let cfg = ModelConfig::b16();
        let mut row = vec![0.7f32; 768];
        row[326] = 42.0;
        let phi = max_relative_weight(&row, &cfg.distraction_dims);
        for c in [2.0f32, 0.125, 713.0] {
            let scaled: Vec<f32> = row.iter().map(|&v| c * v).collect();
            let phi_c = max_relative_weight(&scaled, &cfg.distraction_dims);
            assert!((phi - phi_c).abs() < 1e-6, "c = {c}");
        }
    }
}
