//! Row-wise softmax, layer normalization, and the two GELU variants used by
//! CLIP checkpoints.

use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;

/// Row-wise softmax of `m * scale`, stabilized by row-max subtraction.
/// Every output row sums to 1 and entries lie in (0, 1].
pub fn softmax_rows(m: &DenseMatrix, scale: f64) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    let mut scratch = vec![0.0f64; m.cols()];
    for i in 0..m.rows() {
        let row = m.row(i);
        let mut max = f64::NEG_INFINITY;
        for (s, &v) in scratch.iter_mut().zip(row.iter()) {
            *s = v as f64 * scale;
            max = max.max(*s);
        }
        let mut sum = 0.0f64;
        for s in scratch.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        let inv = 1.0 / sum;
        for (o, &s) in out.row_mut(i).iter_mut().zip(scratch.iter()) {
            *o = (s * inv) as f32;
        }
    }
    out
}

/// Zero-mean unit-variance transform of one vector, scaled by `gain` and
/// shifted by `bias`. Mean and variance accumulate in f64.
pub fn layernorm(x: &[f32], gain: &[f32], bias: &[f32], eps: f64) -> Vec<f32> {
    let d = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / d;
    let var = x
        .iter()
        .map(|&v| {
            let c = v as f64 - mean;
            c * c
        })
        .sum::<f64>()
        / d;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias.iter()))
        .map(|(&v, (&g, &b))| (((v as f64 - mean) * inv) * g as f64 + b as f64) as f32)
        .collect()
}

/// [`layernorm`] applied to every row of a matrix.
pub fn layernorm_rows(x: &DenseMatrix, gain: &[f32], bias: &[f32], eps: f64) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        out.row_mut(i)
            .copy_from_slice(&layernorm(x.row(i), gain, bias, eps));
    }
    out
}

/// MLP activation. CLIP checkpoints released with the original weights use
/// the sigmoid approximation; `GeluTanh` is the common tanh form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    QuickGelu,
    GeluTanh,
}

impl Activation {
    pub fn apply_inplace(self, m: &mut DenseMatrix) {
        let f = match self {
            Activation::QuickGelu => quick_gelu,
            Activation::GeluTanh => gelu_tanh,
        };
        for v in m.data_mut() {
            *v = f(*v);
        }
    }
}

/// `x * sigmoid(1.702 x)`.
pub fn quick_gelu(x: f32) -> f32 {
    let x64 = x as f64;
    (x64 / (1.0 + (-1.702 * x64).exp())) as f32
}

/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu_tanh(x: f32) -> f32 {
    let x64 = x as f64;
    let c = (2.0 / std::f64::consts::PI).sqrt();
    (0.5 * x64 * (1.0 + (c * (x64 + 0.044715 * x64.powi(3))).tanh())) as f32
}
