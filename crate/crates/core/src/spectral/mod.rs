//! Defocus localization: build a similarity graph over patch tokens from an
//! attention map, solve the generalized eigensystem `(D - W) y = lambda D y`
//! for the Fiedler vector, and threshold it into a bipartition whose
//! attention-poor side is the defocused token set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sym_eigen_smallest_f64, DenseMatrix};

/// Which attention map seeds the similarity graph. The cumulative layer
/// average of key-key attention is the most robust choice; the single-layer
/// variants are retained for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySource {
    Qk,
    Qq,
    Kk,
    #[default]
    KkCumAvg,
}

/// Threshold rule for turning the Fiedler vector into a candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    #[default]
    Mean,
    Otsu,
}

/// Symmetric nonnegative similarity over patch tokens with positive degrees.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    n: usize,
    /// Row-major symmetric weights.
    weights: Vec<f64>,
    degrees: Vec<f64>,
    pub source: SimilaritySource,
}

impl SimilarityGraph {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }
}

/// Symmetrize `(A + A^T) / 2` and compute degrees. The input is an attention
/// map over patch tokens only (global token already stripped); softmaxed
/// attention is row-normalized and slightly asymmetric, and the normalized
/// cut needs exact symmetry.
pub fn build_graph(attn: &DenseMatrix, source: SimilaritySource) -> Result<SimilarityGraph> {
    let n = attn.rows();
    if attn.cols() != n || n == 0 {
        return Err(Error::Shape(format!(
            "similarity input must be square and nonempty, got {}x{}",
            attn.rows(),
            attn.cols()
        )));
    }
    attn.assert_finite("similarity input")?;
    let mut weights = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let w = 0.5 * (attn.get(i, j) as f64 + attn.get(j, i) as f64);
            if w < 0.0 {
                return Err(Error::Contract(format!(
                    "negative similarity {w:.3e} at ({i},{j})"
                )));
            }
            weights[i * n + j] = w;
        }
    }
    let mut degrees = vec![0.0f64; n];
    for i in 0..n {
        degrees[i] = weights[i * n..(i + 1) * n].iter().sum();
        if degrees[i] <= 1e-12 {
            return Err(Error::Numeric(format!(
                "degenerate graph: node {i} has degree {:.3e}",
                degrees[i]
            )));
        }
    }
    Ok(SimilarityGraph {
        n,
        weights,
        degrees,
        source,
    })
}

/// Fiedler vector of the generalized problem, with its eigenvalue.
#[derive(Debug, Clone)]
pub struct FiedlerPair {
    pub vector: Vec<f64>,
    pub lambda: f64,
}

/// Solve `(D - W) y = lambda D y` via the standardized symmetric form
/// `D^{-1/2} (D - W) D^{-1/2} z = lambda z`, taking the second-smallest
/// eigenpair and mapping back `y = D^{-1/2} z`.
pub fn fiedler(graph: &SimilarityGraph) -> Result<FiedlerPair> {
    let n = graph.n;
    if n < 2 {
        return Err(Error::Parameter(
            "bipartition needs at least two nodes".into(),
        ));
    }
    let inv_sqrt_d: Vec<f64> = graph.degrees.iter().map(|&d| 1.0 / d.sqrt()).collect();
    let mut sym = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = -graph.weights[i * n + j] * inv_sqrt_d[i] * inv_sqrt_d[j];
            if i == j {
                v += 1.0;
            }
            sym[i * n + j] = v;
        }
    }
    // Exact symmetry for the solver despite rounding in the products.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (sym[i * n + j] + sym[j * n + i]);
            sym[i * n + j] = avg;
            sym[j * n + i] = avg;
        }
    }
    let pairs = sym_eigen_smallest_f64(&sym, n, 2)?;
    let lambda = pairs[1].value;
    if !(-1e-8..=2.0 + 1e-8).contains(&lambda) {
        return Err(Error::Numeric(format!(
            "second eigenvalue {lambda:.6e} outside [0, 2]"
        )));
    }
    let vector: Vec<f64> = pairs[1]
        .vector
        .iter()
        .zip(inv_sqrt_d.iter())
        .map(|(&z, &s)| z * s)
        .collect();

    // Residual of the generalized problem and the D-orthogonality constraint.
    let y_inf = vector.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut residual = 0.0f64;
    let mut y_dot_d1 = 0.0f64;
    let mut y_norm = 0.0f64;
    let mut d1_norm = 0.0f64;
    for i in 0..n {
        let mut lap = 0.0f64;
        for j in 0..n {
            lap -= graph.weights[i * n + j] * vector[j];
        }
        lap += graph.degrees[i] * vector[i];
        residual = residual.max((lap - lambda * graph.degrees[i] * vector[i]).abs());
        y_dot_d1 += vector[i] * graph.degrees[i];
        y_norm += vector[i] * vector[i];
        d1_norm += graph.degrees[i] * graph.degrees[i];
    }
    if residual > 1e-6 * (1.0 + y_inf) {
        return Err(Error::Numeric(format!(
            "fiedler residual {residual:.3e} exceeds bound (n={n}, lambda={lambda:.3e}, \
             max degree {:.3e})",
            graph.degrees.iter().cloned().fold(0.0, f64::max)
        )));
    }
    if y_dot_d1.abs() > 1e-5 * y_norm.sqrt() * d1_norm.sqrt() {
        return Err(Error::Numeric(format!(
            "fiedler vector violates D-orthogonality: {y_dot_d1:.3e}"
        )));
    }
    Ok(FiedlerPair { vector, lambda })
}

/// Completed bipartition: the candidate side, the defocused set after
/// removing distraction tokens, and how the orientation was resolved.
#[derive(Debug, Clone)]
pub struct Partition {
    pub candidate: Vec<usize>,
    pub defocused: Vec<usize>,
    /// Threshold on the oriented vector.
    pub threshold: f64,
    /// True when the negative orientation was selected.
    pub flipped: bool,
    pub used_median_fallback: bool,
}

/// Threshold the Fiedler vector. Both orientations are evaluated and the
/// side with the lower mean attention column mass wins: defocused tokens are
/// by definition attention-poor, which pins down the otherwise arbitrary
/// eigenvector sign. Exact ties keep the positive orientation. A degenerate
/// side (empty or everything) falls back to a median split.
pub fn select_defocused(
    fiedler_vector: &[f64],
    rule: ThresholdRule,
    t_dis: &[usize],
    omega: &[f64],
) -> Result<Partition> {
    let n = fiedler_vector.len();
    if omega.len() != n {
        return Err(Error::Shape(format!(
            "column-mass vector has {} entries for {n} tokens",
            omega.len()
        )));
    }
    if n < 2 {
        return Err(Error::Parameter(
            "bipartition needs at least two nodes".into(),
        ));
    }

    let side = |sign: f64| -> Result<(Vec<usize>, f64, bool)> {
        let v: Vec<f64> = fiedler_vector.iter().map(|&y| sign * y).collect();
        let t = match rule {
            ThresholdRule::Mean => v.iter().sum::<f64>() / n as f64,
            ThresholdRule::Otsu => otsu_threshold(&v),
        };
        let selected: Vec<usize> = (0..n).filter(|&i| v[i] > t).collect();
        if !selected.is_empty() && selected.len() < n {
            return Ok((selected, t, false));
        }
        // Median split fallback.
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (sorted[(n - 1) / 2] + sorted[n / 2]);
        let selected: Vec<usize> = (0..n).filter(|&i| v[i] > median).collect();
        if selected.is_empty() || selected.len() == n {
            return Err(Error::Numeric(
                "fiedler vector admits no proper bipartition".into(),
            ));
        }
        Ok((selected, median, true))
    };

    let (pos_side, pos_t, pos_fb) = side(1.0)?;
    let (neg_side, neg_t, neg_fb) = side(-1.0)?;
    let mean_omega =
        |set: &[usize]| -> f64 { set.iter().map(|&i| omega[i]).sum::<f64>() / set.len() as f64 };
    // Lower mean column mass = attention-poor = defocused side; ties keep
    // the positive orientation.
    let flip = mean_omega(&neg_side) < mean_omega(&pos_side);
    let (candidate, threshold, used_median_fallback) = if flip {
        (neg_side, neg_t, neg_fb)
    } else {
        (pos_side, pos_t, pos_fb)
    };
    let defocused: Vec<usize> = candidate
        .iter()
        .copied()
        .filter(|i| !t_dis.contains(i))
        .collect();
    Ok(Partition {
        candidate,
        defocused,
        threshold,
        flipped: flip,
        used_median_fallback,
    })
}

/// Exhaustive between-class-variance maximization over the sorted values;
/// the threshold is the midpoint at the best split.
fn otsu_threshold(values: &[f64]) -> f64 {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total: f64 = sorted.iter().sum();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_threshold = sorted[0];
    let mut prefix = 0.0f64;
    for k in 1..n {
        prefix += sorted[k - 1];
        if sorted[k - 1] == sorted[k] {
            continue; // identical values cannot be separated
        }
        let w0 = k as f64 / n as f64;
        let w1 = 1.0 - w0;
        let mu0 = prefix / k as f64;
        let mu1 = (total - prefix) / (n - k) as f64;
        let score = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if score > best_score {
            best_score = score;
            best_threshold = 0.5 * (sorted[k - 1] + sorted[k]);
        }
    }
    best_threshold
}
