//! Weight redistribution.
//!
//! Attention: per query row, the mass on distraction columns is attenuated
//! by `1 - beta`; the removed budget is re-granted to defocused columns in
//! proportion to their existing shares, so every row keeps summing to one
//! and untouched columns are bit-identical. Embeddings: distraction tokens
//! get their distraction-dimension entries replaced by the mean of their
//! spatial neighbors.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::vit::TokenState;

/// Redistribute attention mass in place. `t_dis` and `t_def` are disjoint
/// column indices in matrix coordinates.
///
/// Rows with zero mass on the defocused columns are left untouched (their
/// share distribution is undefined, and dropping the budget would break row
/// normalization). An empty defocused set makes the whole call the identity
/// transform.
pub fn redistribute_attention(
    attn: &mut DenseMatrix,
    t_dis: &[usize],
    t_def: &[usize],
    beta: f64,
) -> Result<()> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::Parameter(format!("beta {beta} outside (0,1)")));
    }
    let cols = attn.cols();
    if let Some(&bad) = t_dis.iter().chain(t_def.iter()).find(|&&c| c >= cols) {
        return Err(Error::Shape(format!(
            "column {bad} outside attention of {cols} columns"
        )));
    }
    if t_dis.iter().any(|c| t_def.contains(c)) {
        return Err(Error::Contract(
            "distraction and defocused column sets overlap".into(),
        ));
    }
    if t_dis.is_empty() || t_def.is_empty() {
        return Ok(());
    }
    let keep = 1.0 - beta;
    for r in 0..attn.rows() {
        let row = attn.row_mut(r);
        let def_mass: f64 = t_def.iter().map(|&c| row[c] as f64).sum();
        if def_mass == 0.0 {
            continue;
        }
        let dis_mass: f64 = t_dis.iter().map(|&c| row[c] as f64).sum();
        for &c in t_dis {
            row[c] = (row[c] as f64 * keep) as f32;
        }
        let budget = beta * dis_mass;
        for &c in t_def {
            let share = row[c] as f64 / def_mass;
            row[c] = (row[c] as f64 + budget * share) as f32;
        }
    }
    Ok(())
}

/// Apply [`redistribute_attention`] to every head of a layer.
pub fn redistribute_attention_heads(
    heads: &mut [DenseMatrix],
    t_dis: &[usize],
    t_def: &[usize],
    beta: f64,
) -> Result<()> {
    for h in heads {
        redistribute_attention(h, t_dis, t_def, beta)?;
    }
    Ok(())
}

/// Neighbor patch indices of patch `i` in a `side x side` square window
/// centered on it (center excluded), clipped to the grid.
pub fn grid_neighbors(i: usize, grid: usize, side: usize) -> Vec<usize> {
    let r = (side / 2) as isize;
    let (gy, gx) = ((i / grid) as isize, (i % grid) as isize);
    let mut out = Vec::with_capacity(side * side - 1);
    for dy in -r..=r {
        for dx in -r..=r {
            if dy == 0 && dx == 0 {
                continue;
            }
            let (y, x) = (gy + dy, gx + dx);
            if y >= 0 && x >= 0 && (y as usize) < grid && (x as usize) < grid {
                out.push(y as usize * grid + x as usize);
            }
        }
    }
    out
}

/// Replace the distraction-dimension entries of each distraction token with
/// the mean of its available neighbors (count-normalized at borders, so
/// border embeddings are not dragged toward zero). All tokens read from the
/// pre-update snapshot; every other entry is bit-identical.
pub fn redistribute_embeddings(
    state: &mut TokenState,
    t_dis: &[usize],
    dims: &[usize],
    receptive_field: usize,
) -> Result<()> {
    if receptive_field < 3 || receptive_field % 2 == 0 {
        return Err(Error::Parameter(format!(
            "receptive field {receptive_field} must be an odd number >= 3"
        )));
    }
    if t_dis.is_empty() || dims.is_empty() {
        return Ok(());
    }
    let grid = state.grid;
    let snapshot = state.embeddings.clone();
    for &i in t_dis {
        if i >= grid * grid {
            return Err(Error::Shape(format!(
                "patch index {i} outside a {grid}x{grid} grid"
            )));
        }
        let neighbors = grid_neighbors(i, grid, receptive_field);
        let inv = 1.0 / neighbors.len() as f64;
        for &j in dims {
            let mean: f64 = neighbors
                .iter()
                .map(|&nb| snapshot.get(nb + 1, j) as f64)
                .sum::<f64>()
                * inv;
            state.embeddings.set(i + 1, j, mean as f32);
        }
    }
    Ok(())
}
