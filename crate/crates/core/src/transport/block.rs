//! Block approximation of a plan: on each product of blocks `Q_J x Q_K` the
//! plan is replaced by its mass there spread as `mu|_J (x) nu|_K`.

use crate::error::{check_len, Error, Result};
use crate::grid::{DenseMatrix, DiscreteMeasure, Grid};

/// Block index of every cell for blocks of `block` cells per axis.
fn block_ids(grid: &Grid, block: usize) -> Result<(Vec<usize>, usize)> {
    for axis in grid.axes() {
        if block == 0 || axis.points % block != 0 {
            return Err(Error::BlockScale {
                block,
                points: axis.points,
            });
        }
    }
    let per_axis: Vec<usize> = grid.axes().iter().map(|a| a.points / block).collect();
    let count = per_axis.iter().product();
    let ids = (0..grid.len())
        .map(|i| {
            let idx = grid.multi_index(i);
            match grid.dim() {
                1 => idx[0] / block,
                _ => (idx[0] / block) * per_axis[1] + idx[1] / block,
            }
        })
        .collect();
    Ok((ids, count))
}

/// Block approximation at scale `block` grid cells per axis.
///
/// When `gamma` has marginals `mu` and `nu`, so does the result.
pub fn block_approximation(
    gamma: &DenseMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    block: usize,
) -> Result<DenseMatrix> {
    mu.same_grid(nu)?;
    let grid = mu.grid();
    let n = grid.len();
    check_len(n * n, gamma.rows() * gamma.cols())?;
    check_len(n, gamma.rows())?;
    let (ids, count) = block_ids(grid, block)?;
    let (m, v) = (mu.weights(), nu.weights());

    let mut mass = vec![0.0; count * count];
    let mut mu_b = vec![0.0; count];
    let mut nu_b = vec![0.0; count];
    for i in 0..n {
        mu_b[ids[i]] += m[i];
        nu_b[ids[i]] += v[i];
        let row = gamma.row(i);
        for j in 0..n {
            mass[ids[i] * count + ids[j]] += row[j];
        }
    }
    let ratio = |w: f64, total: f64| if total > 0.0 { w / total } else { 0.0 };
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        let (bj, bk) = (ids[i], ids[j]);
        mass[bj * count + bk] * ratio(m[i], mu_b[bj]) * ratio(v[j], nu_b[bk])
    }))
}
