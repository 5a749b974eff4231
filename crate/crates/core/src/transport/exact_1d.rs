//! Exact quadratic transport on a line through the monotone coupling.

use crate::error::{Error, Result};
use crate::grid::{DenseMatrix, DiscreteMeasure, DEFAULT_DENSE_CAP};

/// Nonzero cells `(i, j, mass)` of the monotone (north-west corner) coupling.
///
/// Grid points are sorted along the axis, so matching the two cumulative
/// distributions greedily yields the quantile coupling.
pub fn monotone_coupling(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<Vec<(usize, usize, f64)>> {
    mu.same_grid(nu)?;
    if mu.grid().dim() != 1 {
        return Err(Error::UnsupportedDimension(mu.grid().dim()));
    }
    let (m, v) = (mu.weights(), nu.weights());
    let n = m.len();
    let mut out = Vec::with_capacity(2 * n);
    let (mut i, mut j) = (0, 0);
    let (mut ri, mut cj) = (m[0], v[0]);
    while i < n && j < n {
        let t = ri.min(cj);
        if t > 0.0 {
            out.push((i, j, t));
        }
        ri -= t;
        cj -= t;
        // t is the smaller of the two, so at least one side is now exactly empty
        if ri <= 0.0 {
            i += 1;
            if i < n {
                ri = m[i];
            }
        }
        if cj <= 0.0 {
            j += 1;
            if j < n {
                cj = v[j];
            }
        }
    }
    Ok(out)
}

/// Exact `W^2(mu, nu)` and the optimal plan in 1-D.
pub fn exact_w2_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, DenseMatrix)> {
    let cells = monotone_coupling(mu, nu)?;
    let grid = mu.grid();
    let n = grid.len();
    if n > DEFAULT_DENSE_CAP {
        return Err(Error::DenseCapExceeded {
            cap: DEFAULT_DENSE_CAP,
            points: n,
        });
    }
    let mut plan = DenseMatrix::zeros(n, n);
    let mut w2 = 0.0;
    for (i, j, t) in cells {
        plan.set(i, j, plan.get(i, j) + t);
        w2 += t * grid.cost(i, j);
    }
    Ok((w2, plan))
}
