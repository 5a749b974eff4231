//! Gibbs kernel `K_ij = exp(-c_ij / eps) * l^2` on a grid.
//!
//! The quadratic cost splits over axes, so `K` is a Kronecker product of
//! one-dimensional kernels and can be applied axis by axis in `O(p^(n+1))`.
//! On an equispaced axis the 1-D kernel only depends on `|i - j|`, which keeps
//! the per-axis storage linear in `p`.

use crate::error::{check_eps, check_len, Error, Result};
use crate::grid::{DenseMatrix, Grid, DEFAULT_DENSE_CAP};

/// Below the log of the smallest subnormal double.
pub(crate) const LOG_UNDERFLOW: f64 = -746.0;

/// Per-axis log-kernel `-(k h)^2 / eps` indexed by the offset `k = |i - j|`.
#[derive(Debug, Clone)]
pub(crate) struct AxisTables {
    points: Vec<usize>,
    log_offsets: Vec<Vec<f64>>,
}

impl AxisTables {
    pub(crate) fn new(grid: &Grid, eps: f64) -> Self {
        Self::with_weight(grid, eps, None)
    }

    /// Variant whose axis `a` entries are multiplied by the squared distance
    /// along that axis (used to integrate the cost against a plan).
    pub(crate) fn with_weight(grid: &Grid, eps: f64, cost_axis: Option<usize>) -> Self {
        let log_offsets = grid
            .axes()
            .iter()
            .enumerate()
            .map(|(a, axis)| {
                let h = axis.spacing();
                (0..axis.points)
                    .map(|k| {
                        let d2 = (k as f64 * h).powi(2);
                        let base = -d2 / eps;
                        if cost_axis == Some(a) {
                            if k == 0 {
                                f64::NEG_INFINITY
                            } else {
                                base + d2.ln()
                            }
                        } else {
                            base
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            points: grid.axes().iter().map(|a| a.points).collect(),
            log_offsets,
        }
    }

    #[inline]
    fn entry(&self, axis: usize, i: usize, j: usize) -> f64 {
        self.log_offsets[axis][i.abs_diff(j)]
    }

    /// `out_i = logsumexp_j (T(i, j) + g_j)` with `T` the summed axis tables
    /// (or `T(j, i)` when `transpose`).
    pub(crate) fn log_convolve(&self, g: &[f64], transpose: bool) -> Vec<f64> {
        let ent = |a: usize, i: usize, j: usize| {
            if transpose {
                self.entry(a, j, i)
            } else {
                self.entry(a, i, j)
            }
        };
        match self.points.len() {
            1 => {
                let p = self.points[0];
                (0..p)
                    .map(|i| logsumexp((0..p).map(|j| ent(0, i, j) + g[j])))
                    .collect()
            }
            _ => {
                let (p0, p1) = (self.points[0], self.points[1]);
                // contract axis 1, then axis 0
                let mut tmp = vec![0.0; p0 * p1];
                for j0 in 0..p0 {
                    let row = &g[j0 * p1..(j0 + 1) * p1];
                    for i1 in 0..p1 {
                        tmp[j0 * p1 + i1] = logsumexp((0..p1).map(|j1| ent(1, i1, j1) + row[j1]));
                    }
                }
                let mut out = vec![0.0; p0 * p1];
                for i0 in 0..p0 {
                    for i1 in 0..p1 {
                        out[i0 * p1 + i1] =
                            logsumexp((0..p0).map(|j0| ent(0, i0, j0) + tmp[j0 * p1 + i1]));
                    }
                }
                out
            }
        }
    }

    /// `out_i = max_j (T(i, j) + g_j)`, the max-plus analogue of
    /// [`Self::log_convolve`].
    pub(crate) fn max_convolve(&self, g: &[f64], transpose: bool) -> Vec<f64> {
        let ent = |a: usize, i: usize, j: usize| {
            if transpose {
                self.entry(a, j, i)
            } else {
                self.entry(a, i, j)
            }
        };
        let max = |xs: &mut dyn Iterator<Item = f64>| xs.fold(f64::NEG_INFINITY, f64::max);
        match self.points.len() {
            1 => {
                let p = self.points[0];
                (0..p)
                    .map(|i| max(&mut (0..p).map(|j| ent(0, i, j) + g[j])))
                    .collect()
            }
            _ => {
                let (p0, p1) = (self.points[0], self.points[1]);
                let mut tmp = vec![0.0; p0 * p1];
                for j0 in 0..p0 {
                    let row = &g[j0 * p1..(j0 + 1) * p1];
                    for i1 in 0..p1 {
                        tmp[j0 * p1 + i1] = max(&mut (0..p1).map(|j1| ent(1, i1, j1) + row[j1]));
                    }
                }
                let mut out = vec![0.0; p0 * p1];
                for i0 in 0..p0 {
                    for i1 in 0..p1 {
                        out[i0 * p1 + i1] =
                            max(&mut (0..p0).map(|j0| ent(0, i0, j0) + tmp[j0 * p1 + i1]));
                    }
                }
                out
            }
        }
    }

    /// Linear-domain counterpart of [`Self::log_convolve`] (no `l^2` factor).
    fn convolve(&self, v: &[f64], transpose: bool) -> Vec<f64> {
        let lin: Vec<Vec<f64>> = self
            .log_offsets
            .iter()
            .map(|t| t.iter().map(|x| x.exp()).collect())
            .collect();
        let ent = |a: usize, i: usize, j: usize| {
            if transpose {
                lin[a][j.abs_diff(i)]
            } else {
                lin[a][i.abs_diff(j)]
            }
        };
        match self.points.len() {
            1 => {
                let p = self.points[0];
                (0..p)
                    .map(|i| (0..p).map(|j| ent(0, i, j) * v[j]).sum())
                    .collect()
            }
            _ => {
                let (p0, p1) = (self.points[0], self.points[1]);
                let mut tmp = vec![0.0; p0 * p1];
                for j0 in 0..p0 {
                    for i1 in 0..p1 {
                        tmp[j0 * p1 + i1] =
                            (0..p1).map(|j1| ent(1, i1, j1) * v[j0 * p1 + j1]).sum();
                    }
                }
                let mut out = vec![0.0; p0 * p1];
                for i0 in 0..p0 {
                    for i1 in 0..p1 {
                        out[i0 * p1 + i1] =
                            (0..p0).map(|j0| ent(0, i0, j0) * tmp[j0 * p1 + i1]).sum();
                    }
                }
                out
            }
        }
    }
}

/// Stable `log(sum(exp(x)))`; `-inf` for an empty or all `-inf` input.
pub fn logsumexp<I>(xs: I) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Applies the Gibbs kernel of `grid` at regularization `eps`.
///
/// In linear mode returns `K vec` (or `K^T vec`). In log mode returns
/// `log sum_j exp(-c_ij/eps + log vec_j + s_j) + 2 log l`, where `s` is the
/// optional dual shift (zero when absent); zero entries of `vec` contribute
/// nothing.
pub fn gibbs_apply(
    grid: &Grid,
    eps: f64,
    vec: &[f64],
    transpose: bool,
    log_domain: bool,
    shift: Option<&[f64]>,
) -> Result<Vec<f64>> {
    check_eps(eps)?;
    check_len(grid.len(), vec.len())?;
    if let Some(s) = shift {
        check_len(grid.len(), s.len())?;
    }
    if vec.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter(
            "kernel input must be nonnegative".into(),
        ));
    }
    let tables = AxisTables::new(grid, eps);
    let log_l2 = 2.0 * grid.cell_volume().ln();
    if log_domain {
        let g: Vec<f64> = match shift {
            Some(s) => vec.iter().zip(s).map(|(v, s)| v.ln() + s).collect(),
            None => vec.iter().map(|v| v.ln()).collect(),
        };
        Ok(tables
            .log_convolve(&g, transpose)
            .into_iter()
            .map(|x| x + log_l2)
            .collect())
    } else {
        let scaled: Vec<f64> = match shift {
            Some(s) => vec.iter().zip(s).map(|(v, s)| v * s.exp()).collect(),
            None => vec.to_vec(),
        };
        let l2 = log_l2.exp();
        Ok(tables
            .convolve(&scaled, transpose)
            .into_iter()
            .map(|x| x * l2)
            .collect())
    }
}

/// Dense `K_ij = exp(-c_ij / eps) * l^2`, refused above [`DEFAULT_DENSE_CAP`] points.
pub fn dense_kernel(grid: &Grid, eps: f64) -> Result<DenseMatrix> {
    dense_kernel_capped(grid, eps, DEFAULT_DENSE_CAP)
}

pub fn dense_kernel_capped(grid: &Grid, eps: f64, cap: usize) -> Result<DenseMatrix> {
    check_eps(eps)?;
    let n = grid.len();
    if n > cap {
        return Err(Error::DenseCapExceeded { cap, points: n });
    }
    let l2 = grid.cell_volume().powi(2);
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        (-grid.cost(i, j) / eps).exp() * l2
    }))
}

/// Compressed rows of the nonzero entries of a kernel.
#[derive(Debug, Clone)]
struct Csr {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Csr {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (s, e) = (self.offsets[i], self.offsets[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.vals[k] * v[self.cols[k] as usize];
            }
            *o = acc;
        }
    }

    fn transpose(&self, ncols: usize) -> Csr {
        let mut counts = vec![0usize; ncols + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for k in 0..ncols {
            counts[k + 1] += counts[k];
        }
        let mut next = counts.clone();
        let mut cols = vec![0u32; self.cols.len()];
        let mut vals = vec![0.0; self.vals.len()];
        for i in 0..self.offsets.len() - 1 {
            for k in self.offsets[i]..self.offsets[i + 1] {
                let c = self.cols[k] as usize;
                cols[next[c]] = i as u32;
                vals[next[c]] = self.vals[k];
                next[c] += 1;
            }
        }
        Csr {
            offsets: counts,
            cols,
            vals,
        }
    }
}

/// Storage strategy for the kernel rescaled by absorbed dual potentials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelBackend {
    /// Materialize the nonzero entries (those not underflowing to zero).
    Sparse,
    /// Recompute through axis-wise log-sum-exp at every application.
    LogSeparable,
}

impl KernelBackend {
    pub fn auto(grid: &Grid, dense_cap: usize) -> Self {
        if grid.len() <= dense_cap {
            Self::Sparse
        } else {
            Self::LogSeparable
        }
    }
}

/// The kernel `exp((alpha_i + beta_j - c_ij) / eps) * l^2` used inside the
/// scaling loops, with `alpha`, `beta` the absorbed log-potentials.
#[derive(Debug, Clone)]
pub(crate) struct ScaledKernel {
    grid: Grid,
    eps: f64,
    log_l2: f64,
    tables: AxisTables,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// Stored entries smaller than both their row and column maximum by this
    /// factor (in log) are dropped.
    truncation: f64,
    stored: bool,
    sparse: Option<(Csr, Csr)>,
}

impl ScaledKernel {
    pub(crate) fn new(
        grid: &Grid,
        eps: f64,
        backend: KernelBackend,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        b: &[f64],
        truncation: f64,
    ) -> Result<Self> {
        check_eps(eps)?;
        let mut k = Self {
            grid: grid.clone(),
            eps,
            log_l2: 2.0 * grid.cell_volume().ln(),
            tables: AxisTables::new(grid, eps),
            alpha,
            beta,
            truncation,
            stored: backend == KernelBackend::Sparse,
            sparse: None,
        };
        k.refresh(b)?;
        Ok(k)
    }

    pub(crate) fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub(crate) fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub(crate) fn eps(&self) -> f64 {
        self.eps
    }

    /// Mutates the absorbed potentials; [`Self::refresh`] must follow.
    pub(crate) fn update_potentials<F>(&mut self, f: F)
    where
        F: FnOnce(&mut [f64], &mut [f64]),
    {
        f(&mut self.alpha, &mut self.beta);
    }

    /// Rebuilds any stored entries. Columns with `b_j = 0` may hold a stale
    /// potential that overflows against the current rows; if so it is
    /// lowered until no entry of the column exceeds one, which leaves
    /// `K~ b` unchanged.
    pub(crate) fn refresh(&mut self, b: &[f64]) -> Result<()> {
        if !self.stored {
            return Ok(());
        }
        match self.build_sparse(b) {
            Ok(s) => self.sparse = Some(s),
            Err(_) if b.contains(&0.0) => {
                let zeros = vec![0.0; b.len()];
                let bound = self.log_sums_with(&self.alpha, &zeros, true);
                for ((be, bj), s) in self.beta.iter_mut().zip(b).zip(&bound) {
                    if *bj == 0.0 && s.is_finite() {
                        *be = be.min(-self.eps * s);
                    }
                }
                self.sparse = Some(self.build_sparse(b)?);
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn build_sparse(&self, b: &[f64]) -> Result<(Csr, Csr)> {
        let n = self.grid.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        let inv = 1.0 / self.eps;
        let scaled = |p: &[f64]| -> Vec<f64> { p.iter().map(|x| x * inv).collect() };
        let (alpha, beta) = (scaled(&self.alpha), scaled(&self.beta));
        // largest log-entry of every row and column
        // rows are measured against the columns that currently carry mass
        let live: Vec<f64> = beta
            .iter()
            .zip(b)
            .map(|(p, b)| if *b > 0.0 { *p } else { f64::NEG_INFINITY })
            .collect();
        let row_top: Vec<f64> = self
            .tables
            .max_convolve(&live, false)
            .iter()
            .zip(&alpha)
            .map(|(m, a)| m + a + self.log_l2)
            .collect();
        let col_top: Vec<f64> = self
            .tables
            .max_convolve(&alpha, true)
            .iter()
            .zip(&beta)
            .map(|(m, b)| m + b + self.log_l2)
            .collect();
        let col_floor = col_top
            .iter()
            .fold(f64::INFINITY, |m, t| m.min(t - self.truncation));
        let beta_max = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let points = [
            self.grid.axis(0).points,
            if self.grid.dim() == 2 {
                self.grid.axis(1).points
            } else {
                1
            },
        ];
        let t1 = |i1: usize, j1: usize| {
            if self.grid.dim() == 2 {
                self.tables.entry(1, i1, j1)
            } else {
                0.0
            }
        };
        for i in 0..n {
            let ii = self.grid.multi_index(i);
            let top = alpha[i] + beta_max + self.log_l2;
            // no entry of the row below this survives
            let floor = (row_top[i] - self.truncation)
                .min(col_floor)
                .max(LOG_UNDERFLOW);
            if top > floor {
                for j0 in 0..points[0] {
                    let e0 = self.tables.entry(0, ii[0], j0);
                    if top + e0 <= floor {
                        continue;
                    }
                    for j1 in 0..points[1] {
                        let e01 = e0 + t1(ii[1], j1);
                        if top + e01 <= floor {
                            continue;
                        }
                        let j = j0 * points[1] + j1;
                        let e = alpha[i] + beta[j] + self.log_l2 + e01;
                        let keep = e > LOG_UNDERFLOW
                            && (e > row_top[i] - self.truncation
                                || e > col_top[j] - self.truncation);
                        if keep {
                            let v = e.exp();
                            if !v.is_finite() {
                                return Err(Error::NumericalBreakdown(
                                    "stabilized kernel entry overflowed".into(),
                                ));
                            }
                            cols.push(j as u32);
                            vals.push(v);
                        }
                    }
                }
            }
            offsets.push(cols.len());
        }
        let rows = Csr {
            offsets,
            cols,
            vals,
        };
        let t = rows.transpose(n);
        Ok((rows, t))
    }

    /// `out = K~ v`.
    pub(crate) fn apply(&self, v: &[f64], out: &mut [f64]) {
        match &self.sparse {
            Some((rows, _)) => rows.apply(v, out),
            None => self.log_apply(v, out, false),
        }
    }

    /// `out = K~^T v`.
    pub(crate) fn apply_t(&self, v: &[f64], out: &mut [f64]) {
        match &self.sparse {
            Some((_, cols)) => cols.apply(v, out),
            None => self.log_apply(v, out, true),
        }
    }

    fn log_apply(&self, v: &[f64], out: &mut [f64], transpose: bool) {
        let (inner, outer) = if transpose {
            (&self.alpha, &self.beta)
        } else {
            (&self.beta, &self.alpha)
        };
        let g: Vec<f64> = inner
            .iter()
            .zip(v)
            .map(|(p, v)| p / self.eps + v.ln())
            .collect();
        let lse = self.tables.log_convolve(&g, transpose);
        for ((o, l), p) in out.iter_mut().zip(lse).zip(outer) {
            *o = (p / self.eps + l + self.log_l2).exp();
        }
    }

    /// Exact `log sum_j exp((beta_j + eps log v_j - c_ij)/eps) + 2 log l`,
    /// i.e. the row log-sums without the `alpha` factor, or the column
    /// log-sums without `beta` when `transpose`.
    pub(crate) fn log_sums(&self, log_v: &[f64], transpose: bool) -> Vec<f64> {
        let inner = if transpose { &self.alpha } else { &self.beta };
        self.log_sums_with(inner, log_v, transpose)
    }

    /// [`Self::log_sums`] with an explicit inner potential.
    pub(crate) fn log_sums_with(&self, inner: &[f64], log_v: &[f64], transpose: bool) -> Vec<f64> {
        let g: Vec<f64> = inner
            .iter()
            .zip(log_v)
            .map(|(p, lv)| p / self.eps + lv)
            .collect();
        self.tables
            .log_convolve(&g, transpose)
            .into_iter()
            .map(|x| x + self.log_l2)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_kernel_by_hand() {
        let g = Grid::unit(1, 2).unwrap();
        let k = dense_kernel(&g, 0.25).unwrap();
        let e1 = (-1.0f64).exp();
        assert_relative_eq!(k.get(0, 0), 0.25, max_relative = 1e-15);
        assert_relative_eq!(k.get(0, 1), 0.25 * e1, max_relative = 1e-15);
        assert_relative_eq!(k.get(1, 0), 0.25 * e1, max_relative = 1e-15);
        let out = gibbs_apply(&g, 0.25, &[1.0, 0.0], false, false, None).unwrap();
        assert_relative_eq!(out[0], 0.25, max_relative = 1e-15);
        assert_relative_eq!(out[1], 0.25 * e1, max_relative = 1e-15);
    }

    #[test]
    fn single_cell_kernel_is_l_squared() {
        let g = Grid::new(1, 1, (0.0, 2.0)).unwrap();
        let out = gibbs_apply(&g, 0.1, &[3.0], false, false, None).unwrap();
        assert_relative_eq!(out[0], 4.0 * 3.0);
    }

    #[test]
    fn huge_eps_sums_everything() {
        let g = Grid::unit(2, 4).unwrap();
        let v: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let total: f64 = v.iter().sum();
        let out = gibbs_apply(&g, 1e14, &v, false, false, None).unwrap();
        let l2 = g.cell_volume().powi(2);
        for o in out {
            assert_relative_eq!(o, l2 * total, max_relative = 1e-12);
        }
    }

    #[test]
    fn dense_kernel_properties() {
        let g = Grid::unit(2, 3).unwrap();
        let k = dense_kernel(&g, 0.05).unwrap();
        let l2 = g.cell_volume().powi(2);
        for i in 0..g.len() {
            assert_eq!(k.get(i, i), l2);
            for j in 0..g.len() {
                assert_eq!(k.get(i, j), k.get(j, i));
                assert!(k.get(i, j) > 0.0 && k.get(i, j) <= l2);
            }
        }
        let big = Grid::unit(2, 65).unwrap();
        assert!(matches!(
            dense_kernel(&big, 0.1),
            Err(Error::DenseCapExceeded { .. })
        ));
    }

    #[test]
    fn separable_and_log_paths_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(dim, p) in &[(1usize, 2usize), (1, 17), (1, 32), (2, 5), (2, 16), (2, 32)] {
            let g = Grid::unit(dim, p).unwrap();
            for &eps in &[1.0, 0.05, 0.01] {
                let k = dense_kernel(&g, eps).unwrap();
                let v: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>()).collect();
                for transpose in [false, true] {
                    let want = if transpose {
                        k.matvec_transpose(&v)
                    } else {
                        k.matvec(&v)
                    };
                    let lin = gibbs_apply(&g, eps, &v, transpose, false, None).unwrap();
                    let log = gibbs_apply(&g, eps, &v, transpose, true, None).unwrap();
                    for i in 0..g.len() {
                        assert_relative_eq!(lin[i], want[i], max_relative = 1e-10);
                        if want[i] >= 1e-300 {
                            assert_relative_eq!(log[i].exp(), want[i], max_relative = 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn log_domain_survives_underflow() {
        let g = Grid::unit(1, 64).unwrap();
        let eps = 1e-7;
        let mut v = vec![0.0; 64];
        v[0] = 1.0;
        let log = gibbs_apply(&g, eps, &v, false, true, None).unwrap();
        // linear domain underflows to exactly zero far away, log domain stays finite
        let lin = gibbs_apply(&g, eps, &v, false, false, None).unwrap();
        assert_eq!(lin[63], 0.0);
        assert!(log[63].is_finite());
        let expected = -g.cost(0, 63) / eps + 2.0 * g.cell_volume().ln();
        assert_relative_eq!(log[63], expected, max_relative = 1e-12);
    }

    #[test]
    fn shift_acts_as_multiplicative_weight() {
        let g = Grid::unit(1, 8).unwrap();
        let v = vec![0.5; 8];
        let s: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let w: Vec<f64> = v.iter().zip(&s).map(|(v, s)| v * s.exp()).collect();
        let a = gibbs_apply(&g, 0.1, &v, false, true, Some(&s)).unwrap();
        let b = gibbs_apply(&g, 0.1, &w, false, false, None).unwrap();
        let c = gibbs_apply(&g, 0.1, &v, false, false, Some(&s)).unwrap();
        for i in 0..8 {
            assert_relative_eq!(a[i].exp(), b[i], max_relative = 1e-12);
            assert_relative_eq!(c[i], b[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn scaled_backends_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(dim, p) in &[(1usize, 24usize), (2, 6)] {
            let g = Grid::unit(dim, p).unwrap();
            let n = g.len();
            let eps = 0.02;
            let alpha: Vec<f64> = (0..n).map(|_| 0.01 * rng.gen::<f64>()).collect();
            let beta: Vec<f64> = (0..n).map(|_| -0.01 * rng.gen::<f64>()).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let s = ScaledKernel::new(
                &g,
                eps,
                KernelBackend::Sparse,
                alpha.clone(),
                beta.clone(),
                &vec![1.0; n],
                f64::INFINITY,
            )
            .unwrap();
            let l = ScaledKernel::new(
                &g,
                eps,
                KernelBackend::LogSeparable,
                alpha.clone(),
                beta.clone(),
                &vec![1.0; n],
                f64::INFINITY,
            )
            .unwrap();
            let l2 = g.cell_volume().powi(2);
            let direct: Vec<f64> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| ((alpha[i] + beta[j] - g.cost(i, j)) / eps).exp() * l2 * v[j])
                        .sum()
                })
                .collect();
            let direct_t: Vec<f64> = (0..n)
                .map(|j| {
                    (0..n)
                        .map(|i| ((alpha[i] + beta[j] - g.cost(i, j)) / eps).exp() * l2 * v[i])
                        .sum()
                })
                .collect();
            let (mut o1, mut o2) = (vec![0.0; n], vec![0.0; n]);
            s.apply(&v, &mut o1);
            l.apply(&v, &mut o2);
            for i in 0..n {
                assert_relative_eq!(o1[i], direct[i], max_relative = 1e-12);
                assert_relative_eq!(o2[i], direct[i], max_relative = 1e-10);
            }
            s.apply_t(&v, &mut o1);
            l.apply_t(&v, &mut o2);
            for i in 0..n {
                assert_relative_eq!(o1[i], direct_t[i], max_relative = 1e-12);
                assert_relative_eq!(o2[i], direct_t[i], max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn max_convolve_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(dim, p) in &[(1usize, 13usize), (2, 5)] {
            let g = Grid::unit(dim, p).unwrap();
            let n = g.len();
            let t = AxisTables::new(&g, 0.01);
            let v: Vec<f64> = (0..n).map(|_| 10.0 * rng.gen::<f64>()).collect();
            for transpose in [false, true] {
                let got = t.max_convolve(&v, transpose);
                for i in 0..n {
                    let want = (0..n)
                        .map(|j| -g.cost(i, j) / 0.01 + v[j])
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_relative_eq!(got[i], want, max_relative = 1e-13);
                }
            }
        }
    }

    #[test]
    fn truncated_kernel_tracks_full_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(dim, p) in &[(1usize, 40usize), (2, 9)] {
            let g = Grid::unit(dim, p).unwrap();
            let n = g.len();
            let eps = 2e-3;
            let alpha: Vec<f64> = (0..n).map(|_| 0.05 * rng.gen::<f64>()).collect();
            let beta: Vec<f64> = (0..n).map(|_| -0.05 * rng.gen::<f64>()).collect();
            let v: Vec<f64> = (0..n).map(|_| 0.5 + rng.gen::<f64>()).collect();
            let ones = vec![1.0; n];
            let build = |trunc| {
                ScaledKernel::new(
                    &g,
                    eps,
                    KernelBackend::Sparse,
                    alpha.clone(),
                    beta.clone(),
                    &ones,
                    trunc,
                )
                .unwrap()
            };
            let (full, cut) = (build(f64::INFINITY), build(30.0));
            let stored = |k: &ScaledKernel| k.sparse.as_ref().unwrap().0.vals.len();
            assert!(stored(&cut) < stored(&full));
            let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
            full.apply(&v, &mut a);
            cut.apply(&v, &mut b);
            for i in 0..n {
                assert_relative_eq!(a[i], b[i], max_relative = 3.0 * n as f64 * (-30.0f64).exp());
            }
            full.apply_t(&v, &mut a);
            cut.apply_t(&v, &mut b);
            for i in 0..n {
                assert_relative_eq!(a[i], b[i], max_relative = 3.0 * n as f64 * (-30.0f64).exp());
            }
        }
    }
}
