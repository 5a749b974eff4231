//! Cell-centered Cartesian grids, probability vectors living on them and the
//! squared-distance cost.
//!
//! Points are stored in row-major order: in 2-D the flat index of the cell
//! `(i0, i1)` is `i0 * p1 + i1`, so axis 0 varies slowest.

use crate::error::{check_len, Error, Result};

/// Tolerance on the total mass of a [`DiscreteMeasure`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Default number of points above which dense `p^n x p^n` objects are refused.
pub const DEFAULT_DENSE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / self.points as f64
    }

    /// Center of cell `k`.
    pub fn center(&self, k: usize) -> f64 {
        self.lower + (k as f64 + 0.5) * self.spacing()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.center(k)).collect()
    }
}

/// Equidistant cell-centered grid on a box in 1 or 2 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
}

/// Builds a grid with `points` cells per axis on `[lower, upper]^dim`.
pub fn build_grid(dim: usize, points: usize, extent: (f64, f64)) -> Result<Grid> {
    Grid::new(dim, points, extent)
}

impl Grid {
    pub fn new(dim: usize, points: usize, extent: (f64, f64)) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        Self::from_axes(&vec![(extent.0, extent.1, points); dim])
    }

    /// Unit interval or unit square.
    pub fn unit(dim: usize, points: usize) -> Result<Self> {
        Self::new(dim, points, (0.0, 1.0))
    }

    /// One `(lower, upper, points)` triple per axis.
    pub fn from_axes(axes: &[(f64, f64, usize)]) -> Result<Self> {
        if !(1..=2).contains(&axes.len()) {
            return Err(Error::UnsupportedDimension(axes.len()));
        }
        let mut out = Vec::with_capacity(axes.len());
        for &(lower, upper, points) in axes {
            if points == 0 {
                return Err(Error::InvalidGrid(
                    "an axis needs at least one point".into(),
                ));
            }
            if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
                return Err(Error::InvalidGrid(format!(
                    "extent [{lower}, {upper}] is empty or not finite"
                )));
            }
            out.push(Axis {
                lower,
                upper,
                points,
            });
        }
        Ok(Self { axes: out })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume `l` of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    /// Volume of the whole box.
    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|a| a.upper - a.lower).product()
    }

    /// Splits a flat index into per-axis indices (unused trailing slots are 0).
    pub fn multi_index(&self, i: usize) -> [usize; 2] {
        match self.axes.len() {
            1 => [i, 0],
            _ => {
                let p1 = self.axes[1].points;
                [i / p1, i % p1]
            }
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        match self.axes.len() {
            1 => idx[0],
            _ => idx[0] * self.axes[1].points + idx[1],
        }
    }

    /// Coordinates of cell `i`; only the first `dim()` entries are meaningful.
    pub fn point(&self, i: usize) -> [f64; 2] {
        let idx = self.multi_index(i);
        let mut x = [0.0; 2];
        for (a, axis) in self.axes.iter().enumerate() {
            x[a] = axis.center(idx[a]);
        }
        x
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Squared Euclidean distance between cells `i` and `j`.
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        let (x, y) = (self.point(i), self.point(j));
        (0..self.dim()).map(|a| (x[a] - y[a]).powi(2)).sum()
    }

    /// Largest squared distance between two cells.
    pub fn max_cost(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| (a.center(a.points - 1) - a.center(0)).powi(2))
            .sum()
    }
}

/// Probability vector on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    grid: Grid,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates nonnegativity and unit mass (within [`MASS_TOLERANCE`]).
    pub fn new(grid: Grid, weights: Vec<f64>) -> Result<Self> {
        check_len(grid.len(), weights.len())?;
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!(
                "weight {w} is negative or not finite"
            )));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMeasure(format!(
                "total mass {mass} differs from 1"
            )));
        }
        Ok(Self { grid, weights })
    }

    /// Rescales nonnegative weights to unit mass.
    pub fn normalized(grid: Grid, mut weights: Vec<f64>) -> Result<Self> {
        check_len(grid.len(), weights.len())?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMeasure(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let mass: f64 = weights.iter().sum();
        if mass <= 0.0 {
            return Err(Error::InvalidMeasure("zero total mass".into()));
        }
        weights.iter_mut().for_each(|w| *w /= mass);
        Ok(Self { grid, weights })
    }

    /// Samples a nonnegative density at cell centers and normalizes.
    pub fn from_density<F>(grid: Grid, density: F) -> Result<Self>
    where
        F: Fn([f64; 2]) -> f64,
    {
        let w = (0..grid.len())
            .map(|i| density(grid.point(i)).max(0.0))
            .collect();
        Self::normalized(grid, w)
    }

    pub fn uniform(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            weights: vec![1.0 / n as f64; n],
            grid,
        }
    }

    pub fn dirac(grid: Grid, i: usize) -> Result<Self> {
        if i >= grid.len() {
            return Err(Error::InvalidMeasure(format!("cell {i} outside the grid")));
        }
        let mut w = vec![0.0; grid.len()];
        w[i] = 1.0;
        Ok(Self { grid, weights: w })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Lebesgue density `r_i / l`.
    pub fn densities(&self) -> Vec<f64> {
        let l = self.grid.cell_volume();
        self.weights.iter().map(|r| r / l).collect()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (i, r) in self.weights.iter().enumerate() {
            let x = self.grid.point(i);
            m[0] += r * x[0];
            m[1] += r * x[1];
        }
        m
    }

    /// Second moment `M = sum_i r_i |x_i|^2`.
    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let x = self.grid.point(i);
                r * (x[0] * x[0] + x[1] * x[1])
            })
            .sum()
    }

    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Squared-distance cost on a grid, optionally materialized.
#[derive(Debug, Clone)]
pub struct CostOracle {
    grid: Grid,
    dense: Option<Vec<f64>>,
}

impl CostOracle {
    /// Stores the full matrix when the grid has at most `dense_cap` points.
    pub fn new(grid: Grid, dense_cap: usize) -> Self {
        let n = grid.len();
        let dense = (n <= dense_cap).then(|| {
            let mut c = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    c[i * n + j] = grid.cost(i, j);
                }
            }
            c
        });
        Self { grid, dense }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    pub fn cost(&self, i: usize, j: usize) -> f64 {
        match &self.dense {
            Some(c) => c[i * self.grid.len() + j],
            None => self.grid.cost(i, j),
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(rows: usize, cols: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in s.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        s
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matvec_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate().take(self.rows) {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// Entrywise L1 distance.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn four_cells_on_unit_interval() {
        let g = build_grid(1, 4, (0.0, 1.0)).unwrap();
        let xs: Vec<f64> = (0..4).map(|i| g.point(i)[0]).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(g.cell_volume(), 0.25);
    }

    #[test]
    fn fine_grid_cell_volume() {
        let g = build_grid(1, 1024, (0.0, 1.0)).unwrap();
        assert_eq!(g.cell_volume(), 1.0 / 1024.0);
        assert_eq!(g.len(), 1024);
    }

    #[test]
    fn square_grid_has_product_structure() {
        let g = build_grid(2, 3, (0.0, 1.0)).unwrap();
        assert_eq!(g.len(), 9);
        assert_relative_eq!(g.cell_volume(), 1.0 / 9.0, max_relative = 1e-15);
        assert_relative_eq!(g.len() as f64 * g.cell_volume(), 1.0, max_relative = 1e-15);
        // row-major: axis 0 slowest
        assert_eq!(g.multi_index(5), [1, 2]);
        assert_eq!(g.flat_index([1, 2]), 5);
        let x = g.point(5);
        assert_relative_eq!(x[0], 0.5);
        assert_relative_eq!(x[1], 5.0 / 6.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(
            build_grid(3, 4, (0.0, 1.0)),
            Err(Error::UnsupportedDimension(3))
        ));
        assert!(matches!(
            build_grid(1, 4, (1.0, 1.0)),
            Err(Error::InvalidGrid(_))
        ));
        assert!(matches!(
            build_grid(1, 4, (1.0, 0.0)),
            Err(Error::InvalidGrid(_))
        ));
        assert!(matches!(
            build_grid(1, 0, (0.0, 1.0)),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn cost_is_symmetric_and_vanishes_on_diagonal() {
        let g = build_grid(2, 4, (0.0, 1.0)).unwrap();
        let c = CostOracle::new(g.clone(), DEFAULT_DENSE_CAP);
        assert!(c.is_dense());
        for i in 0..g.len() {
            assert_eq!(c.cost(i, i), 0.0);
            for j in 0..g.len() {
                assert_eq!(c.cost(i, j), c.cost(j, i));
                assert!(c.cost(i, j) >= 0.0);
                assert_eq!(c.cost(i, j), g.cost(i, j));
            }
        }
        assert!(!CostOracle::new(g, 4).is_dense());
    }

    #[test]
    fn measure_validation() {
        let g = Grid::unit(1, 2).unwrap();
        assert!(DiscreteMeasure::new(g.clone(), vec![0.5, 0.5]).is_ok());
        assert!(DiscreteMeasure::new(g.clone(), vec![0.6, 0.5]).is_err());
        assert!(DiscreteMeasure::new(g.clone(), vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(g.clone(), vec![1.0]).is_err());
        let m = DiscreteMeasure::normalized(g, vec![3.0, 1.0]).unwrap();
        assert_eq!(m.weights(), &[0.75, 0.25]);
        assert_eq!(m.densities(), vec![1.5, 0.5]);
    }
}
