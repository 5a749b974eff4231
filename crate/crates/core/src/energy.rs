//! Free energies `F(rho) = sum v_i r_i + sum u(r_i / l) l`: internal energy
//! laws, potentials and the first variation along a vector field.

use crate::error::{check_len, Error, Result};
use crate::grid::{DiscreteMeasure, Grid};

/// Densities above `1 + CAPACITY_TOLERANCE` violate the congestion constraint.
pub const CAPACITY_TOLERANCE: f64 = 1e-9;

/// Convex internal energy tabulated at knots `s_0 = 0 < s_1 < ...` and
/// interpolated linearly, extended beyond the last knot with the last slope.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedEnergy {
    s: Vec<f64>,
    u: Vec<f64>,
}

impl TabulatedEnergy {
    pub fn new(s: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        check_len(s.len(), u.len())?;
        if s.len() < 2 {
            return Err(Error::InvalidParameter(
                "a tabulated energy needs two knots".into(),
            ));
        }
        if s[0] != 0.0 || u[0] != 0.0 {
            return Err(Error::InvalidParameter(
                "tabulated energy must start at u(0) = 0".into(),
            ));
        }
        if s.windows(2).any(|w| !(w[1] > w[0])) || u.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "knots must be increasing and finite".into(),
            ));
        }
        let t = Self { s, u };
        let slopes: Vec<f64> = (0..t.s.len() - 1).map(|k| t.slope(k)).collect();
        if slopes
            .windows(2)
            .any(|w| w[1] < w[0] - 1e-12 * w[0].abs().max(1.0))
        {
            return Err(Error::InvalidParameter(
                "tabulated energy is not convex".into(),
            ));
        }
        Ok(t)
    }

    fn slope(&self, k: usize) -> f64 {
        (self.u[k + 1] - self.u[k]) / (self.s[k + 1] - self.s[k])
    }

    fn segment(&self, s: f64) -> usize {
        let k = self.s.partition_point(|x| *x <= s);
        k.saturating_sub(1).min(self.s.len() - 2)
    }

    pub fn u(&self, s: f64) -> f64 {
        let k = self.segment(s);
        self.u[k] + self.slope(k) * (s - self.s[k])
    }

    /// Right derivative.
    pub fn u_prime(&self, s: f64) -> f64 {
        self.slope(self.segment(s))
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.s, &self.u)
    }
}

/// Internal energy law `u(s)` of the Lebesgue density `s`.
#[derive(Debug, Clone, PartialEq)]
pub enum EnergyModel {
    /// `u(s) = s log s - s`.
    Heat,
    /// `u(s) = s^m / (m - 1)`, `m > 1`.
    PorousMedia {
        m: f64,
    },
    /// `u = 0` on `[0, 1]`, `+inf` above.
    Congestion,
    Custom(TabulatedEnergy),
}

impl EnergyModel {
    pub fn porous(m: f64) -> Result<Self> {
        if m > 1.0 && m.is_finite() {
            Ok(Self::PorousMedia { m })
        } else {
            Err(Error::InvalidParameter(format!(
                "porous exponent must exceed 1, got {m}"
            )))
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Heat => "heat".into(),
            Self::PorousMedia { m } => format!("porous(m={m})"),
            Self::Congestion => "congestion".into(),
            Self::Custom(_) => "custom".into(),
        }
    }

    pub fn u(&self, s: f64) -> f64 {
        match self {
            Self::Heat => {
                if s > 0.0 {
                    s * s.ln() - s
                } else {
                    0.0
                }
            }
            Self::PorousMedia { m } => s.powf(*m) / (m - 1.0),
            Self::Congestion => {
                if s <= 1.0 + CAPACITY_TOLERANCE {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::Custom(t) => t.u(s),
        }
    }

    pub fn u_prime(&self, s: f64) -> f64 {
        match self {
            Self::Heat => s.ln(),
            Self::PorousMedia { m } => m * s.powf(m - 1.0) / (m - 1.0),
            Self::Congestion => {
                if s <= 1.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::Custom(t) => t.u_prime(s),
        }
    }

    pub fn has_pressure(&self) -> bool {
        !matches!(self, Self::Congestion)
    }
}

/// `p(s) = s u'(s) - u(s)`.
pub fn pressure(model: &EnergyModel, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "density must be nonnegative, got {s}"
        )));
    }
    match model {
        EnergyModel::Heat => Ok(s),
        EnergyModel::PorousMedia { m } => Ok(s.powf(*m)),
        EnergyModel::Congestion => Err(Error::NoPressure),
        EnergyModel::Custom(t) => Ok(if s > 0.0 {
            s * t.u_prime(s) - t.u(s)
        } else {
            0.0
        }),
    }
}

/// Potential `v >= 0` sampled at the cell centers, with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    grid: Grid,
    values: Vec<f64>,
    gradients: Vec<[f64; 2]>,
}

impl PotentialField {
    pub fn zero(grid: &Grid) -> Self {
        let n = grid.len();
        Self {
            grid: grid.clone(),
            values: vec![0.0; n],
            gradients: vec![[0.0; 2]; n],
        }
    }

    pub fn from_fn<V, G>(grid: &Grid, v: V, grad: G) -> Result<Self>
    where
        V: Fn([f64; 2]) -> f64,
        G: Fn([f64; 2]) -> [f64; 2],
    {
        let pts = grid.points();
        let values = pts.iter().map(|x| v(*x)).collect();
        let gradients = pts.iter().map(|x| grad(*x)).collect();
        Self::checked(grid, values, gradients)
    }

    /// Gradient by centered differences, one-sided on the boundary.
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        check_len(grid.len(), values.len())?;
        let gradients = gradient(grid, &values);
        Self::checked(grid, values, gradients)
    }

    /// `strength |x - center|^2` with the same center on every axis.
    pub fn quadratic_well(grid: &Grid, center: f64, strength: f64) -> Result<Self> {
        let dim = grid.dim();
        Self::from_fn(
            grid,
            |x| strength * (0..dim).map(|a| (x[a] - center).powi(2)).sum::<f64>(),
            |x| {
                let mut g = [0.0; 2];
                for a in 0..dim {
                    g[a] = 2.0 * strength * (x[a] - center);
                }
                g
            },
        )
    }

    /// `slope max(0, x_0 - threshold)` along the first axis.
    pub fn ramp(grid: &Grid, threshold: f64, slope: f64) -> Result<Self> {
        Self::from_fn(
            grid,
            |x| slope * (x[0] - threshold).max(0.0),
            |x| [if x[0] > threshold { slope } else { 0.0 }, 0.0],
        )
    }

    fn checked(grid: &Grid, values: Vec<f64>, gradients: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "potential values must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
            gradients,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradients(&self) -> &[[f64; 2]] {
        &self.gradients
    }

    /// Largest gradient norm, a Lipschitz estimate.
    pub fn lipschitz(&self) -> f64 {
        self.gradients
            .iter()
            .map(|g| g[0].hypot(g[1]))
            .fold(0.0, f64::max)
    }
}

fn axis_neighbors(grid: &Grid, i: usize, a: usize) -> (usize, usize, f64) {
    let idx = grid.multi_index(i);
    let p = grid.axis(a).points;
    let h = grid.axis(a).spacing();
    if p == 1 {
        return (i, i, f64::INFINITY);
    }
    let (lo, hi) = (idx[a].saturating_sub(1), (idx[a] + 1).min(p - 1));
    let mut l = idx;
    let mut r = idx;
    l[a] = lo;
    r[a] = hi;
    (grid.flat_index(l), grid.flat_index(r), (hi - lo) as f64 * h)
}

/// Centered differences (one-sided on the boundary); zero on a single-cell axis.
pub fn gradient(grid: &Grid, f: &[f64]) -> Vec<[f64; 2]> {
    (0..grid.len())
        .map(|i| {
            let mut g = [0.0; 2];
            for (a, ga) in g.iter_mut().enumerate().take(grid.dim()) {
                let (l, r, d) = axis_neighbors(grid, i, a);
                *ga = (f[r] - f[l]) / d;
            }
            g
        })
        .collect()
}

/// Discrete divergence of a vector field, same stencil as [`gradient`].
pub fn divergence(grid: &Grid, w: &[[f64; 2]]) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            (0..grid.dim())
                .map(|a| {
                    let (l, r, d) = axis_neighbors(grid, i, a);
                    (w[r][a] - w[l][a]) / d
                })
                .sum()
        })
        .collect()
}

/// `F(rho) = sum v_i r_i + sum u(r_i / l) l`; `+inf` for a violated
/// congestion constraint.
pub fn free_energy(
    model: &EnergyModel,
    pot: &PotentialField,
    rho: &DiscreteMeasure,
) -> Result<f64> {
    if pot.grid() != rho.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(free_energy_weights(
        model,
        pot,
        rho.weights(),
        rho.grid().cell_volume(),
    ))
}

pub(crate) fn free_energy_weights(
    model: &EnergyModel,
    pot: &PotentialField,
    r: &[f64],
    l: f64,
) -> f64 {
    let potential: f64 = pot.values().iter().zip(r).map(|(v, r)| v * r).sum();
    let internal: f64 = r.iter().map(|r| model.u(r / l) * l).sum();
    potential + internal
}

/// First variation of `F` at `rho` along `w`:
/// `-sum p(r_i / l) (div w)_i l + sum <grad v_i, w_i> r_i`.
pub fn first_variation(
    model: &EnergyModel,
    pot: &PotentialField,
    rho: &DiscreteMeasure,
    w: &[[f64; 2]],
) -> Result<f64> {
    if !model.has_pressure() {
        return Err(Error::NoPressure);
    }
    if pot.grid() != rho.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = rho.grid();
    check_len(grid.len(), w.len())?;
    let l = grid.cell_volume();
    let div = divergence(grid, w);
    let mut internal = 0.0;
    let mut drift = 0.0;
    for i in 0..grid.len() {
        let r = rho.weights()[i];
        internal -= pressure(model, r / l)? * div[i] * l;
        let g = pot.gradients()[i];
        drift += (g[0] * w[i][0] + g[1] * w[i][1]) * r;
    }
    Ok(internal + drift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pressure_values() {
        assert_eq!(pressure(&EnergyModel::Heat, 2.0).unwrap(), 2.0);
        assert_eq!(
            pressure(&EnergyModel::porous(2.0).unwrap(), 3.0).unwrap(),
            9.0
        );
        assert_eq!(pressure(&EnergyModel::Heat, 0.0).unwrap(), 0.0);
        assert_eq!(
            pressure(&EnergyModel::porous(3.0).unwrap(), 0.0).unwrap(),
            0.0
        );
        assert!(matches!(
            pressure(&EnergyModel::Congestion, 0.5),
            Err(Error::NoPressure)
        ));
    }

    #[test]
    fn pressure_matches_su_prime_minus_u() {
        for model in [
            EnergyModel::Heat,
            EnergyModel::porous(2.0).unwrap(),
            EnergyModel::porous(7.5).unwrap(),
        ] {
            for k in 0..40 {
                let s = 10f64.powf(-4.0 + 0.2 * k as f64);
                let want = s * model.u_prime(s) - model.u(s);
                assert_relative_eq!(pressure(&model, s).unwrap(), want, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn free_energy_of_uniform_measures() {
        let g = Grid::unit(1, 16).unwrap();
        let pot = PotentialField::zero(&g);
        let rho = DiscreteMeasure::uniform(g.clone());
        assert_relative_eq!(
            free_energy(&EnergyModel::Heat, &pot, &rho).unwrap(),
            -1.0,
            max_relative = 1e-14
        );
        let porous = EnergyModel::porous(2.0).unwrap();
        assert_relative_eq!(
            free_energy(&porous, &pot, &rho).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        assert_eq!(
            free_energy(&EnergyModel::Congestion, &pot, &rho).unwrap(),
            0.0
        );
        let d = DiscreteMeasure::dirac(g, 0).unwrap();
        assert_eq!(
            free_energy(&EnergyModel::Congestion, &pot, &d).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn potentials() {
        let g = Grid::unit(1, 4).unwrap();
        let r = PotentialField::ramp(&g, 0.5, 100.0).unwrap();
        assert_eq!(r.values()[..2], [0.0, 0.0]);
        assert_relative_eq!(r.values()[3], 100.0 * 0.375);
        assert_eq!(r.lipschitz(), 100.0);
        let g2 = Grid::unit(2, 4).unwrap();
        let q = PotentialField::quadratic_well(&g2, 0.5, 1e3).unwrap();
        assert_relative_eq!(q.values()[0], 1e3 * 2.0 * 0.375f64.powi(2));
        assert!(PotentialField::from_values(&g, vec![1.0, -1.0, 0.0, 0.0]).is_err());
        // finite differences of a linear function are exact
        let lin = PotentialField::from_values(&g, vec![0.125, 0.375, 0.625, 0.875]).unwrap();
        for gr in lin.gradients() {
            assert_relative_eq!(gr[0], 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn tabulated_energy() {
        let t = TabulatedEnergy::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 2.0]).unwrap();
        assert_relative_eq!(t.u(0.5), 0.25);
        assert_relative_eq!(t.u(3.0), 3.5);
        assert_eq!(t.u_prime(1.5), 1.5);
        assert!(TabulatedEnergy::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 2.5]).is_err());
        assert!(TabulatedEnergy::new(vec![0.0, 1.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn first_variation_trivial_cases() {
        let g = Grid::unit(1, 32).unwrap();
        let pot = PotentialField::zero(&g);
        let rho = DiscreteMeasure::uniform(g.clone());
        let zero = vec![[0.0; 2]; 32];
        assert_eq!(
            first_variation(&EnergyModel::Heat, &pot, &rho, &zero).unwrap(),
            0.0
        );
        // compactly supported field: its centered divergence sums to zero
        let w: Vec<[f64; 2]> = g
            .points()
            .iter()
            .map(|x| [((x[0] - 0.5) * 8.0).cos().max(0.0).powi(3), 0.0])
            .collect();
        let d = first_variation(&EnergyModel::Heat, &pot, &rho, &w).unwrap();
        assert!(d.abs() < 1e-12);
        assert!(matches!(
            first_variation(&EnergyModel::Congestion, &pot, &rho, &w),
            Err(Error::NoPressure)
        ));
    }
}
