//! Closed-form solutions of the heat and porous medium equations and L1
//! error measurements of discrete trajectories against them.

use rayon::prelude::*;

use crate::energy::{EnergyModel, PotentialField};
use crate::error::{Error, Result};
use crate::grid::{DiscreteMeasure, Grid};
use crate::jko::{run_flow, schedule_check, FlowOptions, FlowParams, FlowTrajectory};

/// Default time shift of the analytic profiles.
pub const DEFAULT_T0: f64 = 1e-3;
/// Default center of the analytic profiles.
pub const DEFAULT_X0: f64 = 0.5;

/// Trapezoidal nodes used to normalize the Barenblatt profile.
const QUADRATURE_NODES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticSolution {
    /// `(4 pi (t + t0))^(-1/2) exp(-(x - x0)^2 / (4 (t + t0)))`, 1-D.
    GaussianHeat { t0: f64, x0: f64 },
    /// `(t + t0)^(-alpha) (C - beta |x - x0|^2 (t + t0)^(-2 alpha / n))_+^(1/(m-1))`.
    Barenblatt {
        m: f64,
        n: usize,
        t0: f64,
        x0: f64,
        c: f64,
    },
}

/// A solution sampled on a grid.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Cell values `rho_sol(x_i) l`, renormalized to unit mass.
    pub measure: DiscreteMeasure,
    /// `1 - sum_i rho_sol(x_i) l` before renormalization.
    pub truncated_mass: f64,
}

impl AnalyticSolution {
    pub fn gaussian(t0: f64, x0: f64) -> Result<Self> {
        if !(t0 > 0.0 && x0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gaussian needs t0 > 0, got {t0}"
            )));
        }
        Ok(Self::GaussianHeat { t0, x0 })
    }

    /// Barenblatt profile with unit mass in dimension `n`.
    pub fn barenblatt(m: f64, n: usize, t0: f64, x0: f64) -> Result<Self> {
        if !(m > 1.0 && m.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "barenblatt needs m > 1, got {m}"
            )));
        }
        if !(1..=2).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        if !(t0 > 0.0 && x0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "barenblatt needs t0 > 0, got {t0}"
            )));
        }
        let c = barenblatt_constant(m, n);
        Ok(Self::Barenblatt { m, n, t0, x0, c })
    }

    /// The matching solution for a model without drift.
    pub fn for_model(model: &EnergyModel, n: usize, t0: f64, x0: f64) -> Result<Self> {
        match model {
            EnergyModel::Heat if n == 1 => Self::gaussian(t0, x0),
            EnergyModel::PorousMedia { m } => Self::barenblatt(*m, n, t0, x0),
            _ => Err(Error::InvalidParameter(format!(
                "no analytic solution for {} in dimension {n}",
                model.name()
            ))),
        }
    }

    fn shifted(&self, t: f64) -> Result<f64> {
        let t0 = match self {
            Self::GaussianHeat { t0, .. } | Self::Barenblatt { t0, .. } => *t0,
        };
        let s = t + t0;
        if s > 0.0 {
            Ok(s)
        } else {
            Err(Error::InvalidParameter(format!(
                "t + t0 must be positive, got {s}"
            )))
        }
    }

    /// Lebesgue density at time `t`.
    pub fn density(&self, t: f64, x: [f64; 2]) -> Result<f64> {
        let s = self.shifted(t)?;
        Ok(match *self {
            Self::GaussianHeat { x0, .. } => {
                (4.0 * std::f64::consts::PI * s).powf(-0.5)
                    * (-(x[0] - x0).powi(2) / (4.0 * s)).exp()
            }
            Self::Barenblatt { m, n, x0, c, .. } => {
                let (alpha, beta) = barenblatt_exponents(m, n);
                let r2: f64 = (0..n).map(|a| (x[a] - x0).powi(2)).sum();
                let bracket = c - beta * r2 * s.powf(-2.0 * alpha / n as f64);
                if bracket > 0.0 {
                    s.powf(-alpha) * bracket.powf(1.0 / (m - 1.0))
                } else {
                    0.0
                }
            }
        })
    }

    /// Radius of the support at time `t` (infinite for the Gaussian).
    pub fn support_radius(&self, t: f64) -> Result<f64> {
        let s = self.shifted(t)?;
        Ok(match *self {
            Self::GaussianHeat { .. } => f64::INFINITY,
            Self::Barenblatt { m, n, c, .. } => {
                let (alpha, beta) = barenblatt_exponents(m, n);
                (c / beta).sqrt() * s.powf(alpha / n as f64)
            }
        })
    }

    pub fn center(&self) -> f64 {
        match *self {
            Self::GaussianHeat { x0, .. } | Self::Barenblatt { x0, .. } => x0,
        }
    }

    /// Samples at the cell centers of `grid`, scales by `l` and renormalizes.
    pub fn sample(&self, t: f64, grid: &Grid) -> Result<Sample> {
        if let Self::GaussianHeat { .. } = self {
            if grid.dim() != 1 {
                return Err(Error::UnsupportedDimension(grid.dim()));
            }
        }
        if let Self::Barenblatt { n, .. } = self {
            if grid.dim() != *n {
                return Err(Error::UnsupportedDimension(grid.dim()));
            }
        }
        let l = grid.cell_volume();
        let raw = grid
            .points()
            .into_iter()
            .map(|x| self.density(t, x).map(|d| d * l))
            .collect::<Result<Vec<f64>>>()?;
        let mass: f64 = raw.iter().sum();
        Ok(Sample {
            truncated_mass: 1.0 - mass,
            measure: DiscreteMeasure::normalized(grid.clone(), raw)?,
        })
    }
}

/// `alpha = n / (n (m - 1) + 2)`, `beta = (m - 1) alpha / (2 m n)`.
pub fn barenblatt_exponents(m: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    let alpha = n / (n * (m - 1.0) + 2.0);
    (alpha, (m - 1.0) * alpha / (2.0 * m * n))
}

/// Mass of `(C - beta |y|^2)_+^(1/(m-1))` by the trapezoidal rule after
/// `|y| = R sin(theta)`, which removes the endpoint singularity of the
/// support boundary.
pub fn barenblatt_mass(m: f64, n: usize, c: f64) -> f64 {
    let (_, beta) = barenblatt_exponents(m, n);
    let k = 1.0 / (m - 1.0);
    let r = (c / beta).sqrt();
    let h = std::f64::consts::FRAC_PI_2 / QUADRATURE_NODES as f64;
    // integrand in theta over [0, pi/2]; (C - beta R^2 sin^2)^k = C^k cos^(2k)
    let f = |theta: f64| {
        let (s, co) = theta.sin_cos();
        let body = c.powf(k) * co.powf(2.0 * k) * r * co;
        match n {
            1 => 2.0 * body,
            _ => 2.0 * std::f64::consts::PI * r * s * body,
        }
    };
    let mut sum = 0.5 * (f(0.0) + f(std::f64::consts::FRAC_PI_2));
    for i in 1..QUADRATURE_NODES {
        sum += f(i as f64 * h);
    }
    sum * h
}

/// Normalization constant giving unit mass, by bisection.
pub fn barenblatt_constant(m: f64, n: usize) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while barenblatt_mass(m, n, hi) < 1.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if barenblatt_mass(m, n, mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn gaussian_solution(t: f64, grid: &Grid, t0: f64, x0: f64) -> Result<DiscreteMeasure> {
    Ok(AnalyticSolution::gaussian(t0, x0)?.sample(t, grid)?.measure)
}

pub fn barenblatt_solution(
    t: f64,
    grid: &Grid,
    m: f64,
    t0: f64,
    x0: f64,
) -> Result<DiscreteMeasure> {
    Ok(AnalyticSolution::barenblatt(m, grid.dim(), t0, x0)?
        .sample(t, grid)?
        .measure)
}

/// `sum_i |rho_i - sol_i|` between a measure and the renormalized sample,
/// i.e. the L1 distance of the Lebesgue densities.
pub fn l1_error_at(rho: &DiscreteMeasure, sol: &AnalyticSolution, t: f64) -> Result<f64> {
    let s = sol.sample(t, rho.grid())?;
    rho.l1_distance(&s.measure)
}

/// L1 error of the interpolated trajectory at time `t`.
pub fn l1_slice_error(traj: &FlowTrajectory, sol: &AnalyticSolution, t: f64) -> Result<f64> {
    l1_error_at(traj.interpolate(t)?, sol, t)
}

#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub eps: f64,
    pub tau: f64,
    pub points: usize,
    pub model: String,
    pub times: Vec<f64>,
    pub slice_errors: Vec<f64>,
    /// `sum_k e(k tau) tau` over all frames.
    pub total: f64,
}

pub fn error_report(
    traj: &FlowTrajectory,
    sol: &AnalyticSolution,
    model: &EnergyModel,
    times: &[f64],
) -> Result<ErrorReport> {
    let slice_errors = times
        .iter()
        .map(|t| l1_slice_error(traj, sol, *t))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorReport {
        eps: traj.params.eps,
        tau: traj.tau(),
        points: traj.measures[0].grid().axis(0).points,
        model: model.name(),
        times: times.to_vec(),
        slice_errors,
        total: total_error(traj, sol)?,
    })
}

/// `sum_k e(t_k) tau` over every frame of the trajectory.
pub fn total_error(traj: &FlowTrajectory, sol: &AnalyticSolution) -> Result<f64> {
    let mut total = 0.0;
    for (k, rho) in traj.measures.iter().enumerate() {
        total += l1_error_at(rho, sol, traj.time(k))? * traj.tau();
    }
    Ok(total)
}

/// One cell of an `(eps, tau)` error table.
#[derive(Debug, Clone)]
pub struct ErrorCell {
    pub eps: f64,
    pub tau: f64,
    /// `NaN` when the run failed.
    pub total: f64,
    pub schedule_ok: bool,
    pub steps: usize,
    pub failure: Option<String>,
}

/// Number of measures covering `[0, horizon]` at step `tau`.
pub fn steps_for(horizon: f64, tau: f64) -> usize {
    (horizon / tau).round() as usize + 1
}

/// Total L1 errors of the flows started from the analytic profile at `t = 0`,
/// for every `(eps, tau)` pair; runs execute in parallel.
pub fn error_table(
    model: &EnergyModel,
    grid: &Grid,
    sol: &AnalyticSolution,
    eps_list: &[f64],
    tau_list: &[f64],
    horizon: f64,
    schedule_constant: f64,
    opts: &FlowOptions,
) -> Result<Vec<ErrorCell>> {
    let rho0 = sol.sample(0.0, grid)?.measure;
    let pot = PotentialField::zero(grid);
    let pairs: Vec<(f64, f64)> = tau_list
        .iter()
        .flat_map(|&tau| eps_list.iter().map(move |&eps| (eps, tau)))
        .collect();
    Ok(pairs
        .par_iter()
        .map(|&(eps, tau)| {
            let steps = steps_for(horizon, tau);
            let schedule_ok = schedule_check(eps, tau, schedule_constant).unwrap_or(false);
            let run = || -> Result<f64> {
                let mut params = FlowParams::new(eps, tau, steps)?;
                params.schedule_constant = schedule_constant;
                let traj = run_flow(&rho0, model, &pot, &params, opts)?;
                if let Some(e) = traj.error {
                    return Err(e);
                }
                total_error(&traj, sol)
            };
            let (total, failure) = match run() {
                Ok(v) => (v, None),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            ErrorCell {
                eps,
                tau,
                total,
                schedule_ok,
                steps,
                failure,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn porous_exponents() {
        let (a, b) = barenblatt_exponents(2.0, 1);
        assert_relative_eq!(a, 1.0 / 3.0);
        assert_relative_eq!(b, 1.0 / 12.0);
    }

    #[test]
    fn constant_reproduces_unit_mass() {
        for (m, n) in [(2.0, 1), (3.0, 1), (10.0, 1), (2.0, 2), (1.5, 2)] {
            let c = barenblatt_constant(m, n);
            assert!(
                (barenblatt_mass(m, n, c) - 1.0).abs() < 1e-10,
                "m={m} n={n}"
            );
        }
        // m = 2, n = 1: mass = (4/3) C^(3/2) / sqrt(beta)
        let want = (0.75 / 12f64.sqrt()).powf(2.0 / 3.0);
        assert_relative_eq!(barenblatt_constant(2.0, 1), want, max_relative = 1e-9);
    }

    #[test]
    fn gaussian_peak_and_symmetry() {
        let sol = AnalyticSolution::gaussian(1e-3, 0.5).unwrap();
        let t = 0.01;
        let peak = sol.density(t, [0.5, 0.0]).unwrap();
        assert_relative_eq!(peak, (4.0 * std::f64::consts::PI * (t + 1e-3)).powf(-0.5));
        for d in [0.01, 0.1, 0.3] {
            assert_relative_eq!(
                sol.density(t, [0.5 + d, 0.0]).unwrap(),
                sol.density(t, [0.5 - d, 0.0]).unwrap(),
                max_relative = 1e-12
            );
        }
        assert!(sol.density(-2e-3, [0.5, 0.0]).is_err());
    }

    #[test]
    fn barenblatt_support_is_exact() {
        let sol = AnalyticSolution::barenblatt(2.0, 1, 1e-3, 0.5).unwrap();
        let t = 5e-3;
        let r = sol.support_radius(t).unwrap();
        assert!(sol.density(t, [0.5 + 0.999 * r, 0.0]).unwrap() > 0.0);
        assert_eq!(sol.density(t, [0.5 + 1.001 * r, 0.0]).unwrap(), 0.0);
        assert!(AnalyticSolution::barenblatt(1.0, 1, 1e-3, 0.5).is_err());
    }

    #[test]
    fn sampled_variance_of_gaussian() {
        let g = Grid::unit(1, 1024).unwrap();
        let t0 = 1e-3;
        for t in [0.0, 2e-3, 5e-3] {
            let m = gaussian_solution(t, &g, t0, 0.5).unwrap();
            let mean = m.mean()[0];
            let var: f64 = m
                .weights()
                .iter()
                .enumerate()
                .map(|(i, r)| r * (g.point(i)[0] - mean).powi(2))
                .sum();
            assert_relative_eq!(var, 2.0 * (t + t0), max_relative = 1e-2);
        }
    }
}
