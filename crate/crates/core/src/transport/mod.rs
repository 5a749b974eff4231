//! Entropy-regularized optimal transport between two fixed marginals.

pub mod block;
pub mod exact_1d;
pub(crate) mod scaling;
pub mod sweep;

pub use block::block_approximation;
pub use exact_1d::{exact_w2_1d, monotone_coupling};
pub use sweep::{gamma_sweep, GammaSweepReport, GammaSweepRow};

use crate::error::{check_eps, Error, Result};
use crate::grid::{DenseMatrix, DiscreteMeasure, Grid, DEFAULT_DENSE_CAP};
use crate::kernel::{AxisTables, KernelBackend};
use scaling::Engine;

#[derive(Debug, Clone, Copy)]
pub struct SinkhornOptions {
    /// L1 tolerance on the marginals.
    pub tol: f64,
    pub max_iter: usize,
    /// Scalings beyond `exp(absorb_threshold)` are folded into the potentials.
    pub absorb_threshold: f64,
    pub check_every: usize,
    /// `false` runs the textbook iteration without absorption or fallback.
    pub stabilized: bool,
    /// Kernel storage; chosen from `dense_cap` when `None`.
    pub backend: Option<KernelBackend>,
    pub dense_cap: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
            absorb_threshold: 50.0,
            check_every: 10,
            stabilized: true,
            backend: None,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl SinkhornOptions {
    pub fn naive() -> Self {
        Self {
            stabilized: false,
            ..Self::default()
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub(crate) fn backend_for(&self, grid: &Grid) -> KernelBackend {
        self.backend
            .unwrap_or_else(|| KernelBackend::auto(grid, self.dense_cap))
    }
}

/// Scalings and absorbed potentials at the end of a scaling loop.
///
/// The total dual potentials are `alpha + eps log a` and `beta + eps log b`.
#[derive(Debug, Clone)]
pub struct ScalingState {
    pub eps: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub iterations: usize,
    /// L1 residual of the first marginal.
    pub residual: f64,
    /// L1 residual of the second marginal.
    pub col_residual: f64,
    pub converged: bool,
    pub absorptions: usize,
    pub fallbacks: usize,
}

impl ScalingState {
    /// Total log-potentials `(f, g)`; `-inf` where a scaling is zero.
    pub fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let total = |p: &[f64], s: &[f64]| -> Vec<f64> {
            p.iter()
                .zip(s)
                .map(|(p, s)| {
                    if *s > 0.0 {
                        p + self.eps * s.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        };
        (total(&self.alpha, &self.a), total(&self.beta, &self.b))
    }
}

/// Plan `gamma_ij = exp((f_i + g_j - c_ij) / eps) l^2` stored through its
/// total log-potentials; all reductions run in the log domain.
#[derive(Debug, Clone)]
pub struct FactorizedPlan {
    grid: Grid,
    eps: f64,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl FactorizedPlan {
    pub fn new(grid: Grid, eps: f64, f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        check_eps(eps)?;
        crate::error::check_len(grid.len(), f.len())?;
        crate::error::check_len(grid.len(), g.len())?;
        Ok(Self { grid, eps, f, g })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn potentials(&self) -> (&[f64], &[f64]) {
        (&self.f, &self.g)
    }

    fn log_l2(&self) -> f64 {
        2.0 * self.grid.cell_volume().ln()
    }

    fn scaled(&self, p: &[f64]) -> Vec<f64> {
        p.iter().map(|x| x / self.eps).collect()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        ((self.f[i] + self.g[j] - self.grid.cost(i, j)) / self.eps + self.log_l2()).exp()
    }

    /// `gamma 1`.
    pub fn row_marginal(&self) -> Vec<f64> {
        let t = AxisTables::new(&self.grid, self.eps);
        let lse = t.log_convolve(&self.scaled(&self.g), false);
        self.f
            .iter()
            .zip(lse)
            .map(|(f, l)| (f / self.eps + l + self.log_l2()).exp())
            .collect()
    }

    /// `gamma^T 1`.
    pub fn col_marginal(&self) -> Vec<f64> {
        let t = AxisTables::new(&self.grid, self.eps);
        let lse = t.log_convolve(&self.scaled(&self.f), true);
        self.g
            .iter()
            .zip(lse)
            .map(|(g, l)| (g / self.eps + l + self.log_l2()).exp())
            .collect()
    }

    /// `(c, gamma)`, one axis at a time.
    pub fn cost(&self) -> f64 {
        let gs = self.scaled(&self.g);
        (0..self.grid.dim())
            .map(|a| {
                let t = AxisTables::with_weight(&self.grid, self.eps, Some(a));
                let lse = t.log_convolve(&gs, false);
                self.f
                    .iter()
                    .zip(lse)
                    .map(|(f, l)| (f / self.eps + l + self.log_l2()).exp())
                    .sum::<f64>()
            })
            .sum()
    }

    /// `(c, gamma) + eps H_2(gamma) = <f, gamma 1> + <g, gamma^T 1>`.
    pub fn value(&self) -> f64 {
        dot_finite(&self.f, &self.row_marginal()) + dot_finite(&self.g, &self.col_marginal())
    }

    /// `H_2(gamma) = sum gamma log(gamma / l^2)`.
    pub fn entropy(&self) -> f64 {
        (self.value() - self.cost()) / self.eps
    }

    pub fn to_dense(&self, cap: usize) -> Result<DenseMatrix> {
        let n = self.grid.len();
        if n > cap {
            return Err(Error::DenseCapExceeded { cap, points: n });
        }
        Ok(DenseMatrix::from_fn(n, n, |i, j| self.entry(i, j)))
    }
}

fn dot_finite(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(_, m)| **m > 0.0)
        .map(|(p, m)| p * m)
        .sum()
}

/// A coupling between two measures on one grid.
#[derive(Debug, Clone)]
pub enum TransportPlan {
    Factorized(FactorizedPlan),
    Dense { grid: Grid, gamma: DenseMatrix },
}

impl TransportPlan {
    pub fn dense(grid: Grid, gamma: DenseMatrix) -> Result<Self> {
        let n = grid.len();
        if gamma.rows() != n || gamma.cols() != n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                got: gamma.rows() * gamma.cols(),
            });
        }
        if gamma
            .as_slice()
            .iter()
            .any(|g| !(g.is_finite() && *g >= 0.0))
        {
            return Err(Error::InvalidMeasure(
                "plan entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self::Dense { grid, gamma })
    }

    pub fn grid(&self) -> &Grid {
        match self {
            Self::Factorized(p) => p.grid(),
            Self::Dense { grid, .. } => grid,
        }
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        match self {
            Self::Factorized(p) => p.row_marginal(),
            Self::Dense { gamma, .. } => gamma.row_sums(),
        }
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        match self {
            Self::Factorized(p) => p.col_marginal(),
            Self::Dense { gamma, .. } => gamma.col_sums(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.row_marginal().iter().sum()
    }

    pub fn to_dense(&self, cap: usize) -> Result<DenseMatrix> {
        match self {
            Self::Factorized(p) => p.to_dense(cap),
            Self::Dense { gamma, .. } => Ok(gamma.clone()),
        }
    }
}

/// Discrete entropy `H_1 = sum_i r_i log(r_i / l)`, with `0 log 0 = 0`.
pub fn relative_entropy_measure(rho: &DiscreteMeasure) -> f64 {
    let l = rho.grid().cell_volume();
    rho.weights()
        .iter()
        .filter(|r| **r > 0.0)
        .map(|r| r * (r / l).ln())
        .sum()
}

/// Discrete entropy `H_2 = sum_ij gamma_ij log(gamma_ij / l^2)`.
pub fn relative_entropy_plan(plan: &TransportPlan) -> f64 {
    match plan {
        TransportPlan::Factorized(p) => p.entropy(),
        TransportPlan::Dense { grid, gamma } => {
            let l2 = grid.cell_volume().powi(2);
            gamma
                .as_slice()
                .iter()
                .filter(|g| **g > 0.0)
                .map(|g| g * (g / l2).ln())
                .sum()
        }
    }
}

/// `(c, gamma) = sum_ij gamma_ij |x_i - x_j|^2`.
pub fn transport_cost(plan: &TransportPlan) -> f64 {
    match plan {
        TransportPlan::Factorized(p) => p.cost(),
        TransportPlan::Dense { grid, gamma } => {
            let n = grid.len();
            let mut s = 0.0;
            for i in 0..n {
                for (j, g) in gamma.row(i).iter().enumerate() {
                    if *g > 0.0 {
                        s += g * grid.cost(i, j);
                    }
                }
            }
            s
        }
    }
}

/// `(c, gamma) + eps H_2(gamma)` for any plan.
pub fn regularized_value(plan: &TransportPlan, eps: f64) -> f64 {
    match plan {
        TransportPlan::Factorized(p) if p.eps() == eps => p.value(),
        _ => transport_cost(plan) + eps * relative_entropy_plan(plan),
    }
}

/// Sinkhorn scaling `a = mu / K b`, `b = nu / K^T a` from `b = 1`.
///
/// Hitting `max_iter` is not an error: the returned state has
/// `converged == false`.
pub fn sinkhorn(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    eps: f64,
    opts: &SinkhornOptions,
) -> Result<(TransportPlan, ScalingState)> {
    sinkhorn_warm(mu, nu, eps, opts, None)
}

/// [`sinkhorn`] started from the potentials of an earlier state (possibly at
/// another `eps`).
pub fn sinkhorn_warm(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    eps: f64,
    opts: &SinkhornOptions,
    init: Option<&ScalingState>,
) -> Result<(TransportPlan, ScalingState)> {
    check_eps(eps)?;
    mu.same_grid(nu)?;
    let grid = mu.grid();
    let n = grid.len();
    let (alpha, beta) = match init {
        Some(s) => {
            let (f, g) = s.potentials();
            crate::error::check_len(n, f.len())?;
            let g = g
                .into_iter()
                .map(|x| if x.is_finite() { x } else { 0.0 })
                .collect();
            (f, g)
        }
        None => (vec![0.0; n], vec![0.0; n]),
    };
    let mut eng = Engine::new(
        grid,
        eps,
        opts.backend_for(grid),
        alpha,
        beta,
        vec![1.0; n],
        opts.stabilized,
        opts.absorb_threshold,
    )?;
    let (mu_w, nu_w) = (mu.weights(), nu.weights());
    eng.set_row_support(mu_w)?;
    let check_every = opts.check_every.max(1);
    let mut it = 0;
    let mut residual;
    loop {
        eng.compute_kb();
        if it % check_every == 0 || it >= opts.max_iter {
            residual = eng.row_residual(mu_w);
            if residual.is_nan() {
                return Err(Error::NumericalBreakdown("marginal residual is NaN".into()));
            }
            if residual <= opts.tol || it >= opts.max_iter {
                break;
            }
        }
        eng.apply_a(mu_w)?;
        eng.column_input(Some(nu_w))?;
        eng.set_b(nu_w)?;
        it += 1;
    }
    let (f, g) = eng.potentials();
    let plan = FactorizedPlan::new(grid.clone(), eps, f, g)?;
    let col_residual = plan
        .col_marginal()
        .iter()
        .zip(nu_w)
        .map(|(c, v)| (c - v).abs())
        .sum();
    let state = ScalingState {
        eps,
        alpha: eng.alpha().to_vec(),
        beta: eng.beta().to_vec(),
        a: eng.a().to_vec(),
        b: eng.b().to_vec(),
        iterations: it,
        residual,
        col_residual,
        converged: residual <= opts.tol,
        absorptions: eng.absorptions,
        fallbacks: eng.fallbacks,
    };
    Ok((TransportPlan::Factorized(plan), state))
}

/// Entropic transport of `mu` onto itself through the symmetric fixed point
/// `f_i = eps (log mu_i - log l^2 - LSE_j((f_j - c_ij) / eps))`, iterated with
/// averaging `f <- (f + T f) / 2`.
///
/// The plan is symmetric by construction, so the near-invariant rescaling of
/// separated mass clusters that stalls [`sinkhorn`] on `(mu, mu)` is absent.
/// `init` holds potentials of an earlier solve.
pub fn self_transport(
    mu: &DiscreteMeasure,
    eps: f64,
    opts: &SinkhornOptions,
    init: Option<&[f64]>,
) -> Result<(TransportPlan, ScalingState)> {
    check_eps(eps)?;
    let grid = mu.grid();
    let n = grid.len();
    let w = mu.weights();
    let log_l2 = 2.0 * grid.cell_volume().ln();
    let tables = AxisTables::new(grid, eps);
    let mut f: Vec<f64> = match init {
        Some(f0) => {
            crate::error::check_len(n, f0.len())?;
            f0.iter()
                .map(|x| if x.is_finite() { *x } else { 0.0 })
                .collect()
        }
        None => vec![0.0; n],
    };
    for (fi, wi) in f.iter_mut().zip(w) {
        if *wi == 0.0 {
            *fi = f64::NEG_INFINITY;
        }
    }
    let mut it = 0;
    let residual = loop {
        let scaled: Vec<f64> = f.iter().map(|x| x / eps).collect();
        let lse = tables.log_convolve(&scaled, false);
        let residual: f64 = (0..n)
            .map(|i| {
                let r = if w[i] > 0.0 {
                    (scaled[i] + lse[i] + log_l2).exp()
                } else {
                    0.0
                };
                (r - w[i]).abs()
            })
            .sum();
        if !residual.is_finite() {
            return Err(Error::NumericalBreakdown(
                "self-transport residual is not finite".into(),
            ));
        }
        if residual <= opts.tol || it >= opts.max_iter {
            break residual;
        }
        for i in 0..n {
            if w[i] > 0.0 {
                f[i] = 0.5 * (f[i] + eps * (w[i].ln() - log_l2 - lse[i]));
            }
        }
        it += 1;
    };
    let support: Vec<f64> = w.iter().map(|x| if *x > 0.0 { 1.0 } else { 0.0 }).collect();
    let absorbed: Vec<f64> = f
        .iter()
        .map(|x| if x.is_finite() { *x } else { 0.0 })
        .collect();
    let state = ScalingState {
        eps,
        alpha: absorbed.clone(),
        beta: absorbed,
        a: support.clone(),
        b: support,
        iterations: it,
        residual,
        col_residual: residual,
        converged: residual <= opts.tol,
        absorptions: 0,
        fallbacks: 0,
    };
    let plan = FactorizedPlan::new(grid.clone(), eps, f.clone(), f)?;
    Ok((TransportPlan::Factorized(plan), state))
}

/// Regularized cost `W_eps^2(mu, nu) = (c, gamma*) + eps H_2(gamma*)`.
pub fn w2_eps(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    eps: f64,
    opts: &SinkhornOptions,
) -> Result<f64> {
    let (plan, state) = sinkhorn(mu, nu, eps, opts)?;
    if !state.converged {
        return Err(Error::NotConverged {
            iterations: state.iterations,
            residual: state.residual,
        });
    }
    Ok(regularized_value(&plan, eps))
}
