//! Entropic barycenters: couplings from each input to one free common
//! marginal, found by iterative scaling.
//!
//! Each coupling `i` keeps its own scalings `(a_i, b_i)`. After the row
//! updates `a_i = mu_i / K b_i` the common marginal is the weighted geometric
//! mean `rho = prod_i (K^T a_i)^lambda_i`, and then `b_i = rho / K^T a_i`.

use rayon::prelude::*;

use crate::error::{check_eps, Error, Result};
use crate::grid::{DiscreteMeasure, Grid, DEFAULT_DENSE_CAP};
use crate::kernel::KernelBackend;
use crate::transport::scaling::Engine;
use crate::transport::{regularized_value, FactorizedPlan, TransportPlan};

#[derive(Debug, Clone)]
pub struct BarycenterProblem {
    measures: Vec<DiscreteMeasure>,
    eps: f64,
    weights: Vec<f64>,
}

impl BarycenterProblem {
    /// Uniform weights when `weights` is `None`.
    pub fn new(
        measures: Vec<DiscreteMeasure>,
        eps: f64,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        check_eps(eps)?;
        let first = measures.first().ok_or_else(|| {
            Error::InvalidParameter("a barycenter needs at least one measure".into())
        })?;
        for m in &measures[1..] {
            first.same_grid(m)?;
        }
        let n = measures.len();
        let weights = weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        crate::error::check_len(n, weights.len())?;
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(
                "weights must be nonnegative and sum to one".into(),
            ));
        }
        Ok(Self {
            measures,
            eps,
            weights,
        })
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> &Grid {
        self.measures[0].grid()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BarycenterOptions {
    /// Bound on the L1 change of the common marginal and on the first-marginal
    /// residuals.
    pub tol: f64,
    pub max_iter: usize,
    pub absorb_threshold: f64,
    pub backend: Option<KernelBackend>,
    pub dense_cap: usize,
}

impl Default for BarycenterOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
            absorb_threshold: 50.0,
            backend: None,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterResult {
    pub barycenter: DiscreteMeasure,
    pub couplings: Vec<TransportPlan>,
    pub iterations: usize,
    /// L1 change of the common marginal in the last iteration.
    pub change: f64,
    /// Largest first-marginal residual at exit.
    pub residual: f64,
}

pub fn barycenter_solve(
    prob: &BarycenterProblem,
    opts: &BarycenterOptions,
) -> Result<BarycenterResult> {
    let grid = prob.grid();
    let n = grid.len();
    let eps = prob.eps;
    let backend = opts
        .backend
        .unwrap_or_else(|| KernelBackend::auto(grid, opts.dense_cap));
    let mut engines = prob
        .measures
        .iter()
        .map(|mu| {
            let mut e = Engine::new(
                grid,
                eps,
                backend,
                vec![0.0; n],
                vec![0.0; n],
                vec![1.0; n],
                true,
                opts.absorb_threshold,
            )?;
            e.set_row_support(mu.weights())?;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rho = vec![f64::NAN; n];
    let mut change = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut terms = Vec::with_capacity(engines.len());
    while iterations < opts.max_iter {
        iterations += 1;
        let updates = engines
            .par_iter_mut()
            .zip(prob.measures.par_iter())
            .map(|(e, mu)| {
                e.compute_kb();
                let r = e.row_residual(mu.weights());
                e.apply_a(mu.weights())?;
                Ok((r, e.column_input(None)?))
            })
            .collect::<Result<Vec<_>>>()?;
        residual = updates.iter().map(|(r, _)| *r).fold(0.0, f64::max);
        let mut next = vec![0.0; n];
        for (j, out) in next.iter_mut().enumerate() {
            terms.clear();
            for ((_, log_u), lam) in updates.iter().zip(&prob.weights) {
                if *lam > 0.0 {
                    terms.push(lam * log_u[j]);
                }
            }
            // order-independent summation
            terms.sort_by(f64::total_cmp);
            *out = terms.iter().sum::<f64>().exp();
        }
        change = next.iter().zip(&rho).map(|(a, b)| (a - b).abs()).sum();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalBreakdown(
                "common marginal is not finite".into(),
            ));
        }
        engines.par_iter_mut().try_for_each(|e| e.set_b(&next))?;
        rho = next;
        if change <= opts.tol && residual <= opts.tol {
            break;
        }
    }
    if !(change <= opts.tol && residual <= opts.tol) {
        return Err(Error::NotConverged {
            iterations,
            residual: residual.max(change),
        });
    }
    let couplings = engines
        .iter()
        .map(|e| {
            let (f, g) = e.potentials();
            Ok(TransportPlan::Factorized(FactorizedPlan::new(
                grid.clone(),
                eps,
                f,
                g,
            )?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BarycenterResult {
        barycenter: DiscreteMeasure::normalized(grid.clone(), rho)?,
        couplings,
        iterations,
        change,
        residual,
    })
}

/// `sum_i N lambda_i ((c, gamma_i) + eps H_2(gamma_i))`, which is the plain
/// sum for uniform weights. Couplings whose first marginals miss the inputs
/// or whose second marginals disagree by more than `tol` are rejected.
pub fn barycenter_objective(
    prob: &BarycenterProblem,
    couplings: &[TransportPlan],
    tol: f64,
) -> Result<f64> {
    crate::error::check_len(prob.measures.len(), couplings.len())?;
    let second = couplings[0].col_marginal();
    let n = prob.measures.len() as f64;
    let mut total = 0.0;
    for ((plan, mu), lam) in couplings.iter().zip(&prob.measures).zip(&prob.weights) {
        if plan.grid() != mu.grid() {
            return Err(Error::GridMismatch);
        }
        let r: f64 = plan
            .row_marginal()
            .iter()
            .zip(mu.weights())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let c: f64 = plan
            .col_marginal()
            .iter()
            .zip(&second)
            .map(|(a, b)| (a - b).abs())
            .sum();
        if r > tol || c > tol {
            return Err(Error::Infeasible(format!(
                "first-marginal defect {r:e}, common-marginal defect {c:e}"
            )));
        }
        total += n * lam * regularized_value(plan, prob.eps);
    }
    Ok(total)
}
