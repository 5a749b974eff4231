//! Regularized costs along a decreasing sequence of `eps` against the exact
//! 1-D oracle.

use super::{
    exact_w2_1d, relative_entropy_measure, sinkhorn_warm, transport_cost, ScalingState,
    SinkhornOptions, TransportPlan,
};
use crate::error::{Error, Result};
use crate::grid::{DiscreteMeasure, DEFAULT_DENSE_CAP};

/// Rounding allowance in the value bracket.
const BRACKET_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GammaSweepRow {
    pub eps: f64,
    /// `W_eps^2 = (c, gamma) + eps H_2(gamma)`.
    pub value: f64,
    pub cost: f64,
    pub entropy: f64,
    /// L1 distance of the plan to the monotone plan.
    pub plan_l1: f64,
    /// `|W_eps^2 - W^2|`.
    pub gap: f64,
    pub residual: f64,
    pub iterations: usize,
    /// `W^2 <= (c, gamma)`.
    pub upper_ok: bool,
    /// `W_eps^2 >= W^2 + eps (H_1(mu) + H_1(nu))`.
    pub lower_ok: bool,
}

#[derive(Debug, Clone)]
pub struct GammaSweepReport {
    pub exact_w2: f64,
    /// `H_1(mu) + H_1(nu)`.
    pub marginal_entropy: f64,
    pub rows: Vec<GammaSweepRow>,
}

impl GammaSweepReport {
    pub fn brackets_hold(&self) -> bool {
        self.rows.iter().all(|r| r.upper_ok && r.lower_ok)
    }
}

/// Solves for every `eps` (strictly decreasing), warm starting each solve
/// from the previous potentials.
///
/// The bracket is checked on the normalized computed plan against the exact
/// cost between its own marginals, so that the solver tolerance does not
/// enter the inequalities.
pub fn gamma_sweep(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    eps_list: &[f64],
    opts: &SinkhornOptions,
) -> Result<GammaSweepReport> {
    mu.same_grid(nu)?;
    if mu.grid().dim() != 1 {
        return Err(Error::UnsupportedDimension(mu.grid().dim()));
    }
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(
            "eps list must be nonempty and strictly decreasing".into(),
        ));
    }
    let grid = mu.grid().clone();
    let (exact_w2, exact_plan) = exact_w2_1d(mu, nu)?;
    let marginal_entropy = relative_entropy_measure(mu) + relative_entropy_measure(nu);
    let mut rows = Vec::with_capacity(eps_list.len());
    let mut warm: Option<ScalingState> = None;
    for &eps in eps_list {
        let (plan, state) = sinkhorn_warm(mu, nu, eps, opts, warm.as_ref())?;
        if !state.converged {
            return Err(Error::NotConverged {
                iterations: state.iterations,
                residual: state.residual,
            });
        }
        let gamma = plan.to_dense(DEFAULT_DENSE_CAP)?;
        let mass: f64 = gamma.as_slice().iter().sum();
        let normalized = crate::grid::DenseMatrix::from_fn(gamma.rows(), gamma.cols(), |i, j| {
            gamma.get(i, j) / mass
        });
        let dense = TransportPlan::dense(grid.clone(), normalized)?;
        let cost = transport_cost(&dense);
        let entropy = super::relative_entropy_plan(&dense);
        let value = cost + eps * entropy;

        let r = DiscreteMeasure::normalized(grid.clone(), dense.row_marginal())?;
        let c = DiscreteMeasure::normalized(grid.clone(), dense.col_marginal())?;
        let (w2_own, _) = exact_w2_1d(&r, &c)?;
        let h_own = relative_entropy_measure(&r) + relative_entropy_measure(&c);

        rows.push(GammaSweepRow {
            eps,
            value,
            cost,
            entropy,
            plan_l1: dense.to_dense(DEFAULT_DENSE_CAP)?.l1_distance(&exact_plan),
            gap: (value - exact_w2).abs(),
            residual: state.residual.max(state.col_residual),
            iterations: state.iterations,
            upper_ok: w2_own <= cost + BRACKET_SLACK,
            lower_ok: value >= w2_own + eps * h_own - BRACKET_SLACK,
        });
        warm = Some(state);
    }
    Ok(GammaSweepReport {
        exact_w2,
        marginal_entropy,
        rows,
    })
}
