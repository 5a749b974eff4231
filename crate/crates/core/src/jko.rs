//! Entropic JKO time stepping.
//!
//! One step minimizes `(1/2tau) W_eps^2(rho_k, rho) + F(rho)` over the plan
//! `gamma` with first marginal `rho_k`. In scaling form this alternates
//! `a = rho_k / K b` and `b = prox_g(K^T a) / K^T a`, with
//! `prox_g(U)_j = prox_{kappa u}(U_j exp(-kappa v_j))`, `kappa = 2 tau / eps`.
//! The new measure is the second marginal `gamma^T 1 = b * K^T a`.

use crate::energy::{
    divergence, first_variation, free_energy, free_energy_weights, EnergyModel, PotentialField,
    CAPACITY_TOLERANCE,
};
use crate::error::{check_eps, check_len, Error, Result};
use crate::grid::{DiscreteMeasure, Grid, DEFAULT_DENSE_CAP};
use crate::kernel::{AxisTables, KernelBackend};
use crate::prox::{prox_g_log, ProxMap, DEFAULT_TABLE_KNOTS};
use crate::transport::scaling::Engine;
use crate::transport::{self_transport, FactorizedPlan, SinkhornOptions, TransportPlan};

/// Default constant of the `eps |log eps| <= C tau^2` schedule.
pub const DEFAULT_SCHEDULE_CONSTANT: f64 = 1e3;

/// Time discretization of a flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub eps: f64,
    pub tau: f64,
    /// Number of measures in the trajectory, `rho_0` included.
    pub steps: usize,
    pub schedule_constant: f64,
}

impl FlowParams {
    pub fn new(eps: f64, tau: f64, steps: usize) -> Result<Self> {
        check_eps(eps)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {tau}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter(
                "a flow needs at least one measure".into(),
            ));
        }
        Ok(Self {
            eps,
            tau,
            steps,
            schedule_constant: DEFAULT_SCHEDULE_CONSTANT,
        })
    }

    /// `kappa = 2 tau / eps`.
    pub fn kappa(&self) -> f64 {
        2.0 * self.tau / self.eps
    }

    /// Time of the last measure.
    pub fn horizon(&self) -> f64 {
        (self.steps - 1) as f64 * self.tau
    }

    pub fn schedule_ok(&self) -> bool {
        schedule_check(self.eps, self.tau, self.schedule_constant).unwrap_or(false)
    }
}

/// `eps |log eps| <= c tau^2`; `eps >= 1` is rejected.
pub fn schedule_check(eps: f64, tau: f64, c: f64) -> Result<bool> {
    check_eps(eps)?;
    if eps >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "schedule needs eps < 1, got {eps}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time step must be positive, got {tau}"
        )));
    }
    Ok(eps * eps.ln().abs() <= c * tau * tau)
}

/// The curve `eps = c tau^2 |log tau|`.
pub fn schedule_eps(tau: f64, c: f64) -> f64 {
    c * tau * tau * tau.ln().abs()
}

#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    /// Bound on the L1 change of the new measure between iterations and on
    /// the first-marginal residual.
    pub step_tol: f64,
    pub max_iter: usize,
    pub absorb_threshold: f64,
    pub backend: Option<KernelBackend>,
    pub dense_cap: usize,
    /// Record free energy and transport cost per step.
    pub diagnostics: bool,
    /// Also evaluate the stay-put objective `J(rho_k, rho_k)` per step.
    pub monitor_objective: bool,
    /// Knots of the prox lookup table for tabulated energies.
    pub prox_knots: usize,
    /// Solve each step first at larger regularizations, warm-starting the
    /// next stage from the previous potentials.
    pub eps_scaling: Option<EpsScaling>,
}

/// Stages `start, start * factor, ...` down to the flow's `eps`. Every stage
/// before the last stops at `stage_tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsScaling {
    pub start: f64,
    pub factor: f64,
    pub stage_tol: f64,
}

impl EpsScaling {
    /// Regularizations of the intermediate stages, largest first.
    pub fn stages(&self, eps: f64) -> Result<Vec<f64>> {
        if !(self.factor > 0.0 && self.factor < 1.0)
            || !(self.start > 0.0 && self.start.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "eps scaling needs start > 0 and factor in (0, 1), got {} and {}",
                self.start, self.factor
            )));
        }
        let mut out = Vec::new();
        let mut e = self.start;
        while e > eps * (1.0 + 1e-9) {
            out.push(e);
            e *= self.factor;
        }
        Ok(out)
    }
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            step_tol: 1e-9,
            max_iter: 100_000,
            absorb_threshold: 50.0,
            backend: None,
            dense_cap: DEFAULT_DENSE_CAP,
            diagnostics: true,
            monitor_objective: false,
            prox_knots: DEFAULT_TABLE_KNOTS,
            eps_scaling: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepDiagnostics {
    /// Index of the measure produced by this step.
    pub k: usize,
    pub iterations: usize,
    /// First-marginal L1 residual at exit.
    pub residual: f64,
    /// L1 change of the new measure in the last iteration.
    pub change: f64,
    /// `|sum gamma^T 1 - 1|` before renormalization.
    pub mass_drift: f64,
    pub free_energy: f64,
    pub cost: f64,
    /// `J(rho_k, rho_{k+1}) = W_eps^2 / 2tau + F(rho_{k+1})`.
    pub objective: Option<f64>,
    /// `J(rho_k, rho_k)`.
    pub stay_put: Option<f64>,
    /// Allowance for the solver tolerance when comparing the two.
    pub objective_slack: f64,
    pub absorptions: usize,
    pub fallbacks: usize,
}

impl StepDiagnostics {
    /// The step did not increase the objective compared with staying put.
    pub fn objective_ok(&self) -> Option<bool> {
        Some(self.objective? <= self.stay_put? + self.objective_slack)
    }
}

/// Stateful stepper that carries potentials from one step to the next.
#[derive(Debug, Clone)]
pub struct JkoSolver {
    grid: Grid,
    model: EnergyModel,
    pot: PotentialField,
    params: FlowParams,
    opts: FlowOptions,
    engine: Engine,
    prox: ProxMap,
    stay: Option<Vec<f64>>,
    last_plan: Option<FactorizedPlan>,
}

impl JkoSolver {
    pub fn new(
        grid: &Grid,
        model: &EnergyModel,
        pot: &PotentialField,
        params: FlowParams,
        opts: FlowOptions,
    ) -> Result<Self> {
        if pot.grid() != grid {
            return Err(Error::GridMismatch);
        }
        if matches!(model, EnergyModel::Congestion) {
            let capacity = grid.volume();
            if capacity < 1.0 {
                return Err(Error::InsufficientCapacity { capacity });
            }
        }
        let n = grid.len();
        let backend = opts
            .backend
            .unwrap_or_else(|| KernelBackend::auto(grid, opts.dense_cap));
        let engine = Engine::new(
            grid,
            params.eps,
            backend,
            vec![0.0; n],
            vec![0.0; n],
            vec![1.0; n],
            true,
            opts.absorb_threshold,
        )?;
        let prox = ProxMap::with_knots(model, params.kappa(), grid.cell_volume(), opts.prox_knots)?;
        Ok(Self {
            grid: grid.clone(),
            model: model.clone(),
            pot: pot.clone(),
            params,
            opts,
            engine,
            prox,
            stay: None,
            last_plan: None,
        })
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    /// Plan of the last step.
    pub fn last_plan(&self) -> Option<TransportPlan> {
        self.last_plan.clone().map(TransportPlan::Factorized)
    }

    fn engine_at(&self, eps: f64, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Engine> {
        let backend = self
            .opts
            .backend
            .unwrap_or_else(|| KernelBackend::auto(&self.grid, self.opts.dense_cap));
        let b = beta
            .iter()
            .map(|g| if g.is_finite() { 1.0 } else { 0.0 })
            .collect();
        let beta = beta
            .into_iter()
            .map(|g| if g.is_finite() { g } else { 0.0 })
            .collect();
        Engine::new(
            &self.grid,
            eps,
            backend,
            alpha,
            beta,
            b,
            true,
            self.opts.absorb_threshold,
        )
    }

    /// Advances `rho_k` by one step.
    pub fn step(&mut self, rho: &DiscreteMeasure) -> Result<(DiscreteMeasure, StepDiagnostics)> {
        if rho.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let mu = rho.weights();
        let mut iterations = 0;
        let mut counts = (0, 0);
        if let Some(sc) = self.opts.eps_scaling {
            let stages = sc.stages(self.params.eps)?;
            if !stages.is_empty() {
                let (mut f, mut g) = self.engine.potentials();
                for eps in stages {
                    let prox = ProxMap::with_knots(
                        &self.model,
                        2.0 * self.params.tau / eps,
                        self.grid.cell_volume(),
                        self.opts.prox_knots,
                    )?;
                    let mut engine = self.engine_at(eps, f, g)?;
                    let out = solve_stage(
                        &mut engine,
                        &prox,
                        self.pot.values(),
                        mu,
                        sc.stage_tol,
                        self.opts.max_iter,
                    )?;
                    iterations += out.iterations;
                    counts.0 += engine.absorptions;
                    counts.1 += engine.fallbacks;
                    (f, g) = engine.potentials();
                }
                self.engine = self.engine_at(self.params.eps, f, g)?;
            }
        }
        let (abs0, fb0) = (self.engine.absorptions, self.engine.fallbacks);
        let out = solve_stage(
            &mut self.engine,
            &self.prox,
            self.pot.values(),
            mu,
            self.opts.step_tol,
            self.opts.max_iter,
        )?;
        iterations += out.iterations;
        let StageOutput {
            w,
            residual,
            change,
            ..
        } = out;
        let mass: f64 = w.iter().sum();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::NumericalBreakdown(format!(
                "new measure has mass {mass}"
            )));
        }
        let next = DiscreteMeasure::normalized(self.grid.clone(), w)?;
        let mut diag = StepDiagnostics {
            iterations,
            residual,
            change,
            mass_drift: (mass - 1.0).abs(),
            free_energy: f64::NAN,
            cost: f64::NAN,
            absorptions: counts.0 + self.engine.absorptions - abs0,
            fallbacks: counts.1 + self.engine.fallbacks - fb0,
            ..Default::default()
        };
        let (f, g) = self.engine.potentials();
        let plan = FactorizedPlan::new(self.grid.clone(), self.params.eps, f, g)?;
        if self.opts.diagnostics || self.opts.monitor_objective {
            diag.free_energy = free_energy(&self.model, &self.pot, &next)?;
            diag.cost = plan.cost();
        }
        if self.opts.monitor_objective {
            self.monitor(rho, &plan, &mut diag, residual + change)?;
        }
        self.last_plan = Some(plan);
        Ok((next, diag))
    }

    fn monitor(
        &mut self,
        rho: &DiscreteMeasure,
        plan: &FactorizedPlan,
        diag: &mut StepDiagnostics,
        defect: f64,
    ) -> Result<()> {
        let two_tau = 2.0 * self.params.tau;
        diag.objective = Some(plan.value() / two_tau + diag.free_energy);
        let opts = SinkhornOptions {
            tol: (0.1 * self.opts.step_tol).max(1e-13),
            max_iter: self.opts.max_iter,
            absorb_threshold: self.opts.absorb_threshold,
            backend: self.opts.backend,
            dense_cap: self.opts.dense_cap,
            ..Default::default()
        };
        let (stay_plan, state) = self_transport(rho, self.params.eps, &opts, self.stay.as_deref())?;
        if !state.converged {
            return Err(Error::NotConverged {
                iterations: state.iterations,
                residual: state.residual,
            });
        }
        let stay_value = crate::transport::regularized_value(&stay_plan, self.params.eps);
        let f_rho = free_energy(&self.model, &self.pot, rho)?;
        diag.stay_put = Some(stay_value / two_tau + f_rho);
        // first-order effect of the marginal defects on both values
        let (f, g) = plan.potentials();
        let (sf, sg) = state.potentials();
        let scale = [f, g, &sf, &sg]
            .iter()
            .flat_map(|p| p.iter())
            .filter(|x| x.is_finite())
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let total_defect = defect + state.residual + state.col_residual;
        diag.objective_slack = total_defect * (scale + self.grid.max_cost()) / two_tau
            + 1e-12 * diag.stay_put.unwrap().abs().max(1.0);
        self.stay = Some(sf);
        Ok(())
    }
}

struct StageOutput {
    w: Vec<f64>,
    iterations: usize,
    residual: f64,
    change: f64,
}

/// Generalized Sinkhorn iterations of one step at the engine's regularization.
fn solve_stage(
    engine: &mut Engine,
    prox: &ProxMap,
    pot: &[f64],
    mu: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<StageOutput> {
    let n = mu.len();
    engine.set_row_support(mu)?;
    let mut log_w = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w_prev = vec![f64::NAN; n];
    let mut residual = f64::INFINITY;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        engine.compute_kb();
        residual = engine.row_residual(mu);
        engine.apply_a(mu)?;
        let log_u = engine.column_input(None)?;
        prox_g_log(prox, pot, &log_u, &mut log_w);
        for (wj, lw) in w.iter_mut().zip(&log_w) {
            *wj = lw.exp();
        }
        change = w.iter().zip(&w_prev).map(|(a, b)| (a - b).abs()).sum();
        if change.is_nan() && iterations > 1 {
            return Err(Error::NumericalBreakdown(
                "new measure is not finite".into(),
            ));
        }
        engine.set_b(&w)?;
        std::mem::swap(&mut w, &mut w_prev);
        if change <= tol && residual <= tol {
            return Ok(StageOutput {
                w: w_prev,
                iterations,
                residual,
                change,
            });
        }
    }
    Err(Error::NotConverged {
        iterations,
        residual: residual.max(change),
    })
}

/// One step from a cold start.
pub fn jko_step(
    rho: &DiscreteMeasure,
    model: &EnergyModel,
    pot: &PotentialField,
    params: &FlowParams,
    opts: &FlowOptions,
) -> Result<(DiscreteMeasure, StepDiagnostics)> {
    let mut solver = JkoSolver::new(rho.grid(), model, pot, *params, *opts)?;
    let (next, mut diag) = solver.step(rho)?;
    diag.k = 1;
    Ok((next, diag))
}

/// Time-stamped iterates `rho_0, ..., rho_{N-1}` with `t_k = k tau`.
#[derive(Debug)]
pub struct FlowTrajectory {
    pub params: FlowParams,
    pub measures: Vec<DiscreteMeasure>,
    /// One entry per step; entry `k - 1` produced `measures[k]`.
    pub diagnostics: Vec<StepDiagnostics>,
    pub initial_energy: f64,
    pub warnings: Vec<String>,
    /// Error that stopped the run early, if any.
    pub error: Option<Error>,
}

impl FlowTrajectory {
    pub fn tau(&self) -> f64 {
        self.params.tau
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn completed(&self) -> bool {
        self.error.is_none() && self.measures.len() == self.params.steps
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.params.tau
    }

    pub fn last(&self) -> &DiscreteMeasure {
        self.measures.last().expect("a trajectory holds rho_0")
    }

    /// `rho(t) = rho_k` for `t` in `[k tau, (k+1) tau)`.
    pub fn interpolate(&self, t: f64) -> Result<&DiscreteMeasure> {
        interpolate(self, t)
    }
}

pub fn interpolate(traj: &FlowTrajectory, t: f64) -> Result<&DiscreteMeasure> {
    let end = traj.len() as f64 * traj.tau();
    if !(t >= 0.0 && t < end) {
        return Err(Error::TimeOutOfRange { t, end });
    }
    let k = ((t / traj.tau()).floor() as usize).min(traj.len() - 1);
    // guard against t / tau rounding up across a step boundary
    let k = if k as f64 * traj.tau() > t { k - 1 } else { k };
    Ok(&traj.measures[k])
}

fn check_initial(model: &EnergyModel, pot: &PotentialField, rho0: &DiscreteMeasure) -> Result<f64> {
    let f0 = free_energy(model, pot, rho0)?;
    if !f0.is_finite() {
        return Err(Error::InfiniteEnergy);
    }
    Ok(f0)
}

/// Runs the scheme, calling `on_step(k, rho_k, diagnostics)` for every new
/// measure. A failing step ends the run; the error is returned in the
/// summary rather than propagated.
pub fn run_flow_with<F>(
    rho0: &DiscreteMeasure,
    model: &EnergyModel,
    pot: &PotentialField,
    params: &FlowParams,
    opts: &FlowOptions,
    mut on_step: F,
) -> Result<FlowSummary>
where
    F: FnMut(usize, &DiscreteMeasure, &StepDiagnostics),
{
    let initial_energy = check_initial(model, pot, rho0)?;
    let mut warnings = Vec::new();
    if !params.schedule_ok() {
        warnings.push(format!(
            "eps |log eps| = {:e} exceeds {} tau^2 = {:e}",
            params.eps * params.eps.ln().abs(),
            params.schedule_constant,
            params.schedule_constant * params.tau * params.tau
        ));
    }
    let mut solver = JkoSolver::new(rho0.grid(), model, pot, *params, *opts)?;
    let mut current = rho0.clone();
    let mut completed = 1;
    let mut error = None;
    for k in 1..params.steps {
        match solver.step(&current) {
            Ok((next, mut diag)) => {
                diag.k = k;
                if diag.mass_drift > 1e-10 {
                    warnings.push(format!(
                        "step {k}: mass drift {:e} before renormalization",
                        diag.mass_drift
                    ));
                }
                on_step(k, &next, &diag);
                current = next;
                completed += 1;
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    Ok(FlowSummary {
        initial_energy,
        warnings,
        error,
        completed,
    })
}

#[derive(Debug)]
pub struct FlowSummary {
    pub initial_energy: f64,
    pub warnings: Vec<String>,
    pub error: Option<Error>,
    /// Measures produced, `rho_0` included.
    pub completed: usize,
}

/// Runs the scheme and keeps every iterate.
pub fn run_flow(
    rho0: &DiscreteMeasure,
    model: &EnergyModel,
    pot: &PotentialField,
    params: &FlowParams,
    opts: &FlowOptions,
) -> Result<FlowTrajectory> {
    let mut measures = vec![rho0.clone()];
    let mut diagnostics = Vec::new();
    let summary = run_flow_with(rho0, model, pot, params, opts, |_, m, d| {
        measures.push(m.clone());
        diagnostics.push(d.clone());
    })?;
    Ok(FlowTrajectory {
        params: *params,
        measures,
        diagnostics,
        initial_energy: summary.initial_energy,
        warnings: summary.warnings,
        error: summary.error,
    })
}

/// Largest density `r_i / l` of a measure.
pub fn max_density(rho: &DiscreteMeasure) -> f64 {
    let l = rho.grid().cell_volume();
    rho.weights().iter().fold(0.0f64, |m, r| m.max(r / l))
}

/// Congestion constraint with the library tolerance.
pub fn within_capacity(rho: &DiscreteMeasure) -> bool {
    max_density(rho) <= 1.0 + CAPACITY_TOLERANCE
}

/// Column first moments `sum_i gamma_ij x_i` of a plan.
fn column_moments(plan: &TransportPlan) -> Result<Vec<[f64; 2]>> {
    let grid = plan.grid().clone();
    let n = grid.len();
    match plan {
        TransportPlan::Dense { gamma, .. } => {
            let mut out = vec![[0.0; 2]; n];
            for i in 0..n {
                let x = grid.point(i);
                for (j, g) in gamma.row(i).iter().enumerate() {
                    out[j][0] += g * x[0];
                    out[j][1] += g * x[1];
                }
            }
            Ok(out)
        }
        TransportPlan::Factorized(p) => {
            let eps = p.eps();
            let (f, g) = p.potentials();
            let log_l2 = 2.0 * grid.cell_volume().ln();
            let tables = AxisTables::new(&grid, eps);
            let col = p.col_marginal();
            let mut out = vec![[0.0; 2]; n];
            for a in 0..grid.dim() {
                let axis = grid.axis(a);
                // shift coordinates to be positive so that their logs exist
                let shift = axis.lower - axis.spacing();
                let input: Vec<f64> = (0..n)
                    .map(|i| f[i] / eps + (grid.point(i)[a] - shift).ln())
                    .collect();
                let lse = tables.log_convolve(&input, true);
                for j in 0..n {
                    let m = (lse[j] + g[j] / eps + log_l2).exp();
                    out[j][a] = if col[j] > 0.0 {
                        m + shift * col[j]
                    } else {
                        0.0
                    };
                }
            }
            Ok(out)
        }
    }
}

/// Discrete Euler-Lagrange residual of a step along the test field `w`:
/// `-(1/tau) sum <w(y_j), x_i - y_j> gamma_ij - (eps/2tau) sum rho_j div w(y_j)
///  + dF(rho_{k+1}; w)`.
pub fn el_residual(
    rho_k: &DiscreteMeasure,
    rho_next: &DiscreteMeasure,
    plan: &TransportPlan,
    model: &EnergyModel,
    pot: &PotentialField,
    params: &FlowParams,
    w: &[[f64; 2]],
) -> Result<f64> {
    rho_k.same_grid(rho_next)?;
    if plan.grid() != rho_next.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = rho_next.grid();
    check_len(grid.len(), w.len())?;
    let dv = first_variation(model, pot, rho_next, w)?;
    let moments = column_moments(plan)?;
    let col = plan.col_marginal();
    let mut transport = 0.0;
    for j in 0..grid.len() {
        let y = grid.point(j);
        for a in 0..grid.dim() {
            transport += w[j][a] * (moments[j][a] - y[a] * col[j]);
        }
    }
    let div = divergence(grid, w);
    let blur: f64 = rho_next
        .weights()
        .iter()
        .zip(&div)
        .map(|(r, d)| r * d)
        .sum();
    Ok(-transport / params.tau - params.eps / (2.0 * params.tau) * blur + dv)
}

/// `J(mu, rho) = W_eps^2(mu, rho) / 2tau + F(rho)` with a fresh Sinkhorn solve.
pub fn jko_objective(
    mu: &DiscreteMeasure,
    rho: &DiscreteMeasure,
    model: &EnergyModel,
    pot: &PotentialField,
    params: &FlowParams,
    opts: &SinkhornOptions,
) -> Result<f64> {
    let w2 = crate::transport::w2_eps(mu, rho, params.eps, opts)?;
    Ok(w2 / (2.0 * params.tau)
        + free_energy_weights(model, pot, rho.weights(), rho.grid().cell_volume()))
}
