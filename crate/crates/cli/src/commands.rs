use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use entroflow::analytic::{error_table, l1_slice_error, steps_for};
use entroflow::jko::{max_density, run_flow_with};
use entroflow::{
    barycenter_solve, gamma_sweep, io, run_flow, sinkhorn, BarycenterOptions, BarycenterProblem,
    DiscreteMeasure, SinkhornOptions,
};

use crate::config::{parse_list, RunConfig};
use crate::error::CliError;
use crate::presets::{self, Job};

/// Sorted `key=value` record of a run.
#[derive(Debug, Default)]
pub struct Manifest(std::collections::BTreeMap<String, String>);

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", entroflow::VERSION);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn extend(&mut self, cfg: &RunConfig) {
        for (k, v) in cfg.resolved() {
            self.set(&k, v);
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut s = String::new();
        for (k, v) in &self.0 {
            writeln!(s, "{k}={v}").unwrap();
        }
        write_file(&dir.join("manifest.txt"), &s)
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn prepare(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Prints the first few warnings and a count of the rest.
fn report_warnings(warnings: &[String]) {
    const SHOWN: usize = 5;
    for w in warnings.iter().take(SHOWN) {
        eprintln!("warning: {w}");
    }
    if warnings.len() > SHOWN {
        eprintln!("warning: {} more warnings", warnings.len() - SHOWN);
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn load(path: &Path) -> Result<DiscreteMeasure, CliError> {
    io::load_measure(path).map_err(|e| match e {
        entroflow::Error::Io(err) => CliError::Io(format!("{}: {err}", path.display())),
        e => e.into(),
    })
}

fn sinkhorn_options(tol: Option<f64>, max_iter: Option<usize>) -> SinkhornOptions {
    let mut o = SinkhornOptions::default();
    if let Some(t) = tol {
        o.tol = t;
    }
    if let Some(m) = max_iter {
        o.max_iter = m;
    }
    o
}

pub fn transport(
    mu: &Path,
    nu: &Path,
    eps: f64,
    tol: Option<f64>,
    max_iter: Option<usize>,
    dense_plan: Option<&Path>,
    out_dir: &Path,
) -> Result<String, CliError> {
    let (m, n) = (load(mu)?, load(nu)?);
    let opts = sinkhorn_options(tol, max_iter);
    let (plan, state) = sinkhorn(&m, &n, eps, &opts)?;
    if !state.converged {
        return Err(entroflow::Error::NotConverged {
            iterations: state.iterations,
            residual: state.residual,
        }
        .into());
    }
    let cost = entroflow::transport_cost(&plan);
    let entropy = entroflow::relative_entropy_plan(&plan);
    let value = cost + eps * entropy;
    if let Some(path) = dense_plan {
        let gamma = plan.to_dense(opts.dense_cap)?;
        let mut s = String::new();
        for i in 0..gamma.rows() {
            writeln!(s, "{}", join(gamma.row(i))).unwrap();
        }
        write_file(path, &s)?;
    }
    prepare(out_dir)?;
    let mut man = Manifest::new("transport");
    man.set("mu", mu.display());
    man.set("nu", nu.display());
    man.set("eps", eps);
    man.set("tol", opts.tol);
    man.set("max_iter", opts.max_iter);
    man.write(out_dir)?;
    Ok(format!(
        "cost,entropy,w2_eps,iterations,residual\n{cost},{entropy},{value},{},{}\n",
        state.iterations, state.residual
    ))
}

pub fn gamma_sweep_csv(
    mu: &Path,
    nu: &Path,
    eps_list: &[f64],
    tol: Option<f64>,
    max_iter: Option<usize>,
    out_dir: &Path,
) -> Result<String, CliError> {
    let (m, n) = (load(mu)?, load(nu)?);
    let opts = sinkhorn_options(tol, max_iter);
    let report = gamma_sweep(&m, &n, eps_list, &opts)?;
    prepare(out_dir)?;
    let mut man = Manifest::new("gamma-sweep");
    man.set("mu", mu.display());
    man.set("nu", nu.display());
    man.set("eps_list", join(eps_list));
    man.set("tol", opts.tol);
    man.set("max_iter", opts.max_iter);
    man.write(out_dir)?;
    let mut s = String::from(
        "eps,value,cost,entropy,plan_l1,gap,residual,iterations,upper_ok,lower_ok,exact_w2,marginal_entropy\n",
    );
    for r in &report.rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.eps,
            r.value,
            r.cost,
            r.entropy,
            r.plan_l1,
            r.gap,
            r.residual,
            r.iterations,
            r.upper_ok,
            r.lower_ok,
            report.exact_w2,
            report.marginal_entropy
        )
        .unwrap();
    }
    Ok(s)
}

pub fn frame_name(k: usize) -> String {
    format!("frame_{k:06}.csv")
}

/// Runs a flow, writing frames, diagnostics and the manifest into `out_dir`.
pub fn flow(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let pot = cfg.potential(&grid)?;
    let rho0 = cfg.initial(&grid)?;
    let params = cfg.flow_params()?;
    let opts = cfg.flow_options()?;
    let every = cfg.save_every()?;
    prepare(out_dir)?;
    let mut man = Manifest::new("flow");
    man.extend(cfg);
    man.write(out_dir)?;

    let last = params.steps - 1;
    let mut diag = String::from("k,t,F,cost,iters,residual,mass_drift,max_density\n");
    let mut write_err = None;
    let mut save = |k: usize, rho: &DiscreteMeasure| {
        if (k.is_multiple_of(every) || k == last) && write_err.is_none() {
            if let Err(e) = io::save_measure(&out_dir.join(frame_name(k)), rho) {
                write_err = Some(e);
            }
        }
    };
    save(0, &rho0);
    let f0 = entroflow::free_energy(&model, &pot, &rho0)?;
    writeln!(diag, "0,0,{f0},0,0,0,0,{}", max_density(&rho0)).unwrap();
    let summary = run_flow_with(&rho0, &model, &pot, &params, &opts, |k, rho, d| {
        save(k, rho);
        writeln!(
            diag,
            "{k},{},{},{},{},{},{},{}",
            k as f64 * params.tau,
            d.free_energy,
            d.cost,
            d.iterations,
            d.residual,
            d.mass_drift,
            max_density(rho)
        )
        .unwrap();
    })?;
    if opts.diagnostics {
        write_file(&out_dir.join("diagnostics.csv"), &diag)?;
    }
    report_warnings(&summary.warnings);
    if let Some(e) = write_err {
        return Err(e.into());
    }
    match summary.error {
        Some(e) => Err(CliError::from(e)),
        None => Ok(()),
    }
}

pub fn slice_error(cfg: &RunConfig, times: &[f64], out_dir: &Path) -> Result<String, CliError> {
    if cfg.str("initial")? != "analytic" {
        return Err(CliError::Config(
            "slice errors need `initial = analytic`".into(),
        ));
    }
    let t_max = times.iter().copied().fold(f64::NAN, f64::max);
    if times.is_empty() || times.iter().any(|t| *t < 0.0) {
        return Err(CliError::Config("times must be nonnegative".into()));
    }
    let grid = cfg.grid()?;
    let sol = cfg.analytic(&grid)?;
    let mut cfg = cfg.clone();
    cfg.set("steps", &steps_for(t_max, cfg.positive("tau")?).to_string())?;
    let traj = run_flow(
        &cfg.initial(&grid)?,
        &cfg.model()?,
        &cfg.potential(&grid)?,
        &cfg.flow_params()?,
        &cfg.flow_options()?,
    )?;
    report_warnings(&traj.warnings);
    if let Some(e) = traj.error {
        return Err(e.into());
    }
    let mut s = String::from("t,l1_error\n");
    for &t in times {
        writeln!(s, "{t},{}", l1_slice_error(&traj, &sol, t)?).unwrap();
    }
    prepare(out_dir)?;
    let mut man = Manifest::new("slice-error");
    man.extend(&cfg);
    man.set("times", join(times));
    man.write(out_dir)?;
    write_file(&out_dir.join("slice_error.csv"), &s)?;
    Ok(s)
}

pub fn error_table_csv(
    cfg: &RunConfig,
    eps_list: &[f64],
    tau_list: &[f64],
    horizon: f64,
    out_dir: &Path,
) -> Result<String, CliError> {
    if !(horizon > 0.0) {
        return Err(CliError::Config("the horizon must be positive".into()));
    }
    let grid = cfg.grid()?;
    let sol = cfg.analytic(&grid)?;
    let cells = error_table(
        &cfg.model()?,
        &grid,
        &sol,
        eps_list,
        tau_list,
        horizon,
        cfg.positive("schedule_constant")?,
        &cfg.flow_options()?,
    )?;
    let mut s = String::from("eps,tau,total_l1,schedule_ok,steps\n");
    for c in &cells {
        if let Some(f) = &c.failure {
            eprintln!("warning: eps={} tau={}: {f}", c.eps, c.tau);
        }
        writeln!(
            s,
            "{},{},{},{},{}",
            c.eps, c.tau, c.total, c.schedule_ok, c.steps
        )
        .unwrap();
    }
    prepare(out_dir)?;
    let mut man = Manifest::new("error-table");
    man.extend(cfg);
    man.set("eps_list", join(eps_list));
    man.set("tau_list", join(tau_list));
    man.set("horizon", horizon);
    man.write(out_dir)?;
    write_file(&out_dir.join("error_table.csv"), &s)?;
    Ok(s)
}

pub fn barycenter(
    inputs: &[PathBuf],
    eps: f64,
    weights: Option<&str>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    out_dir: &Path,
) -> Result<String, CliError> {
    let measures = inputs
        .iter()
        .map(|p| load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = weights.map(parse_list).transpose()?;
    let prob = BarycenterProblem::new(measures, eps, weights)?;
    let mut opts = BarycenterOptions::default();
    if let Some(t) = tol {
        opts.tol = t;
    }
    if let Some(m) = max_iter {
        opts.max_iter = m;
    }
    let res = barycenter_solve(&prob, &opts)?;
    prepare(out_dir)?;
    let mut man = Manifest::new("barycenter");
    man.set(
        "inputs",
        inputs
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    man.set("eps", eps);
    man.set("weights", join(prob.weights()));
    man.set("tol", opts.tol);
    man.set("max_iter", opts.max_iter);
    man.write(out_dir)?;
    io::save_measure(&out_dir.join("barycenter.csv"), &res.barycenter)?;
    Ok(format!(
        "iterations,change,residual\n{},{},{}\n",
        res.iterations, res.change, res.residual
    ))
}

/// The resolved configuration of every job of a figure preset.
pub fn print_figure(n: u32, reduced: bool) -> Result<String, CliError> {
    let mut s = String::new();
    for job in presets::figure(n, reduced)? {
        writeln!(s, "[{}]", job.dir()).unwrap();
        match &job {
            Job::Flow { .. } => {}
            Job::SliceError { times, .. } => writeln!(s, "times = {}", join(times)).unwrap(),
            Job::ErrorTable {
                eps_list,
                tau_list,
                horizon,
                ..
            } => {
                writeln!(s, "eps_list = {}", join(eps_list)).unwrap();
                writeln!(s, "tau_list = {}", join(tau_list)).unwrap();
                writeln!(s, "horizon = {horizon}").unwrap();
            }
        }
        write!(s, "{}", job.config()).unwrap();
        s.push('\n');
    }
    Ok(s)
}

pub fn figure(n: u32, reduced: bool, out_dir: &Path) -> Result<(), CliError> {
    let jobs = presets::figure(n, reduced)?;
    prepare(out_dir)?;
    let mut man = Manifest::new("figure");
    man.set("figure", n);
    man.set("reduced", reduced);
    man.set(
        "runs",
        jobs.iter().map(|j| j.dir()).collect::<Vec<_>>().join(","),
    );
    man.write(out_dir)?;
    for job in &jobs {
        let dir = out_dir.join(job.dir());
        eprintln!("figure {n}: {}", job.dir());
        match job {
            Job::Flow { config, .. } => flow(config, &dir)?,
            Job::SliceError { config, times, .. } => {
                slice_error(config, times, &dir)?;
            }
            Job::ErrorTable {
                config,
                eps_list,
                tau_list,
                horizon,
                ..
            } => {
                error_table_csv(config, eps_list, tau_list, *horizon, &dir)?;
            }
        }
    }
    Ok(())
}
