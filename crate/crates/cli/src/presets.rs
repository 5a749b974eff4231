//! Named run configurations for the figure experiments.

use crate::config::RunConfig;
use crate::error::CliError;

/// Grid resolution used by `--reduced`.
pub const REDUCED_POINTS_1D: usize = 128;
pub const REDUCED_POINTS_2D: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    /// A flow written to `dir` under the output directory.
    Flow { dir: String, config: RunConfig },
    /// Slice errors against the analytic profile at the given times.
    SliceError {
        dir: String,
        config: RunConfig,
        times: Vec<f64>,
    },
    ErrorTable {
        dir: String,
        config: RunConfig,
        eps_list: Vec<f64>,
        tau_list: Vec<f64>,
        horizon: f64,
    },
}

impl Job {
    pub fn dir(&self) -> &str {
        match self {
            Job::Flow { dir, .. } | Job::SliceError { dir, .. } | Job::ErrorTable { dir, .. } => {
                dir
            }
        }
    }

    pub fn config(&self) -> &RunConfig {
        match self {
            Job::Flow { config, .. }
            | Job::SliceError { config, .. }
            | Job::ErrorTable { config, .. } => config,
        }
    }

    fn config_mut(&mut self) -> &mut RunConfig {
        match self {
            Job::Flow { config, .. }
            | Job::SliceError { config, .. }
            | Job::ErrorTable { config, .. } => config,
        }
    }
}

fn config(pairs: &[(&str, &str)]) -> RunConfig {
    let mut c = RunConfig::default();
    for (k, v) in pairs {
        c.set(k, v).expect("preset keys are valid");
    }
    c
}

const FIG3_MODELS: [(&str, &[(&str, &str)]); 3] = [
    ("heat", &[("energy", "heat")]),
    ("porous_m2", &[("energy", "porous"), ("porous_m", "2")]),
    ("porous_m10", &[("energy", "porous"), ("porous_m", "10")]),
];
const FIG3_EPS: [&str; 3] = ["1e-4", "1e-5", "1e-6"];

fn fig3_config(model: &[(&str, &str)], eps: &str) -> RunConfig {
    let mut c = config(&[
        ("dim", "1"),
        ("points", "1024"),
        ("initial", "analytic"),
        ("potential", "none"),
        ("tau", "1e-5"),
        ("eps", eps),
        ("steps", "501"),
        ("save_every", "50"),
    ]);
    for (k, v) in model {
        c.set(k, v).expect("preset keys are valid");
    }
    c
}

/// Jobs of figure `n`; `reduced` lowers the grid resolution only.
pub fn figure(n: u32, reduced: bool) -> Result<Vec<Job>, CliError> {
    let mut jobs = match n {
        3 => FIG3_MODELS
            .iter()
            .flat_map(|(name, model)| {
                FIG3_EPS.iter().map(move |eps| Job::Flow {
                    dir: format!("{name}_eps{eps}"),
                    config: fig3_config(model, eps),
                })
            })
            .collect(),
        4 => FIG3_MODELS[..2]
            .iter()
            .flat_map(|(name, model)| {
                FIG3_EPS.iter().map(move |eps| Job::SliceError {
                    dir: format!("{name}_eps{eps}"),
                    config: fig3_config(model, eps),
                    times: (1..=10).map(|k| k as f64 * 5e-4).collect(),
                })
            })
            .collect(),
        5 => vec![Job::ErrorTable {
            dir: "porous_m2".into(),
            config: config(&[
                ("dim", "1"),
                ("points", "256"),
                ("energy", "porous"),
                ("porous_m", "2"),
                ("initial", "analytic"),
            ]),
            eps_list: vec![1e-3, 1e-4, 1e-5, 1e-6],
            tau_list: vec![1e-3, 3e-4, 1e-4, 3e-5],
            horizon: 0.01,
        }],
        6 => vec![Job::Flow {
            dir: "porous_m2_drift".into(),
            config: config(&[
                ("dim", "1"),
                ("points", "1024"),
                ("energy", "porous"),
                ("porous_m", "2"),
                ("potential", "ramp(0.5, 100)"),
                ("initial", "analytic"),
                ("x0", "0.75"),
                ("tau", "1e-5"),
                ("eps", "1e-6"),
                ("steps", "1001"),
                ("save_every", "100"),
            ]),
        }],
        7 => vec![Job::Flow {
            dir: "porous_m2_2d".into(),
            config: config(&[
                ("dim", "2"),
                ("points", "256"),
                ("energy", "porous"),
                ("porous_m", "2"),
                ("potential", "quadratic_well(0.5, 1e3)"),
                ("initial", "bumps(0.5, 0.75, 0.15, 2; 0.5, 0.25, 0.15, 1)"),
                ("tau", "1e-4"),
                ("eps", "2.5e-5"),
                ("steps", "51"),
                ("save_every", "5"),
            ]),
        }],
        8 => vec![Job::Flow {
            dir: "congestion".into(),
            config: config(&[
                ("dim", "1"),
                ("points", "512"),
                ("extent_min", "0"),
                ("extent_max", "2"),
                ("energy", "congestion"),
                ("potential", "ramp(0, 5)"),
                ("initial", "blocks(0.1, 0.7, 0.5; 1.0, 1.9, 0.7)"),
                ("tau", "1e-2"),
                ("eps", "1e-7"),
                ("steps", "101"),
                ("save_every", "10"),
                ("eps_scaling", "1e-3, 0.3, 1e-6"),
                ("max_iter", "2000000"),
            ]),
        }],
        _ => {
            return Err(CliError::Config(format!(
                "no preset for figure {n}; expected 3 to 8"
            )))
        }
    };
    if reduced {
        for job in &mut jobs {
            let c = job.config_mut();
            let p = if c.usize("dim")? == 2 {
                REDUCED_POINTS_2D
            } else {
                REDUCED_POINTS_1D
            };
            c.set("points", &p.to_string())?;
        }
    }
    Ok(jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for n in 3..=8 {
            for reduced in [false, true] {
                for job in figure(n, reduced).unwrap() {
                    let c = job.config();
                    let g = c.grid().unwrap();
                    c.model().unwrap();
                    c.potential(&g).unwrap();
                    if !matches!(job, Job::ErrorTable { .. }) {
                        c.initial(&g).unwrap();
                        c.flow_params().unwrap();
                        c.flow_options().unwrap();
                    }
                }
            }
        }
        assert!(figure(2, false).is_err());
        assert!(figure(9, true).is_err());
    }

    #[test]
    fn reduced_changes_only_the_resolution() {
        for n in 3..=8 {
            let (full, red) = (figure(n, false).unwrap(), figure(n, true).unwrap());
            for (a, b) in full.iter().zip(&red) {
                let (a, b) = (a.config().resolved(), b.config().resolved());
                let differ: Vec<_> = a
                    .iter()
                    .zip(&b)
                    .filter(|(x, y)| x != y)
                    .map(|(x, _)| x.0.as_str())
                    .collect();
                assert!(
                    differ.is_empty() || differ == ["points"],
                    "figure {n}: {differ:?}"
                );
            }
        }
    }
}
