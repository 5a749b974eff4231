//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use entroflow::analytic::AnalyticSolution;
use entroflow::{
    io, DiscreteMeasure, EnergyModel, EpsScaling, FlowOptions, FlowParams, Grid, PotentialField,
};

use crate::error::CliError;

/// Every accepted key with its default (`None` when the key is required by
/// the commands that read it).
const KEYS: &[(&str, Option<&str>)] = &[
    ("dim", Some("1")),
    ("points", Some("256")),
    ("extent_min", Some("0")),
    ("extent_max", Some("1")),
    ("energy", Some("heat")),
    ("porous_m", Some("2")),
    ("custom_table", None),
    ("potential", Some("none")),
    ("initial", Some("analytic")),
    ("t0", Some("1e-3")),
    ("x0", Some("0.5")),
    ("eps", None),
    ("tau", None),
    ("steps", Some("101")),
    ("step_tol", Some("1e-9")),
    ("max_iter", Some("100000")),
    ("save_every", Some("1")),
    ("diagnostics", Some("on")),
    ("monitor_objective", Some("off")),
    ("eps_scaling", Some("none")),
    ("schedule_constant", Some("1e3")),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        if let Some(v) = self.values.get(key) {
            return Some(v);
        }
        KEYS.iter().find(|(k, _)| *k == key).and_then(|(_, d)| *d)
    }

    pub fn str(&self, key: &str) -> Result<&str, CliError> {
        self.raw(key)
            .ok_or_else(|| CliError::Config(format!("missing key `{key}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v = self.str(key)?;
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| CliError::Config(format!("`{key}`: not a number: {v:?}")))
    }

    pub fn positive(&self, key: &str) -> Result<f64, CliError> {
        let x = self.f64(key)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(CliError::Config(format!(
                "`{key}` must be positive, got {x}"
            )))
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        let v = self.str(key)?;
        v.parse::<usize>()
            .map_err(|_| CliError::Config(format!("`{key}`: not a nonnegative integer: {v:?}")))
    }

    pub fn switch(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key)? {
            "on" | "true" | "yes" => Ok(true),
            "off" | "false" | "no" => Ok(false),
            v => Err(CliError::Config(format!(
                "`{key}` must be on or off, got {v:?}"
            ))),
        }
    }

    /// All keys with defaults filled in; required keys that are unset are
    /// left out.
    pub fn resolved(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .filter_map(|(k, _)| self.raw(k).map(|v| (k.to_string(), v.to_string())))
            .collect()
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        let dim = self.usize("dim")?;
        let points = self.usize("points")?;
        let extent = (self.f64("extent_min")?, self.f64("extent_max")?);
        Ok(Grid::new(dim, points, extent)?)
    }

    pub fn model(&self) -> Result<EnergyModel, CliError> {
        match self.str("energy")? {
            "heat" => Ok(EnergyModel::Heat),
            "porous" => Ok(EnergyModel::porous(self.f64("porous_m")?)?),
            "congestion" => Ok(EnergyModel::Congestion),
            "custom" => {
                let path = self.str("custom_table")?;
                Ok(EnergyModel::Custom(io::load_energy_table(Path::new(path))?))
            }
            e => Err(CliError::Config(format!("unknown energy {e:?}"))),
        }
    }

    pub fn potential(&self, grid: &Grid) -> Result<PotentialField, CliError> {
        let spec = Spec::parse(self.str("potential")?)?;
        match spec.name.as_str() {
            "none" => {
                spec.arity(0)?;
                Ok(PotentialField::zero(grid))
            }
            "quadratic_well" => {
                let a = spec.numbers(2)?;
                Ok(PotentialField::quadratic_well(grid, a[0], a[1])?)
            }
            "ramp" => {
                let a = spec.numbers(2)?;
                Ok(PotentialField::ramp(grid, a[0], a[1])?)
            }
            "file" => {
                let (g, v) = io::load_values(Path::new(spec.text()?))?;
                if &g != grid {
                    return Err(CliError::Config("potential file is on another grid".into()));
                }
                Ok(PotentialField::from_values(grid, v)?)
            }
            n => Err(CliError::Config(format!("unknown potential {n:?}"))),
        }
    }

    pub fn analytic(&self, grid: &Grid) -> Result<AnalyticSolution, CliError> {
        let t0 = self.positive("t0")?;
        let x0 = self.f64("x0")?;
        let model = self.model()?;
        AnalyticSolution::for_model(&model, grid.dim(), t0, x0)
            .map_err(|e| CliError::Config(format!("no analytic solution: {e}")))
    }

    pub fn initial(&self, grid: &Grid) -> Result<DiscreteMeasure, CliError> {
        let spec = Spec::parse(self.str("initial")?)?;
        match spec.name.as_str() {
            "analytic" => {
                spec.arity(0)?;
                Ok(self.analytic(grid)?.sample(0.0, grid)?.measure)
            }
            "uniform" => {
                spec.arity(0)?;
                Ok(DiscreteMeasure::uniform(grid.clone()))
            }
            "file" => {
                let m = io::load_measure(Path::new(spec.text()?))?;
                if m.grid() != grid {
                    return Err(CliError::Config(
                        "initial measure is on another grid".into(),
                    ));
                }
                Ok(m)
            }
            "blocks" => {
                // lo, hi, density per block along the first axis
                let blocks = spec.groups(3)?;
                Ok(DiscreteMeasure::normalized(
                    grid.clone(),
                    grid.points()
                        .iter()
                        .map(|x| {
                            blocks
                                .iter()
                                .filter(|b| x[0] > b[0] && x[0] < b[1])
                                .map(|b| b[2])
                                .sum::<f64>()
                                * grid.cell_volume()
                        })
                        .collect(),
                )?)
            }
            "bumps" => {
                // center (one coordinate per axis), radius, amplitude
                let dim = grid.dim();
                let bumps = spec.groups(dim + 2)?;
                Ok(DiscreteMeasure::normalized(
                    grid.clone(),
                    grid.points()
                        .iter()
                        .map(|x| {
                            bumps
                                .iter()
                                .map(|b| {
                                    let d2: f64 = (0..dim).map(|a| (x[a] - b[a]).powi(2)).sum();
                                    let z = d2 / (b[dim] * b[dim]);
                                    if z < 1.0 {
                                        b[dim + 1] * (1.0 - z).powi(2)
                                    } else {
                                        0.0
                                    }
                                })
                                .sum::<f64>()
                                * grid.cell_volume()
                        })
                        .collect(),
                )?)
            }
            n => Err(CliError::Config(format!("unknown initial profile {n:?}"))),
        }
    }

    pub fn flow_params(&self) -> Result<FlowParams, CliError> {
        let mut p = FlowParams::new(
            self.positive("eps")?,
            self.positive("tau")?,
            self.usize("steps")?,
        )?;
        p.schedule_constant = self.positive("schedule_constant")?;
        Ok(p)
    }

    pub fn flow_options(&self) -> Result<FlowOptions, CliError> {
        let eps_scaling = match self.str("eps_scaling")? {
            "none" => None,
            v => {
                let a: Vec<f64> = parse_list(v)?;
                if a.len() != 3 {
                    return Err(CliError::Config(
                        "`eps_scaling` takes start, factor, stage_tol".into(),
                    ));
                }
                Some(EpsScaling {
                    start: a[0],
                    factor: a[1],
                    stage_tol: a[2],
                })
            }
        };
        Ok(FlowOptions {
            step_tol: self.positive("step_tol")?,
            max_iter: self.usize("max_iter")?,
            diagnostics: self.switch("diagnostics")?,
            monitor_objective: self.switch("monitor_objective")?,
            eps_scaling,
            ..Default::default()
        })
    }

    pub fn save_every(&self) -> Result<usize, CliError> {
        match self.usize("save_every")? {
            0 => Err(CliError::Config("`save_every` must be at least 1".into())),
            k => Ok(k),
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.resolved() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// `name` or `name(args)`.
struct Spec {
    name: String,
    args: Option<String>,
}

impl Spec {
    fn parse(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        match s.split_once('(') {
            None => Ok(Self {
                name: s.to_string(),
                args: None,
            }),
            Some((name, rest)) => {
                let args = rest
                    .strip_suffix(')')
                    .ok_or_else(|| CliError::Config(format!("unbalanced parentheses in {s:?}")))?;
                Ok(Self {
                    name: name.trim().to_string(),
                    args: Some(args.trim().to_string()),
                })
            }
        }
    }

    fn arity(&self, n: usize) -> Result<(), CliError> {
        let got = match &self.args {
            None => 0,
            Some(a) if a.is_empty() => 0,
            Some(a) => a.split(',').count(),
        };
        if got == n {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "`{}` takes {n} arguments, got {got}",
                self.name
            )))
        }
    }

    fn text(&self) -> Result<&str, CliError> {
        self.args
            .as_deref()
            .filter(|a| !a.is_empty())
            .ok_or_else(|| CliError::Config(format!("`{}` needs an argument", self.name)))
    }

    fn numbers(&self, n: usize) -> Result<Vec<f64>, CliError> {
        self.arity(n)?;
        parse_list(self.text()?)
    }

    /// `;`-separated groups of `n` numbers each.
    fn groups(&self, n: usize) -> Result<Vec<Vec<f64>>, CliError> {
        self.text()?
            .split(';')
            .map(|g| {
                let v = parse_list(g)?;
                if v.len() == n {
                    Ok(v)
                } else {
                    Err(CliError::Config(format!(
                        "`{}` groups need {n} numbers, got {g:?}",
                        self.name
                    )))
                }
            })
            .collect()
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| {
            let x = x.trim();
            x.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Config(format!("not a number: {x:?}")))
        })
        .collect()
}

pub fn path_list(s: &str) -> Vec<PathBuf> {
    s.split(',')
        .map(|p| PathBuf::from(p.trim()))
        .filter(|p| !p.as_os_str().is_empty())
        .collect()
}
