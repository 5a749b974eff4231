//! Pointwise KL proximal maps
//! `prox(s) = argmin_{w >= 0} w log(w / s) - w + s + kappa u(w / l) l`.

use crate::energy::{EnergyModel, PotentialField, TabulatedEnergy};
use crate::error::{check_len, Error, Result};
use crate::lambert::{lambert_w, log_lambert_w_exp, log_lambert_w_exp_near};

/// Default number of knots of a tabulated prox.
pub const DEFAULT_TABLE_KNOTS: usize = 4096;

/// Half-width (in `log s`) of the tabulated range around `log l`.
const TABLE_HALF_WIDTH: f64 = 40.0;

/// Closed-form (or bisection) prox, linear domain.
pub fn pointwise_prox(model: &EnergyModel, kappa: f64, l: f64, s: f64) -> Result<f64> {
    check_prox_args(kappa, l, s)?;
    if kappa == 0.0 || s == 0.0 {
        return Ok(s);
    }
    Ok(match model {
        EnergyModel::Heat => s.powf(1.0 / (1.0 + kappa)) * l.powf(kappa / (1.0 + kappa)),
        EnergyModel::PorousMedia { m } => {
            let x = m * kappa * (s / l).powf(m - 1.0);
            if x.is_finite() {
                l * (lambert_w(x)? / (m * kappa)).powf(1.0 / (m - 1.0))
            } else {
                log_porous(*m, kappa, l.ln(), s.ln()).exp()
            }
        }
        EnergyModel::Congestion => s.min(l).max(0.0),
        EnergyModel::Custom(t) => bisect_log(t, kappa, l, s.ln()).exp(),
    })
}

fn check_prox_args(kappa: f64, l: f64, s: f64) -> Result<()> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "kappa must be finite and >= 0, got {kappa}"
        )));
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "cell volume must be positive, got {l}"
        )));
    }
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "prox argument must be >= 0, got {s}"
        )));
    }
    Ok(())
}

fn log_porous(m: f64, kappa: f64, log_l: f64, log_s: f64) -> f64 {
    let log_mk = (m * kappa).ln();
    let log_x = log_mk + (m - 1.0) * (log_s - log_l);
    log_l + (log_lambert_w_exp(log_x) - log_mk) / (m - 1.0)
}

/// First-order condition `log(w/s) + kappa u'(w/l)` as a function of `log w`.
fn foc(t: &TabulatedEnergy, kappa: f64, l: f64, log_s: f64, log_w: f64) -> f64 {
    log_w - log_s + kappa * t.u_prime(log_w.exp() / l)
}

/// Root of the (nondecreasing) first-order condition in `log w`.
fn bisect_log(t: &TabulatedEnergy, kappa: f64, l: f64, log_s: f64) -> f64 {
    if log_s == f64::NEG_INFINITY {
        return log_s;
    }
    let (mut lo, mut hi) = (log_s - 1.0, log_s + 1.0);
    let mut width = 1.0;
    while foc(t, kappa, l, log_s, lo) > 0.0 && width < 1e4 {
        width *= 2.0;
        lo = log_s - width;
    }
    width = 1.0;
    while foc(t, kappa, l, log_s, hi) < 0.0 && width < 1e4 {
        width *= 2.0;
        hi = log_s + width;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if foc(t, kappa, l, log_s, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * mid.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// The prox for one `(model, kappa, l)`, acting on logarithms. Tabulated
/// energies are served from a log-spaced lookup table built once.
#[derive(Debug, Clone)]
pub struct ProxMap {
    model: EnergyModel,
    kappa: f64,
    l: f64,
    log_l: f64,
    /// `log(m kappa)` for porous media.
    log_mk: f64,
    table: Option<LogTable>,
}

#[derive(Debug, Clone)]
struct LogTable {
    start: f64,
    step: f64,
    values: Vec<f64>,
}

impl ProxMap {
    pub fn new(model: &EnergyModel, kappa: f64, l: f64) -> Result<Self> {
        Self::with_knots(model, kappa, l, DEFAULT_TABLE_KNOTS)
    }

    pub fn with_knots(model: &EnergyModel, kappa: f64, l: f64, knots: usize) -> Result<Self> {
        check_prox_args(kappa, l, 0.0)?;
        let log_l = l.ln();
        let table = match model {
            EnergyModel::Custom(t) if kappa > 0.0 => {
                if knots < 2 {
                    return Err(Error::InvalidParameter("prox table needs two knots".into()));
                }
                let start = log_l - TABLE_HALF_WIDTH;
                let step = 2.0 * TABLE_HALF_WIDTH / (knots - 1) as f64;
                let values = (0..knots)
                    .map(|k| bisect_log(t, kappa, l, start + k as f64 * step))
                    .collect();
                Some(LogTable {
                    start,
                    step,
                    values,
                })
            }
            _ => None,
        };
        let log_mk = match model {
            EnergyModel::PorousMedia { m } => (m * kappa).ln(),
            _ => f64::NAN,
        };
        Ok(Self {
            model: model.clone(),
            kappa,
            l,
            log_l,
            log_mk,
            table,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `log prox(exp(log_s))`.
    pub fn apply_log(&self, log_s: f64) -> f64 {
        if self.kappa == 0.0 || log_s == f64::NEG_INFINITY {
            return log_s;
        }
        let k = self.kappa;
        match &self.model {
            EnergyModel::Heat => (log_s + k * self.log_l) / (1.0 + k),
            EnergyModel::PorousMedia { m } => log_porous(*m, k, self.log_l, log_s),
            EnergyModel::Congestion => log_s.min(self.log_l),
            EnergyModel::Custom(t) => {
                let tab = self.table.as_ref().expect("table is built for kappa > 0");
                let x = (log_s - tab.start) / tab.step;
                if x < 0.0 || x >= (tab.values.len() - 1) as f64 {
                    return bisect_log(t, k, self.l, log_s);
                }
                let i = x as usize;
                let f = x - i as f64;
                tab.values[i] * (1.0 - f) + tab.values[i + 1] * f
            }
        }
    }

    /// [`Self::apply_log`] seeded with a nearby previous output.
    pub(crate) fn apply_log_near(&self, log_s: f64, prev: f64) -> f64 {
        match &self.model {
            EnergyModel::PorousMedia { m } if self.kappa > 0.0 && log_s > f64::NEG_INFINITY => {
                let log_x = self.log_mk + (m - 1.0) * (log_s - self.log_l);
                let guess = self.log_mk + (m - 1.0) * (prev - self.log_l);
                self.log_l + (log_lambert_w_exp_near(log_x, guess) - self.log_mk) / (m - 1.0)
            }
            _ => self.apply_log(log_s),
        }
    }

    pub fn apply(&self, s: f64) -> f64 {
        self.apply_log(s.ln()).exp()
    }
}

/// `prox_g(U)_i = prox(U_i exp(-kappa v_i))`.
pub fn prox_g(
    model: &EnergyModel,
    pot: &PotentialField,
    kappa: f64,
    u: &[f64],
) -> Result<Vec<f64>> {
    check_len(pot.values().len(), u.len())?;
    let l = pot.grid().cell_volume();
    u.iter()
        .zip(pot.values())
        .map(|(u, v)| {
            if !(*u >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "prox input must be >= 0, got {u}"
                )));
            }
            pointwise_prox(model, kappa, l, u * (-kappa * v).exp())
        })
        .collect()
}

/// Log-domain `prox_g`: `log prox_g(exp(log_u))`. The previous contents of
/// `out` seed the iterative maps.
pub(crate) fn prox_g_log(map: &ProxMap, pot: &[f64], log_u: &[f64], out: &mut [f64]) {
    let k = map.kappa();
    for ((o, lu), v) in out.iter_mut().zip(log_u).zip(pot) {
        *o = map.apply_log_near(lu - k * v, *o);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_examples() {
        let heat = EnergyModel::Heat;
        for k in [0.0, 0.3, 5.0, 1e3] {
            assert_relative_eq!(
                pointwise_prox(&heat, k, 0.01, 0.01).unwrap(),
                0.01,
                max_relative = 1e-14
            );
        }
        let porous = EnergyModel::porous(2.0).unwrap();
        let w = pointwise_prox(&porous, 1.0, 1.0, 1.0).unwrap();
        assert!((w - 0.4263027510).abs() < 1e-10);
        let w = pointwise_prox(&porous, 1e-9, 1.0, 0.3).unwrap();
        assert_relative_eq!(w, 0.3, max_relative = 1e-8);
        let c = EnergyModel::Congestion;
        assert_eq!(pointwise_prox(&c, 1.0, 1.0, 2.0).unwrap(), 1.0);
        assert_eq!(pointwise_prox(&c, 1.0, 1.0, 0.5).unwrap(), 0.5);
        assert!(pointwise_prox(&c, -1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn prox_g_examples() {
        let g = Grid::new(1, 3, (0.0, 3.0)).unwrap();
        let pot = PotentialField::from_values(&g, vec![1.0; 3]).unwrap();
        let w = prox_g(&EnergyModel::Heat, &pot, 1.0, &[1.0; 3]).unwrap();
        for x in w {
            assert_relative_eq!(x, (-0.5f64).exp(), max_relative = 1e-15);
        }
        let u = [0.2, 1.5, 3.0];
        let w = prox_g(&EnergyModel::porous(3.0).unwrap(), &pot, 0.0, &u).unwrap();
        assert_eq!(w, u.to_vec());
        let zero = PotentialField::zero(&g);
        let w = prox_g(&EnergyModel::Heat, &zero, 2.0, &u).unwrap();
        for (x, s) in w.iter().zip(u) {
            assert_eq!(*x, pointwise_prox(&EnergyModel::Heat, 2.0, 1.0, s).unwrap());
        }
    }

    #[test]
    fn log_maps_match_linear() {
        let models = [
            EnergyModel::Heat,
            EnergyModel::porous(2.0).unwrap(),
            EnergyModel::porous(10.0).unwrap(),
            EnergyModel::Congestion,
        ];
        for model in &models {
            for &(kappa, l) in &[(0.5, 1e-3), (20.0, 1.0 / 1024.0), (2e3, 0.1)] {
                let map = ProxMap::new(model, kappa, l).unwrap();
                for k in 0..30 {
                    let s = 10f64.powf(-8.0 + 0.3 * k as f64);
                    let lin = pointwise_prox(model, kappa, l, s).unwrap();
                    assert_relative_eq!(map.apply(s), lin, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn porous_log_map_handles_overflowing_arguments() {
        let map = ProxMap::new(&EnergyModel::porous(10.0).unwrap(), 100.0, 1e-4).unwrap();
        let log_w = map.apply_log(200.0);
        assert!(log_w.is_finite());
        // first-order condition in log form
        let w_over_l = (log_w - 1e-4f64.ln()).exp();
        let res = log_w - 200.0 + 100.0 * 10.0 * w_over_l.powi(9) / 9.0;
        assert!(res.abs() < 1e-9 * (200.0f64));
    }

    #[test]
    fn tabulated_heat_like_energy_matches_closed_form() {
        // piecewise-linear interpolant of s log s - s on a fine grid
        let s: Vec<f64> = (0..=20000).map(|k| k as f64 * 1e-3).collect();
        let u: Vec<f64> = s.iter().map(|s| EnergyModel::Heat.u(*s)).collect();
        let custom = EnergyModel::Custom(TabulatedEnergy::new(s, u).unwrap());
        let map = ProxMap::new(&custom, 2.0, 1.0).unwrap();
        for s in [0.5, 1.0, 2.0, 5.0] {
            let want = pointwise_prox(&EnergyModel::Heat, 2.0, 1.0, s).unwrap();
            assert_relative_eq!(map.apply(s), want, max_relative = 2e-3);
            let direct = pointwise_prox(&custom, 2.0, 1.0, s).unwrap();
            assert_relative_eq!(map.apply(s), direct, max_relative = 1e-3);
        }
    }
}
