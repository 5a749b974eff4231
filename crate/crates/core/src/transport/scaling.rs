//! Stabilized diagonal scaling shared by the Sinkhorn, JKO and barycenter loops.
//!
//! The plan is `gamma_ij = K~_ij a_i b_j` with `K~` the Gibbs kernel rescaled by
//! the absorbed potentials `alpha`, `beta`. Scalings are folded back into the
//! potentials whenever they drift past `exp(threshold)`, and a division by an
//! underflowed kernel sum triggers one exact log-domain update.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernel::{KernelBackend, ScaledKernel};

/// Stored kernel entries are dropped when, even after scalings up to
/// `exp(threshold)`, they stay `exp(-TRUNCATION_MARGIN)` below the largest
/// entry of both their row and their column.
const TRUNCATION_MARGIN: f64 = 50.0;

#[derive(Debug, Clone)]
pub(crate) struct Engine {
    kernel: ScaledKernel,
    a: Vec<f64>,
    b: Vec<f64>,
    kb: Vec<f64>,
    ka: Vec<f64>,
    stabilized: bool,
    threshold: f64,
    pub(crate) absorptions: usize,
    pub(crate) fallbacks: usize,
}

impl Engine {
    pub(crate) fn new(
        grid: &Grid,
        eps: f64,
        backend: KernelBackend,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        b: Vec<f64>,
        stabilized: bool,
        threshold: f64,
    ) -> Result<Self> {
        let n = grid.len();
        let truncation = if stabilized {
            2.0 * threshold + TRUNCATION_MARGIN
        } else {
            f64::INFINITY
        };
        let kernel = ScaledKernel::new(grid, eps, backend, alpha, beta, &b, truncation)?;
        Ok(Self {
            kernel,
            a: vec![1.0; n],
            b,
            kb: vec![0.0; n],
            ka: vec![0.0; n],
            stabilized,
            threshold,
            absorptions: 0,
            fallbacks: 0,
        })
    }

    pub(crate) fn eps(&self) -> f64 {
        self.kernel.eps()
    }

    pub(crate) fn a(&self) -> &[f64] {
        &self.a
    }

    pub(crate) fn b(&self) -> &[f64] {
        &self.b
    }

    pub(crate) fn alpha(&self) -> &[f64] {
        self.kernel.alpha()
    }

    pub(crate) fn beta(&self) -> &[f64] {
        self.kernel.beta()
    }

    /// Total log-potentials `alpha + eps log a`, `beta + eps log b`.
    pub(crate) fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let eps = self.eps();
        let total = |p: &[f64], s: &[f64]| -> Vec<f64> {
            p.iter()
                .zip(s)
                .map(|(p, s)| {
                    if *s > 0.0 {
                        p + eps * s.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        };
        (total(self.alpha(), &self.a), total(self.beta(), &self.b))
    }

    /// Masks rows without mass so that they never enter the kernel. Rows that
    /// gained mass start from the soft c-transform of the column potential,
    /// which gives them unit kernel sums.
    pub(crate) fn set_row_support(&mut self, mu: &[f64]) -> Result<()> {
        let changed = mu
            .iter()
            .zip(self.kernel.alpha())
            .any(|(m, al)| (*m == 0.0) != (*al == f64::NEG_INFINITY));
        if changed {
            let eps = self.eps();
            let gained = mu
                .iter()
                .zip(self.kernel.alpha())
                .any(|(m, al)| *m > 0.0 && *al == f64::NEG_INFINITY);
            let sums = if gained {
                let log_b: Vec<f64> = self.b.iter().map(|b| b.ln()).collect();
                self.kernel.log_sums(&log_b, false)
            } else {
                Vec::new()
            };
            self.kernel.update_potentials(|alpha, _| {
                for (i, (al, m)) in alpha.iter_mut().zip(mu).enumerate() {
                    if *m == 0.0 {
                        *al = f64::NEG_INFINITY;
                    } else if *al == f64::NEG_INFINITY {
                        *al = if sums[i].is_finite() {
                            -eps * sums[i]
                        } else {
                            0.0
                        };
                    }
                }
            });
            self.kernel.refresh(&self.b)?;
        }
        for (a, m) in self.a.iter_mut().zip(mu) {
            if *m == 0.0 {
                *a = 0.0;
            } else if *a == 0.0 {
                *a = 1.0;
            }
        }
        Ok(())
    }

    /// Refreshes `K~ b`.
    pub(crate) fn compute_kb(&mut self) {
        self.kernel.apply(&self.b, &mut self.kb);
    }

    /// `sum_i |a_i (K~ b)_i - mu_i|` for the last computed `K~ b`.
    pub(crate) fn row_residual(&self, mu: &[f64]) -> f64 {
        self.a
            .iter()
            .zip(&self.kb)
            .zip(mu)
            .map(|((a, k), m)| (a * k - m).abs())
            .sum()
    }

    /// `a = mu / K~ b`, using the last computed `K~ b`.
    pub(crate) fn apply_a(&mut self, mu: &[f64]) -> Result<()> {
        let broken = self
            .kb
            .iter()
            .zip(mu)
            .any(|(k, m)| !k.is_finite() || (*m > 0.0 && !(m / k).is_finite()));
        if broken {
            return self.exact_a(mu);
        }
        for ((a, k), m) in self.a.iter_mut().zip(&self.kb).zip(mu) {
            *a = if *m > 0.0 { m / k } else { 0.0 };
        }
        self.maybe_absorb()
    }

    /// Log of the column input `U = K^T A` in the original (unscaled) units.
    /// Afterwards `ka` holds `K~^T a`.
    pub(crate) fn column_input(&mut self, active: Option<&[f64]>) -> Result<Vec<f64>> {
        self.kernel.apply_t(&self.a, &mut self.ka);
        let broken = self
            .ka
            .iter()
            .enumerate()
            .any(|(j, k)| !k.is_finite() || (*k <= 0.0 && active.is_none_or(|w| w[j] > 0.0)));
        if broken {
            return self.exact_column_input();
        }
        let eps = self.eps();
        Ok(self
            .ka
            .iter()
            .zip(self.kernel.beta())
            .map(|(k, be)| k.ln() - be / eps)
            .collect())
    }

    /// `b = w / K~^T a` with the `K~^T a` from [`Self::column_input`].
    pub(crate) fn set_b(&mut self, w: &[f64]) -> Result<()> {
        let fill = |b: &mut [f64], ka: &[f64]| {
            for ((b, k), w) in b.iter_mut().zip(ka).zip(w) {
                *b = if *w > 0.0 { w / k } else { 0.0 };
            }
        };
        fill(&mut self.b, &self.ka);
        if self.b.iter().any(|b| !b.is_finite()) {
            // the division overflowed: move K~^T a into beta and retry
            self.exact_column_input()?;
            fill(&mut self.b, &self.ka);
            if self.b.iter().any(|b| !b.is_finite()) {
                return Err(Error::NumericalBreakdown(
                    "column scaling is not finite".into(),
                ));
            }
        }
        self.maybe_absorb()
    }

    fn require_stabilized(&self, what: &str) -> Result<()> {
        if self.stabilized {
            Ok(())
        } else {
            Err(Error::NumericalBreakdown(format!(
                "{what} underflowed; regularization too small for unstabilized scaling"
            )))
        }
    }

    fn exact_a(&mut self, mu: &[f64]) -> Result<()> {
        self.require_stabilized("row kernel sum")?;
        self.fallbacks += 1;
        let eps = self.eps();
        let log_b: Vec<f64> = self.b.iter().map(|b| b.ln()).collect();
        let sums = self.kernel.log_sums(&log_b, false);
        let (a, b) = (&mut self.a, &mut self.b);
        self.kernel.update_potentials(|alpha, beta| {
            absorb(beta, b, eps);
            for i in 0..alpha.len() {
                if mu[i] > 0.0 {
                    alpha[i] = eps * (mu[i].ln() - sums[i]);
                    a[i] = 1.0;
                } else {
                    alpha[i] = f64::NEG_INFINITY;
                    a[i] = 0.0;
                }
            }
        });
        self.kernel.refresh(&self.b)?;
        check_potentials(self.kernel.alpha())
    }

    fn exact_column_input(&mut self) -> Result<Vec<f64>> {
        self.require_stabilized("column kernel sum")?;
        self.fallbacks += 1;
        let eps = self.eps();
        let log_a: Vec<f64> = self.a.iter().map(|a| a.ln()).collect();
        // log (K^T A)_j
        let sums = self.kernel.log_sums(&log_a, true);
        // rescale the columns so that K~^T a is one; b is rewritten next
        let a = &mut self.a;
        self.kernel.update_potentials(|alpha, beta| {
            absorb(alpha, a, eps);
            for (be, s) in beta.iter_mut().zip(&sums) {
                if s.is_finite() {
                    *be = -eps * s;
                }
            }
        });
        self.kernel.refresh(&self.b)?;
        check_potentials(self.kernel.beta())?;
        for (k, s) in self.ka.iter_mut().zip(&sums) {
            *k = if s.is_finite() { 1.0 } else { 0.0 };
        }
        Ok(sums)
    }

    fn maybe_absorb(&mut self) -> Result<()> {
        if !self.stabilized {
            return Ok(());
        }
        let (lo, hi) = ((-self.threshold).exp(), self.threshold.exp());
        let big = |v: &[f64]| v.iter().any(|x| *x > 0.0 && (*x < lo || *x > hi));
        if big(&self.a) || big(&self.b) {
            self.absorb_all()?;
        }
        Ok(())
    }

    /// Folds both scalings into the potentials.
    pub(crate) fn absorb_all(&mut self) -> Result<()> {
        let eps = self.eps();
        let (a, b) = (&mut self.a, &mut self.b);
        self.kernel.update_potentials(|alpha, beta| {
            absorb(alpha, a, eps);
            absorb(beta, b, eps);
        });
        self.kernel.refresh(&self.b)?;
        self.absorptions += 1;
        Ok(())
    }
}

fn absorb(pot: &mut [f64], scal: &mut [f64], eps: f64) {
    for (p, s) in pot.iter_mut().zip(scal.iter_mut()) {
        if *s > 0.0 {
            *p += eps * s.ln();
            *s = 1.0;
        }
    }
}

fn check_potentials(p: &[f64]) -> Result<()> {
    if p.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        Err(Error::NumericalBreakdown(
            "dual potential is not finite".into(),
        ))
    } else {
        Ok(())
    }
}
