use entroflow::analytic::{AnalyticSolution, DEFAULT_T0, DEFAULT_X0};
use entroflow::*;

/// Porous medium equation `rho_t = (rho^m)_xx` checked pointwise by centered
/// differences in space and time.
fn pde_defect(sol: &AnalyticSolution, m: f64, t: f64, x: f64) -> f64 {
    let (h, dt) = (1e-4, 1e-7);
    let d = |t: f64, x: f64| sol.density(t, [x, 0.0]).unwrap();
    let q = |t: f64, x: f64| d(t, x).powf(m);
    let rho_t = (d(t + dt, x) - d(t - dt, x)) / (2.0 * dt);
    let lap = (q(t, x + h) - 2.0 * q(t, x) + q(t, x - h)) / (h * h);
    rho_t - lap
}

#[test]
fn profiles_solve_their_equations() {
    let heat = AnalyticSolution::gaussian(DEFAULT_T0, DEFAULT_X0).unwrap();
    let porous = AnalyticSolution::barenblatt(2.0, 1, DEFAULT_T0, DEFAULT_X0).unwrap();
    for t in [0.0, 0.004, 0.01] {
        for x in [0.45, 0.48, 0.5, 0.52] {
            let scale = heat.density(t, [x, 0.0]).unwrap() / (t + DEFAULT_T0);
            assert!(
                pde_defect(&heat, 1.0, t, x).abs() < 1e-3 * scale,
                "heat t={t} x={x}"
            );
            let r = porous.support_radius(t).unwrap();
            if (x - 0.5f64).abs() < 0.9 * r {
                let scale = porous.density(t, [x, 0.0]).unwrap() / (t + DEFAULT_T0);
                assert!(
                    pde_defect(&porous, 2.0, t, x).abs() < 1e-3 * scale,
                    "porous t={t} x={x}"
                );
            }
        }
    }
}

#[test]
fn sampling_defect_shrinks_under_refinement() {
    for sol in [
        AnalyticSolution::gaussian(DEFAULT_T0, DEFAULT_X0).unwrap(),
        AnalyticSolution::barenblatt(2.0, 1, DEFAULT_T0, DEFAULT_X0).unwrap(),
        AnalyticSolution::barenblatt(10.0, 1, DEFAULT_T0, DEFAULT_X0).unwrap(),
    ] {
        for t in [0.0, 0.001, 0.003] {
            let defect = |p: usize| {
                let s = sol.sample(t, &Grid::unit(1, p).unwrap()).unwrap();
                assert!((s.measure.mass() - 1.0).abs() < 1e-12);
                s.truncated_mass.abs()
            };
            let (coarse, fine) = (defect(512), defect(4096));
            assert!(coarse < 1e-3, "{sol:?} t={t}: {coarse}");
            assert!(
                fine < 1e-6 || fine < coarse / 4.0,
                "{sol:?} t={t}: {coarse} -> {fine}"
            );
        }
    }
}

#[test]
fn barenblatt_vanishes_outside_its_support() {
    let g = Grid::unit(2, 64).unwrap();
    let sol = AnalyticSolution::barenblatt(3.0, 2, DEFAULT_T0, DEFAULT_X0).unwrap();
    let t = 0.002;
    let r = sol.support_radius(t).unwrap();
    let s = sol.sample(t, &g).unwrap().measure;
    for (x, w) in g.points().iter().zip(s.weights()) {
        let d = ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt();
        if d >= r {
            assert_eq!(*w, 0.0);
        } else if d < 0.9 * r {
            assert!(*w > 0.0);
        }
    }
}

#[test]
fn heat_profile_satisfies_the_discrete_stencil() {
    // time-differenced samples against the three-point Laplacian
    let p = 512;
    let g = Grid::unit(1, p).unwrap();
    let h = g.axis(0).spacing();
    let tau = 1e-6;
    let sol = AnalyticSolution::gaussian(DEFAULT_T0, DEFAULT_X0).unwrap();
    let t = 0.002;
    let a = sol.sample(t, &g).unwrap().measure.densities();
    let b = sol.sample(t + tau, &g).unwrap().measure.densities();
    let mut defect = 0.0;
    let mut size = 0.0;
    for i in 1..p - 1 {
        let lap = (a[i + 1] - 2.0 * a[i] + a[i - 1]) / (h * h);
        defect += ((b[i] - a[i]) / tau - lap).abs() * h;
        size += lap.abs() * h;
    }
    assert!(defect / size < 1e-2, "{}", defect / size);
}
