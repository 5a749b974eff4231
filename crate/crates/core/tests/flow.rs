use entroflow::jko::max_density;
use entroflow::*;
use proptest::prelude::*;

fn smooth(grid: &Grid, center: f64, width: f64, floor: f64) -> DiscreteMeasure {
    DiscreteMeasure::from_density(grid.clone(), |x| {
        (-(x[0] - center).powi(2) / width).exp() + floor
    })
    .unwrap()
}

fn opts() -> FlowOptions {
    FlowOptions {
        monitor_objective: true,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn steps_conserve_mass_and_positivity(
        center in 0.3f64..0.7,
        width in 0.005f64..0.05,
        floor in prop_oneof![Just(0.0), 0.01f64..0.5],
        porous in any::<bool>(),
        log_eps in -8.0f64..-6.0,
    ) {
        let g = Grid::unit(1, 48).unwrap();
        let rho0 = smooth(&g, center, width, floor);
        let model = if porous { EnergyModel::porous(2.0).unwrap() } else { EnergyModel::Heat };
        let pot = PotentialField::quadratic_well(&g, 0.5, 2.0).unwrap();
        let params = FlowParams::new(log_eps.exp(), 1e-3, 4).unwrap();
        let traj = run_flow(&rho0, &model, &pot, &params, &opts()).unwrap();
        prop_assert!(traj.completed(), "{:?}", traj.error);
        for (rho, d) in traj.measures[1..].iter().zip(&traj.diagnostics) {
            prop_assert!((rho.mass() - 1.0).abs() <= 1e-10);
            prop_assert!(rho.weights().iter().all(|w| *w >= 0.0));
            prop_assert_eq!(d.objective_ok(), Some(true));
        }
    }
}

#[test]
fn heat_flow_decreases_the_free_energy() {
    let g = Grid::unit(1, 128).unwrap();
    let rho0 = smooth(&g, 0.4, 0.003, 0.0);
    let pot = PotentialField::zero(&g);
    let params = FlowParams::new(1e-5, 1e-4, 21).unwrap();
    let traj = run_flow(&rho0, &EnergyModel::Heat, &pot, &params, &opts()).unwrap();
    assert!(traj.completed());
    let mut last = free_energy(&EnergyModel::Heat, &pot, &rho0).unwrap();
    for d in &traj.diagnostics {
        assert!(
            d.free_energy < last,
            "step {}: {} >= {last}",
            d.k,
            d.free_energy
        );
        assert_eq!(d.objective_ok(), Some(true));
        last = d.free_energy;
    }
}

#[test]
fn flows_are_deterministic() {
    let g = Grid::unit(1, 64).unwrap();
    let rho0 = smooth(&g, 0.5, 0.01, 0.0);
    let model = EnergyModel::porous(3.0).unwrap();
    let pot = PotentialField::ramp(&g, 0.5, 4.0).unwrap();
    let params = FlowParams::new(1e-5, 1e-4, 6).unwrap();
    let a = run_flow(&rho0, &model, &pot, &params, &FlowOptions::default()).unwrap();
    let b = run_flow(&rho0, &model, &pot, &params, &FlowOptions::default()).unwrap();
    for (x, y) in a.measures.iter().zip(&b.measures) {
        assert_eq!(x.weights(), y.weights());
    }
}

#[test]
fn congestion_respects_the_capacity() {
    let g = Grid::from_axes(&[(0.0, 2.0, 64)]).unwrap();
    let rho0 = DiscreteMeasure::from_density(g.clone(), |x| {
        if x[0] > 0.1 && x[0] < 0.7 {
            0.5
        } else if x[0] > 1.0 && x[0] < 1.9 {
            0.7
        } else {
            0.0
        }
    })
    .unwrap();
    let pot = PotentialField::ramp(&g, 0.0, 5.0).unwrap();
    let params = FlowParams::new(1e-3, 1e-2, 11).unwrap();
    let o = FlowOptions {
        max_iter: 1_000_000,
        ..opts()
    };
    let traj = run_flow(&rho0, &EnergyModel::Congestion, &pot, &params, &o).unwrap();
    assert!(traj.completed(), "{:?}", traj.error);
    for rho in &traj.measures {
        assert!(max_density(rho) <= 1.0 + 1e-9);
        assert!((rho.mass() - 1.0).abs() <= 1e-10);
    }
    // mass drifts toward the low end of the ramp
    assert!(traj.last().mean()[0] < rho0.mean()[0]);
}

#[test]
fn congestion_rejects_overfull_initial_data() {
    let g = Grid::unit(1, 8).unwrap();
    let rho0 = DiscreteMeasure::dirac(g.clone(), 3).unwrap();
    let params = FlowParams::new(1e-3, 1e-2, 3).unwrap();
    let pot = PotentialField::zero(&g);
    assert!(run_flow(&rho0, &EnergyModel::Congestion, &pot, &params, &opts()).is_err());
}

#[test]
fn two_dimensional_flow_keeps_symmetry() {
    let g = Grid::unit(2, 16).unwrap();
    let rho0 = DiscreteMeasure::from_density(g.clone(), |x| {
        (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / 0.01).exp()
    })
    .unwrap();
    let pot = PotentialField::quadratic_well(&g, 0.5, 10.0).unwrap();
    let params = FlowParams::new(1e-4, 1e-3, 4).unwrap();
    let traj = run_flow(
        &rho0,
        &EnergyModel::porous(2.0).unwrap(),
        &pot,
        &params,
        &opts(),
    )
    .unwrap();
    assert!(traj.completed());
    let rho = traj.last();
    for i in 0..16 {
        for j in 0..16 {
            let a = rho.weights()[g.flat_index([i, j])];
            let b = rho.weights()[g.flat_index([j, i])];
            let c = rho.weights()[g.flat_index([15 - i, j])];
            assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        }
    }
}

/// `d/dt F((id + t w)_# rho)` at `t = 0` for a smooth 1-D density, from the
/// change of variables `rho_t(x + t w(x)) (1 + t w'(x)) = rho(x)` and a fine
/// midpoint rule.
fn continuous_first_variation(
    rho: impl Fn(f64) -> f64,
    u: impl Fn(f64) -> f64,
    v: impl Fn(f64) -> f64,
    w: impl Fn(f64) -> f64,
    dw: impl Fn(f64) -> f64,
) -> f64 {
    let n = 200_000;
    let h = 1.0 / n as f64;
    let energy = |t: f64| -> f64 {
        (0..n)
            .map(|k| {
                let x = (k as f64 + 0.5) * h;
                let jac = 1.0 + t * dw(x);
                (u(rho(x) / jac) * jac + v(x + t * w(x)) * rho(x)) * h
            })
            .sum()
    };
    let dt = 1e-4;
    (energy(dt) - energy(-dt)) / (2.0 * dt)
}

#[test]
fn first_variation_matches_the_pushforward_derivative() {
    let density = |x: f64| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).cos();
    // w vanishes at the boundary, so no mass leaves the domain
    let w = |x: f64| (std::f64::consts::PI * x).sin().powi(2) * (x - 0.3);
    let dw = |x: f64| {
        let s = (std::f64::consts::PI * x).sin();
        2.0 * std::f64::consts::PI * s * (std::f64::consts::PI * x).cos() * (x - 0.3) + s * s
    };
    let v = |x: f64| 3.0 * (x - 0.5).powi(2);
    let discrete = |p: usize, model: &EnergyModel| {
        let g = Grid::unit(1, p).unwrap();
        let rho = DiscreteMeasure::from_density(g.clone(), |x| density(x[0])).unwrap();
        let field: Vec<[f64; 2]> = g.points().iter().map(|x| [w(x[0]), 0.0]).collect();
        let pot = PotentialField::quadratic_well(&g, 0.5, 3.0).unwrap();
        first_variation(model, &pot, &rho, &field).unwrap()
    };
    for (model, u) in [
        (
            EnergyModel::Heat,
            Box::new(|s: f64| s * s.ln() - s) as Box<dyn Fn(f64) -> f64>,
        ),
        (EnergyModel::porous(2.0).unwrap(), Box::new(|s: f64| s * s)),
        (
            EnergyModel::porous(4.0).unwrap(),
            Box::new(|s: f64| s.powi(4) / 3.0),
        ),
    ] {
        let expect = continuous_first_variation(density, &u, v, w, dw);
        let coarse = (discrete(256, &model) - expect).abs();
        let fine = (discrete(512, &model) - expect).abs();
        assert!(
            fine < 1e-3 * expect.abs().max(1.0),
            "{model:?}: error {fine}"
        );
        // second order in h
        assert!(coarse / fine > 3.5, "{model:?}: {coarse} -> {fine}");
    }
}
