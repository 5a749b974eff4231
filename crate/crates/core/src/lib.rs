//! Entropy-regularized optimal transport on Cartesian grids and entropic JKO
//! schemes for nonlinear diffusion equations.

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod analytic;
pub mod barycenter;
pub mod energy;
pub mod error;
pub mod grid;
pub mod io;
pub mod jko;
pub mod kernel;
pub mod lambert;
pub mod prox;
pub mod transport;

pub use analytic::{
    barenblatt_solution, error_table, gaussian_solution, l1_slice_error, AnalyticSolution,
    ErrorCell, ErrorReport,
};
pub use barycenter::{
    barycenter_objective, barycenter_solve, BarycenterOptions, BarycenterProblem, BarycenterResult,
};
pub use energy::{
    divergence, first_variation, free_energy, gradient, pressure, EnergyModel, PotentialField,
    TabulatedEnergy,
};
pub use error::{Error, Result};
pub use grid::{build_grid, CostOracle, DenseMatrix, DiscreteMeasure, Grid};
pub use jko::{
    el_residual, interpolate, jko_step, run_flow, schedule_check, EpsScaling, FlowOptions,
    FlowParams, FlowTrajectory, JkoSolver, StepDiagnostics,
};
pub use kernel::{dense_kernel, gibbs_apply, KernelBackend};
pub use lambert::lambert_w;
pub use prox::{pointwise_prox, prox_g, ProxMap};
pub use transport::{
    block_approximation, exact_w2_1d, gamma_sweep, relative_entropy_measure, relative_entropy_plan,
    self_transport, sinkhorn, sinkhorn_warm, transport_cost, w2_eps, ScalingState, SinkhornOptions,
    TransportPlan,
};
