//! Nonlocal front propagation by level sets.
//!
//! A front `Γ(t) = {u(·,t) = 0}` moves with normal velocity `c[χ]` that
//! depends on the occupied region `χ` itself. Weak solutions are pairs
//! `(u, χ)` with `1_{u>0} ≤ χ ≤ 1_{u≥0}`, computed here by a damped fixed-point
//! iteration over frozen occupancy histories.

pub mod barriers;
pub mod error;
pub mod fixedpoint;
pub mod grid;
pub mod heat;
pub mod io;
pub mod levelset;
pub mod scalar_fn;
pub mod velocity;

pub use barriers::{
    barrier_ode, comparison_harness, containment_check, growth_envelope, sublinear_growth_check, BarrierTrajectory,
    ComparisonReport, ContainmentReport,
};
pub use error::{FrontError, Result};
pub use fixedpoint::{
    certify, fattening_report, relaxed_iterate, xi_select, FatteningReport, FixedPointConfig, IterationOutcome,
    WeakSolutionCertificate,
};
pub use grid::{
    effective_radius, indicator, l1_distance, signed_distance_init, unit_ball_volume, volume, GridSpec, IndicatorMode,
    OccupancyHistory, ScalarField, ShapeSpec,
};
pub use heat::{duhamel_eval, green_eval, green_mass, GreenMass, heat_step_fd, lemma_bounds_check, solve_heat, HeatHistory, HeatState, LemmaReport};
pub use levelset::{
    cfl_dt, curvature_term, gradient_upwind, redistance, solve_frozen, step, CurvatureScheme, FieldHistory,
    RedistanceOutcome, StepperConfig,
};
pub use scalar_fn::ScalarFn;
pub use velocity::{
    convolve_spatial, dislocation_velocity, volume_velocity, DislocationLaw, Drift, FitzhughNagumoLaw, KernelPatch,
    KernelSchedule, VelocityLaw, VelocityProvider,
};
