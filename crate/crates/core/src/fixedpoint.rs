//! Weak solutions as fixed points of `χ ↦ 1_{u[χ] ≥ 0}`, found by damped
//! Picard iteration over occupancy histories, with a certificate and a
//! fattening diagnostic.

use std::time::Instant;

use log::{debug, info};

use crate::error::{FrontError, Result};
use crate::grid::{
    check_matching_stamps, effective_radius, indicator, l1_distance, time_weights, volume, GridSpec, IndicatorMode,
    OccupancyHistory, ScalarField,
};
use crate::levelset::{solve_frozen, FieldHistory, StepperConfig};
use crate::velocity::{VelocityLaw, VelocityProvider};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    /// Damping `θ` of the update `χ ← (1-θ)χ + θ·ξ(u[χ])`.
    pub relaxation: f64,
    pub max_iterations: usize,
    /// Space-time L¹ tolerance; `None` means [`default_tolerance`].
    pub tol_l1: Option<f64>,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { relaxation: 0.5, max_iterations: 50, tol_l1: None }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(FrontError::InvalidParameter(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        if self.max_iterations == 0 {
            return Err(FrontError::InvalidParameter("max_iterations must be at least 1".into()));
        }
        if let Some(tol) = self.tol_l1 {
            if !(tol >= 0.0 && tol.is_finite()) {
                return Err(FrontError::InvalidParameter(format!("tol_l1 must be nonnegative, got {tol}")));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self, grid: &GridSpec) -> f64 {
        self.tol_l1.unwrap_or_else(|| default_tolerance(grid))
    }
}

/// `1e-3 · (2L)^N · T`: a thousandth of the space-time box.
pub fn default_tolerance(grid: &GridSpec) -> f64 {
    1e-3 * grid.box_volume() * grid.t_final()
}

/// Band `2h` inside which the sandwich is not checked.
pub fn default_band(grid: &GridSpec) -> f64 {
    2.0 * grid.spacing()
}

/// Maximal selection `1_{u ≥ 0}` at every stamp.
pub fn xi_select(u: &FieldHistory) -> Result<OccupancyHistory> {
    u.sharp_indicators()
}

/// Evidence that `(u, χ)` is a weak solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakSolutionCertificate {
    /// Space-time fraction of the box where `χ < 1` on `{u > band}` or
    /// `χ > 0` on `{u < -band}`.
    pub sandwich_violation_fraction: f64,
    /// Time-averaged volume of `{|u| ≤ band}`.
    pub classical_gap: f64,
    /// Space-time `L¹` gap between the occupancy and the selection of `u`.
    pub residual_l1: f64,
    pub band: f64,
    pub converged: bool,
}

impl WeakSolutionCertificate {
    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "sandwich_violation_fraction={:e}\nclassical_gap={:e}\nresidual_l1={:e}\nband={:e}\nconverged={}\n",
            self.sandwich_violation_fraction, self.classical_gap, self.residual_l1, self.band, self.converged
        )
    }
}

/// Space-time quadrature of the certificate quantities.
pub fn certify(u: &FieldHistory, chi: &OccupancyHistory, band: f64) -> Result<WeakSolutionCertificate> {
    let grid = u.grid;
    if !grid.same_nodes(chi.grid()) {
        return Err(FrontError::GridMismatch("level-set and occupancy grids differ".into()));
    }
    let times = u.times();
    check_matching_stamps(&times, &chi.times())?;
    let tw = time_weights(&times);
    let span = times.last().copied().unwrap_or(0.0) - times[0];
    let weights = grid.weights();

    let mut violation = 0.0;
    let mut gap = 0.0;
    let mut residual = 0.0;
    for ((wt, (_, uf)), (_, cf)) in tw.iter().zip(&u.steps).zip(chi.steps()) {
        for ((&uv, &cv), &w) in uf.values().iter().zip(cf.values()).zip(&weights) {
            if (uv > band && cv < 1.0) || (uv < -band && cv > 0.0) {
                violation += wt * w;
            }
            if uv.abs() <= band {
                gap += wt * w;
            }
            let selected = if uv >= 0.0 { 1.0 } else { 0.0 };
            residual += wt * w * (cv - selected).abs();
        }
    }
    let (fraction, gap) = if span > 0.0 {
        ((violation / (span * grid.box_volume())).min(1.0), gap / span)
    } else {
        (0.0, 0.0)
    };
    let tol = default_tolerance(&grid);
    Ok(WeakSolutionCertificate {
        sandwich_violation_fraction: fraction,
        classical_gap: gap,
        residual_l1: residual,
        band,
        converged: fraction == 0.0 && residual <= tol,
    })
}

/// One row of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLogRow {
    pub k: usize,
    /// `‖ξ(u[χ^{k-1}]) - χ^{k-1}‖_{L¹}`.
    pub residual_l1: f64,
    /// `‖χ^k - χ^{k-1}‖_{L¹} = θ·residual`.
    pub step_l1: f64,
    pub volume_at_t: f64,
    pub radius_at_t: f64,
    pub wall_time_s: f64,
}

pub const ITERATION_LOG_HEADER: &str = "k,residual_l1,step_l1,volume_at_T,radius_at_T,wall_time_s";

impl IterationLogRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.6}",
            self.k, self.residual_l1, self.step_l1, self.volume_at_t, self.radius_at_t, self.wall_time_s
        )
    }
}

/// Everything produced by [`relaxed_iterate`].
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    /// Level set driven by `driver`.
    pub u: FieldHistory,
    /// Maximal selection `ξ(u)`.
    pub chi: OccupancyHistory,
    /// Occupancy that produced `u`.
    pub driver: OccupancyHistory,
    pub certificate: WeakSolutionCertificate,
    pub log: Vec<IterationLogRow>,
    pub converged: bool,
    /// Set when the radius at `T` did not settle monotonically after the first iterate.
    pub radius_monotone: bool,
}

impl IterationOutcome {
    pub fn iterations(&self) -> usize {
        self.log.len()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.residual_l1).collect()
    }

    pub fn log_csv(&self) -> String {
        let mut s = String::from(ITERATION_LOG_HEADER);
        s.push('\n');
        for row in &self.log {
            s.push_str(&row.to_csv_line());
            s.push('\n');
        }
        s
    }
}

/// Damped Picard iteration `χ^k = (1-θ)χ^{k-1} + θ·ξ(u[χ^{k-1}])`.
///
/// Stops once `‖ξ(u[χ^{k-1}]) - χ^{k-1}‖ ≤ tol`. Laws that ignore `χ` need a
/// single solve. Running out of iterations is reported through `converged`,
/// not as an error: cycling between several fixed points is a legitimate
/// outcome.
pub fn relaxed_iterate(
    law: &VelocityLaw,
    u0: &ScalarField,
    chi_init: Option<OccupancyHistory>,
    stepper: &StepperConfig,
    config: &FixedPointConfig,
) -> Result<IterationOutcome> {
    config.validate()?;
    stepper.validate()?;
    let grid = *u0.grid();
    let tol = config.tolerance(&grid);
    let mut chi = match chi_init {
        Some(c) => {
            if !c.grid().same_nodes(&grid) {
                return Err(FrontError::GridMismatch("initial occupancy grid".into()));
            }
            c
        }
        None => OccupancyHistory::constant_in_time(&indicator(u0, IndicatorMode::Sharp, 0.0), &grid.stamps())?,
    };
    let dependent = law.depends_on_occupancy();
    let mut log = Vec::new();
    let mut radii = Vec::new();

    for k in 1..=config.max_iterations {
        let started = Instant::now();
        let mut provider = VelocityProvider::new(law.clone(), grid)?;
        let u = solve_frozen(&mut provider, &chi, u0, stepper)?;
        let sigma = xi_select(&u)?;
        let residual = if dependent { l1_distance(&sigma, &chi)? } else { 0.0 };
        let vol = volume(&sigma.steps().last().expect("nonempty").1);
        let radius = effective_radius(vol, grid.dim());
        let row = IterationLogRow {
            k,
            residual_l1: residual,
            step_l1: config.relaxation * residual,
            volume_at_t: vol,
            radius_at_t: radius,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        info!(
            "iteration {k}: residual {:.4e} (tol {tol:.3e}) volume(T) {:.6} radius(T) {:.5}",
            residual, vol, radius
        );
        log.push(row);
        radii.push(radius);

        if residual <= tol {
            return finish(u, sigma, chi, log, true, &radii);
        }
        if k == config.max_iterations {
            info!("no fixed point within {k} iterations, last residual {residual:.4e}");
            return finish(u, sigma, chi, log, false, &radii);
        }
        chi = chi.relax_toward(&sigma, config.relaxation)?;
    }
    unreachable!("the loop returns on its last iteration")
}

fn finish(
    u: FieldHistory,
    sigma: OccupancyHistory,
    driver: OccupancyHistory,
    log: Vec<IterationLogRow>,
    converged: bool,
    radii: &[f64],
) -> Result<IterationOutcome> {
    let band = default_band(&u.grid);
    let mut certificate = certify(&u, &sigma, band)?;
    certificate.residual_l1 = log.last().map(|r| r.residual_l1).unwrap_or(0.0);
    certificate.converged = converged && certificate.sandwich_violation_fraction == 0.0;
    let radius_monotone = monotone_after_first(radii);
    if !radius_monotone {
        debug!("radius at T did not move monotonically across iterations: {radii:?}");
    }
    Ok(IterationOutcome { u, chi: sigma, driver, certificate, log, converged, radius_monotone })
}

fn monotone_after_first(radii: &[f64]) -> bool {
    if radii.len() < 3 {
        return true;
    }
    let tail = &radii[1..];
    let up = tail.windows(2).all(|w| w[1] >= w[0]);
    let down = tail.windows(2).all(|w| w[1] <= w[0]);
    up || down
}

/// Collar measure `μ(ε, t) = |{|u(·,t)| ≤ ε}|` at one stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct FatteningRow {
    pub t: f64,
    pub mu: Vec<f64>,
    /// Least-squares slope of `log μ` against `log ε`; `None` when some `μ` is 0.
    pub exponent: Option<f64>,
    pub perimeter: f64,
    /// `μ(ε, t) ≤ 3·perimeter·ε` for every `ε`.
    pub classical_consistent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FatteningReport {
    pub eps: Vec<f64>,
    pub eta: f64,
    /// Discrete `|u0| + |Du0| ≥ η - h` at every node.
    pub precondition_holds: bool,
    /// `min (|u0| + |Du0|)` over the nodes.
    pub precondition_min: f64,
    pub rows: Vec<FatteningRow>,
}

impl FatteningReport {
    pub fn classical_consistent(&self) -> bool {
        self.rows.iter().all(|r| r.classical_consistent)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,eps,mu,perimeter,exponent,classical_consistent\n");
        for row in &self.rows {
            for (e, m) in self.eps.iter().zip(&row.mu) {
                let exponent = row.exponent.map(|x| format!("{x:.6}")).unwrap_or_default();
                s.push_str(&format!(
                    "{:.9e},{:.9e},{:.9e},{:.9e},{},{}\n",
                    row.t, e, m, row.perimeter, exponent, row.classical_consistent
                ));
            }
        }
        s
    }
}

/// Collar volumes against `ε` and the nondegeneracy check on `u0`.
pub fn fattening_report(u: &FieldHistory, eps: &[f64], eta: f64) -> Result<FatteningReport> {
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) || eps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FrontError::InvalidParameter("ε list must be positive and increasing".into()));
    }
    if !(eta > 0.0) {
        return Err(FrontError::InvalidParameter(format!("η must be positive, got {eta}")));
    }
    let grid = u.grid;
    let u0 = &u.steps[0].1;
    let precondition_min = nondegeneracy_min(u0);
    let precondition_holds = precondition_min >= eta - grid.spacing();

    let rows = u
        .steps
        .iter()
        .map(|(t, f)| {
            let mu: Vec<f64> = eps.iter().map(|&e| collar_volume(f, e)).collect();
            let perimeter = crofton_perimeter(f);
            let classical_consistent = mu.iter().zip(eps).all(|(m, e)| *m <= 3.0 * perimeter * e);
            FatteningRow { t: *t, exponent: fit_exponent(eps, &mu), mu, perimeter, classical_consistent }
        })
        .collect();
    Ok(FatteningReport { eps: eps.to_vec(), eta, precondition_holds, precondition_min, rows })
}

/// `min_x |u(x)| + |Du(x)|`, with the per-axis slope taken as the larger
/// one-sided difference.
pub fn nondegeneracy_min(u: &ScalarField) -> f64 {
    let grid = u.grid();
    let h = grid.spacing();
    let m = grid.points_per_axis();
    let strides = grid.strides();
    let v = u.values();
    (0..v.len())
        .map(|i| {
            let idx = grid.multi_index(i);
            let mut g2 = 0.0;
            for a in 0..grid.dim() {
                let dm = if idx[a] > 0 { (v[i] - v[i - strides[a]]).abs() / h } else { 0.0 };
                let dp = if idx[a] + 1 < m { (v[i + strides[a]] - v[i]).abs() / h } else { 0.0 };
                g2 += dm.max(dp).powi(2);
            }
            v[i].abs() + g2.sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

fn collar_volume(u: &ScalarField, eps: f64) -> f64 {
    let grid = u.grid();
    u.values().iter().enumerate().filter(|(_, v)| v.abs() <= eps).map(|(i, _)| grid.weight(i)).sum()
}

/// Cauchy–Crofton estimate of the measure of `∂{u ≥ 0}` from sign changes
/// along grid lines.
pub fn crofton_perimeter(u: &ScalarField) -> f64 {
    let grid = u.grid();
    let dim = grid.dim();
    let m = grid.points_per_axis();
    let strides = grid.strides();
    let v = u.values();
    let mut crossings = 0usize;
    for i in 0..v.len() {
        let idx = grid.multi_index(i);
        for a in 0..dim {
            if idx[a] + 1 < m && (v[i] >= 0.0) != (v[i + strides[a]] >= 0.0) {
                crossings += 1;
            }
        }
    }
    // N·E|n₁| for a uniformly distributed normal
    let mean_projection = match dim {
        1 => 1.0,
        2 => 4.0 / std::f64::consts::PI,
        _ => 1.5,
    };
    grid.spacing().powi(dim as i32 - 1) * crossings as f64 / mean_projection
}

fn fit_exponent(eps: &[f64], mu: &[f64]) -> Option<f64> {
    if eps.len() < 2 || mu.iter().any(|m| !(*m > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}
