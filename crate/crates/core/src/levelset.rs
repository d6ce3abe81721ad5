//! Monotone explicit stepping of `u_t = c(x,t)|Du|` (+ mean curvature) with a
//! frozen occupancy, and signed-distance reinitialization.

use std::f64::consts::PI;
use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;

use crate::error::{FrontError, Result};
use crate::grid::{
    effective_radius, indicator, nearest_stamp, volume, GridSpec, IndicatorMode, OccupancyHistory, ScalarField,
    BOUNDARY_MARGIN_CELLS,
};
use crate::velocity::VelocityProvider;

/// Discretization of the mean-curvature term `|Du| div(Du/|Du|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurvatureScheme {
    /// Relaxation toward the median of `u` on a sphere of radius
    /// `radius_cells·h`. Monotone, so the discrete comparison principle holds
    /// with curvature switched on.
    Median { radius_cells: f64, directions: usize },
    /// Central differences with the `ε_g`-regularized gradient norm. Accurate
    /// but not monotone.
    Central,
}

impl Default for CurvatureScheme {
    fn default() -> Self {
        Self::Median { radius_cells: 3.0, directions: 32 }
    }
}

/// Redistancing stride used when it is switched on without an explicit value.
pub const DEFAULT_REDISTANCE_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    /// Adds the curvature term even when the law does not carry one.
    pub curvature_enabled: bool,
    /// `ε_g`; `None` means one grid spacing.
    pub grad_regularization: Option<f64>,
    pub cfl_safety: f64,
    /// Reinitialize every this many steps; 0 disables it.
    pub redistance_every: usize,
    pub curvature_scheme: CurvatureScheme,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            curvature_enabled: false,
            grad_regularization: None,
            cfl_safety: 0.5,
            redistance_every: 0,
            curvature_scheme: CurvatureScheme::default(),
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(FrontError::InvalidParameter(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if let Some(eps) = self.grad_regularization {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(FrontError::InvalidParameter(format!(
                    "grad_regularization must be positive, got {eps}"
                )));
            }
        }
        if let CurvatureScheme::Median { radius_cells, directions } = self.curvature_scheme {
            if !(radius_cells >= 1.0 && radius_cells.is_finite()) {
                return Err(FrontError::InvalidParameter(format!(
                    "median radius must be at least one cell, got {radius_cells}"
                )));
            }
            if directions < 4 || directions % 2 != 0 {
                return Err(FrontError::InvalidParameter(format!(
                    "median direction count must be even and at least 4, got {directions}"
                )));
            }
        }
        Ok(())
    }

    pub fn epsilon(&self, grid: &GridSpec) -> f64 {
        self.grad_regularization.unwrap_or(grid.spacing())
    }

    /// Largest stable step for the given speed bound, including `cfl_safety`.
    pub fn cfl_dt(&self, grid: &GridSpec, c_max: f64, curvature: bool) -> f64 {
        let dim = grid.dim();
        let h = grid.spacing();
        match self.curvature_scheme {
            CurvatureScheme::Median { radius_cells, .. } if curvature && dim > 1 => {
                let tau = median_relaxation_time(radius_cells * h, dim);
                self.cfl_safety / ((dim as f64).sqrt() * c_max / h + 1.0 / tau)
            }
            _ => cfl_dt(c_max, h, curvature && dim > 1, self.cfl_safety, dim),
        }
    }
}

/// `safety · min(h/(√N c_max), h²/(4N))`, the second term only with curvature.
pub fn cfl_dt(c_max: f64, h: f64, curvature_enabled: bool, cfl_safety: f64, dim: usize) -> f64 {
    let transport = h / ((dim as f64).sqrt() * c_max.max(1e-14));
    let diffusion = if curvature_enabled { h * h / (4.0 * dim as f64) } else { f64::INFINITY };
    cfl_safety * transport.min(diffusion)
}

/// Time scale `τ` with `(median - u)/τ ≈ |Du|·curvature` for sphere radius `ε`.
fn median_relaxation_time(eps: f64, dim: usize) -> f64 {
    eps * eps / (2.0 * (dim as f64 - 1.0))
}

/// One-sided differences `(D⁻u, D⁺u)` per axis; a missing neighbour gives 0.
#[inline]
fn one_sided(values: &[f64], grid: &GridSpec, strides: &[usize; 3], flat: usize, idx: &[usize; 3]) -> [(f64, f64); 3] {
    let h = grid.spacing();
    let last = grid.points_per_axis() - 1;
    let u = values[flat];
    let mut out = [(0.0, 0.0); 3];
    for a in 0..grid.dim() {
        let s = strides[a];
        let dm = if idx[a] > 0 { (u - values[flat - s]) / h } else { 0.0 };
        let dp = if idx[a] < last { (values[flat + s] - u) / h } else { 0.0 };
        out[a] = (dm, dp);
    }
    out
}

/// Godunov upwind norm: expanding (`c ≥ 0`) takes the steeper inward slope,
/// shrinking the mirrored choice.
#[inline]
fn godunov_norm(diffs: &[(f64, f64); 3], dim: usize, c: f64) -> f64 {
    let mut sum = 0.0;
    for &(dm, dp) in diffs.iter().take(dim) {
        let term = if c >= 0.0 {
            dm.min(0.0).powi(2).max(dp.max(0.0).powi(2))
        } else {
            dm.max(0.0).powi(2).max(dp.min(0.0).powi(2))
        };
        sum += term;
    }
    sum.sqrt()
}

/// Upwind approximation of `|Du|` for the sign of `c` at each node.
pub fn gradient_upwind(u: &ScalarField, c: &ScalarField) -> Result<ScalarField> {
    let grid = *u.grid();
    if !grid.same_nodes(c.grid()) {
        return Err(FrontError::GridMismatch("velocity and level-set grids differ".into()));
    }
    let strides = grid.strides();
    let values = u.values();
    let out = (0..grid.node_count())
        .into_par_iter()
        .map(|i| {
            let idx = grid.multi_index(i);
            godunov_norm(&one_sided(values, &grid, &strides, i, &idx), grid.dim(), c.values()[i])
        })
        .collect();
    Ok(ScalarField::from_raw(grid, out))
}

/// `Δu - pᵀD²u p / (|p|² + ε²)` by central differences, i.e.
/// `div(Du/√(|Du|²+ε²))·√(|Du|²+ε²)`; zero on the boundary layer.
pub fn curvature_term(u: &ScalarField, eps: f64) -> ScalarField {
    let grid = *u.grid();
    let dim = grid.dim();
    let h = grid.spacing();
    let strides = grid.strides();
    let v = u.values();
    let out = (0..grid.node_count())
        .into_par_iter()
        .map(|i| {
            if dim < 2 || grid.is_boundary(i) {
                return 0.0;
            }
            let mut p = [0.0; 3];
            let mut hess = [[0.0; 3]; 3];
            for a in 0..dim {
                let sa = strides[a];
                p[a] = (v[i + sa] - v[i - sa]) / (2.0 * h);
                hess[a][a] = (v[i + sa] - 2.0 * v[i] + v[i - sa]) / (h * h);
                for b in (a + 1)..dim {
                    let sb = strides[b];
                    let mixed = (v[i + sa + sb] - v[i + sa - sb] - v[i - sa + sb] + v[i - sa - sb]) / (4.0 * h * h);
                    hess[a][b] = mixed;
                    hess[b][a] = mixed;
                }
            }
            let mut lap = 0.0;
            let mut php = 0.0;
            let mut p2 = 0.0;
            for a in 0..dim {
                lap += hess[a][a];
                p2 += p[a] * p[a];
                for b in 0..dim {
                    php += p[a] * hess[a][b] * p[b];
                }
            }
            lap - php / (p2 + eps * eps)
        })
        .collect();
    ScalarField::from_raw(grid, out)
}

/// Unit directions on the sphere, closed under `θ ↦ -θ`.
fn median_directions(dim: usize, count: usize) -> Vec<[f64; 3]> {
    match dim {
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / count as f64;
                [a.cos(), a.sin(), 0.0]
            })
            .collect(),
        3 => {
            // Fibonacci points on the upper hemisphere and their antipodes
            let half = count / 2;
            let golden = PI * (3.0 - 5f64.sqrt());
            let mut dirs = Vec::with_capacity(count);
            for k in 0..half {
                let z = (k as f64 + 0.5) / half as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * k as f64;
                dirs.push([r * phi.cos(), r * phi.sin(), z]);
            }
            let mirrored: Vec<[f64; 3]> = dirs.iter().map(|d| [-d[0], -d[1], -d[2]]).collect();
            dirs.extend(mirrored);
            dirs
        }
        _ => Vec::new(),
    }
}

/// A sampling offset split into whole cells and a fraction in `[0, 1)`, so
/// that every node away from the faces uses bit-identical weights.
struct SampleOffset {
    whole: [isize; 3],
    frac: [f64; 3],
}

impl SampleOffset {
    fn new(offset: &[f64; 3], dim: usize) -> Self {
        let mut whole = [0isize; 3];
        let mut frac = [0.0; 3];
        for a in 0..dim {
            let f = offset[a].floor();
            whole[a] = f as isize;
            frac[a] = offset[a] - f;
        }
        Self { whole, frac }
    }
}

/// Multilinear interpolation of `v - v[flat]` at `idx + offset`; positions
/// outside the box are clamped to it.
#[inline]
fn interpolate_difference(
    values: &[f64],
    grid: &GridSpec,
    strides: &[usize; 3],
    flat: usize,
    idx: &[usize; 3],
    off: &SampleOffset,
) -> f64 {
    let dim = grid.dim();
    let last = grid.points_per_axis() as isize - 1;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..dim {
        let lo = idx[a] as isize + off.whole[a];
        let hi = lo + (off.frac[a] > 0.0) as isize;
        if lo >= 0 && hi <= last {
            base[a] = lo as usize;
            frac[a] = off.frac[a];
        } else {
            // clamped fallback near the faces
            let p = (idx[a] as f64 + off.whole[a] as f64 + off.frac[a]).clamp(0.0, last as f64);
            let f = p.floor().min(last as f64 - 1.0);
            base[a] = f as usize;
            frac[a] = p - f;
        }
    }
    let centre = values[flat];
    let mut acc = 0.0;
    for corner in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut at = 0;
        for a in 0..dim {
            let bit = (corner >> a) & 1;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            at += (base[a] + bit) * strides[a];
        }
        if w != 0.0 {
            acc += w * (values[at] - centre);
        }
    }
    acc
}

/// Median of `u(x + εθ) - u(x)` over the sampling sphere around each node.
fn median_increment(u: &ScalarField, radius_cells: f64, directions: usize) -> Vec<f64> {
    let grid = *u.grid();
    let dim = grid.dim();
    let strides = grid.strides();
    let offsets: Vec<SampleOffset> = median_directions(dim, directions)
        .iter()
        .map(|d| SampleOffset::new(&[radius_cells * d[0], radius_cells * d[1], radius_cells * d[2]], dim))
        .collect();
    let v = u.values();
    (0..grid.node_count())
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(offsets.len()),
            |samples, i| {
                let idx = grid.multi_index(i);
                samples.clear();
                for off in &offsets {
                    samples.push(interpolate_difference(v, &grid, &strides, i, &idx, off));
                }
                median_even(samples)
            },
        )
        .collect()
}

/// Mean of the two middle order statistics of an even-length sample.
fn median_even(samples: &mut [f64]) -> f64 {
    let n = samples.len();
    let mid = n / 2;
    let (lower, upper_mid, _) = samples.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper_mid;
    let lower = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    0.5 * (lower + upper)
}

/// One explicit Euler step. The boundary layer is left unchanged.
///
/// `curvature` switches the mean-curvature term on for this step (the
/// config's own flag is or-ed in).
pub fn step(u: &ScalarField, c: &ScalarField, config: &StepperConfig, dt: f64, curvature: bool) -> Result<ScalarField> {
    let grid = *u.grid();
    if !grid.same_nodes(c.grid()) {
        return Err(FrontError::GridMismatch("velocity and level-set grids differ".into()));
    }
    let curvature = (curvature || config.curvature_enabled) && grid.dim() > 1;
    let limit = config.cfl_dt(&grid, c.max_abs(), curvature);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(FrontError::CflViolation { dt, limit });
    }
    let transport = gradient_upwind(u, c)?;
    let v = u.values();
    let out: Vec<f64> = match (curvature, config.curvature_scheme) {
        (false, _) => (0..v.len())
            .into_par_iter()
            .map(|i| if grid.is_boundary(i) { v[i] } else { v[i] + dt * c.values()[i] * transport.values()[i] })
            .collect(),
        (true, CurvatureScheme::Central) => {
            let kappa = curvature_term(u, config.epsilon(&grid));
            (0..v.len())
                .into_par_iter()
                .map(|i| {
                    if grid.is_boundary(i) {
                        v[i]
                    } else {
                        v[i] + dt * (c.values()[i] * transport.values()[i] + kappa.values()[i])
                    }
                })
                .collect()
        }
        (true, CurvatureScheme::Median { radius_cells, directions }) => {
            let lambda = dt / median_relaxation_time(radius_cells * grid.spacing(), grid.dim());
            let med = median_increment(u, radius_cells, directions);
            (0..v.len())
                .into_par_iter()
                .map(|i| {
                    if grid.is_boundary(i) {
                        v[i]
                    } else {
                        v[i] + lambda * med[i] + dt * c.values()[i] * transport.values()[i]
                    }
                })
                .collect()
        }
    };
    ScalarField::checked(grid, out, "level-set step")
}

/// One row of the per-stamp step log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLogRow {
    pub t: f64,
    /// Last substep size used to reach `t`.
    pub dt: f64,
    pub substeps: usize,
    pub c_max: f64,
    pub volume: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub effective_radius: f64,
}

pub const STEP_LOG_HEADER: &str = "t,dt,substeps,c_max,volume,min_u,max_u,effective_radius";

impl StepLogRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{:.9e},{:.9e},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.t, self.dt, self.substeps, self.c_max, self.volume, self.min_u, self.max_u, self.effective_radius
        )
    }
}

/// Level-set values at the stored stamps, with the run diagnostics.
#[derive(Debug, Clone)]
pub struct FieldHistory {
    pub grid: GridSpec,
    pub steps: Vec<(f64, ScalarField)>,
    pub log: Vec<StepLogRow>,
    /// First stored time at which `{u ≥ 0}` came within the boundary margin.
    pub boundary_touch: Option<f64>,
    pub total_substeps: usize,
}

impl FieldHistory {
    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|(t, _)| *t).collect()
    }

    pub fn last(&self) -> &ScalarField {
        &self.steps.last().expect("history is never empty").1
    }

    pub fn nearest(&self, t: f64) -> &ScalarField {
        &self.steps[nearest_stamp(self.steps.iter().map(|(s, _)| *s), t)].1
    }

    /// Maximal selection `1_{u ≥ 0}` at every stamp.
    pub fn sharp_indicators(&self) -> Result<OccupancyHistory> {
        OccupancyHistory::new(
            self.grid,
            self.steps.iter().map(|(t, u)| (*t, indicator(u, IndicatorMode::Sharp, 0.0))).collect(),
        )
    }

    /// `(volume/ω_N)^{1/N}` of the sharp indicator at each stamp.
    pub fn effective_radii(&self) -> Vec<(f64, f64)> {
        self.steps
            .iter()
            .map(|(t, u)| (*t, effective_radius(volume(&indicator(u, IndicatorMode::Sharp, 0.0)), self.grid.dim())))
            .collect()
    }

    pub fn log_csv(&self) -> String {
        let mut s = String::from(STEP_LOG_HEADER);
        s.push('\n');
        for row in &self.log {
            s.push_str(&row.to_csv_line());
            s.push('\n');
        }
        s
    }
}

fn log_row(u: &ScalarField, t: f64, dt: f64, substeps: usize, c_max: f64) -> StepLogRow {
    let vol = volume(&indicator(u, IndicatorMode::Sharp, 0.0));
    StepLogRow {
        t,
        dt,
        substeps,
        c_max,
        volume: vol,
        min_u: u.min(),
        max_u: u.max(),
        effective_radius: effective_radius(vol, u.grid().dim()),
    }
}

/// Evolves `u0` over the stamps of `chi` with the velocity frozen to `chi`.
///
/// Within each stamp interval the step size follows the CFL bound of the
/// current speed; `u` is stored at every stamp of `chi`.
pub fn solve_frozen(
    provider: &mut VelocityProvider,
    chi: &OccupancyHistory,
    u0: &ScalarField,
    config: &StepperConfig,
) -> Result<FieldHistory> {
    config.validate()?;
    let grid = *u0.grid();
    if !grid.same_nodes(chi.grid()) {
        return Err(FrontError::GridMismatch("initial data and occupancy grids differ".into()));
    }
    let started = Instant::now();
    let curvature = provider.law().has_curvature() || config.curvature_enabled;
    let times = chi.times();
    let t_final = *times.last().expect("occupancy history is never empty");
    let min_dt = 1e-12 * t_final;

    let mut u = u0.clone();
    let mut steps = vec![(0.0, u.clone())];
    let mut log = vec![log_row(&u, 0.0, 0.0, 0, 0.0)];
    let mut boundary_touch = if u.touches_boundary(BOUNDARY_MARGIN_CELLS) { Some(0.0) } else { None };
    let mut total = 0usize;
    let mut t = 0.0;

    for &target in &times[1..] {
        let mut substeps = 0;
        let mut last_dt = 0.0;
        let mut c_max: f64 = 0.0;
        while t < target {
            let c = provider.prepare(t, chi)?;
            let speed = c.max_abs();
            c_max = c_max.max(speed);
            let limit = config.cfl_dt(&grid, speed, curvature);
            let remaining = target - t;
            let dt = limit.min(remaining);
            if dt < min_dt && remaining > min_dt {
                return Err(FrontError::CflDegenerate(dt));
            }
            u = step(&u, &c, config, dt, curvature)?;
            substeps += 1;
            total += 1;
            last_dt = dt;
            t = if dt == remaining { target } else { t + dt };
            if config.redistance_every > 0 && total % config.redistance_every == 0 {
                u = redistance(&u).field;
            }
        }
        if boundary_touch.is_none() && u.touches_boundary(BOUNDARY_MARGIN_CELLS) {
            warn!("front reached the boundary margin at t = {target:.6}");
            boundary_touch = Some(target);
        }
        let row = log_row(&u, target, last_dt, substeps, c_max);
        debug!(
            "t = {:.5} dt = {:.3e} substeps = {} c_max = {:.4} volume = {:.6} radius = {:.5}",
            row.t, row.dt, row.substeps, row.c_max, row.volume, row.effective_radius
        );
        log.push(row);
        steps.push((target, u.clone()));
    }
    debug!("frozen solve: {total} substeps in {:.3}s", started.elapsed().as_secs_f64());
    Ok(FieldHistory { grid, steps, log, boundary_touch, total_substeps: total })
}

/// Result of [`redistance`].
#[derive(Debug, Clone, PartialEq)]
pub struct RedistanceOutcome {
    pub field: ScalarField,
    /// Set when `u` had a single sign and no zero contour to measure from.
    pub no_interface: bool,
}

/// Signed distance to the linearly interpolated zero contour of `u` by fast
/// sweeping. The sign of every node is preserved exactly.
pub fn redistance(u: &ScalarField) -> RedistanceOutcome {
    let grid = *u.grid();
    let dim = grid.dim();
    let h = grid.spacing();
    let m = grid.points_per_axis();
    let strides = grid.strides();
    let v = u.values();
    let n = v.len();
    let inside = |x: f64| x >= 0.0;

    // distances of nodes adjacent to a sign change, from the axis crossings
    let mut dist = vec![f64::INFINITY; n];
    let mut fixed = vec![false; n];
    let mut any = false;
    for i in 0..n {
        if v[i] == 0.0 {
            dist[i] = 0.0;
            fixed[i] = true;
            any = true;
            continue;
        }
        let idx = grid.multi_index(i);
        let mut inv2 = 0.0;
        for a in 0..dim {
            let mut d_axis = f64::INFINITY;
            for (ok, j) in [(idx[a] > 0, i.wrapping_sub(strides[a])), (idx[a] + 1 < m, i + strides[a])] {
                if ok && inside(v[j]) != inside(v[i]) {
                    d_axis = d_axis.min(h * v[i].abs() / (v[i] - v[j]).abs());
                }
            }
            if d_axis.is_finite() {
                inv2 += 1.0 / (d_axis * d_axis).max(f64::MIN_POSITIVE);
            }
        }
        if inv2 > 0.0 {
            dist[i] = 1.0 / inv2.sqrt();
            fixed[i] = true;
            any = true;
        }
    }

    if !any {
        let magnitude = 2.0 * grid.half_extent() * (dim as f64).sqrt();
        let values = v.iter().map(|&x| if inside(x) { magnitude } else { -magnitude }).collect();
        return RedistanceOutcome { field: ScalarField::from_raw(grid, values), no_interface: true };
    }

    // Gauss-Seidel sweeps in all 2^N axis orderings until nothing changes
    let orders = 1usize << dim;
    for _round in 0..64 {
        let mut changed = false;
        for order in 0..orders {
            for k in 0..n {
                let mut idx = grid.multi_index(k);
                for a in 0..dim {
                    if (order >> a) & 1 == 1 {
                        idx[a] = m - 1 - idx[a];
                    }
                }
                let i = grid.flat_index(&idx[..dim]);
                if fixed[i] {
                    continue;
                }
                let mut mins = [f64::INFINITY; 3];
                for a in 0..dim {
                    let lo = if idx[a] > 0 { dist[i - strides[a]] } else { f64::INFINITY };
                    let hi = if idx[a] + 1 < m { dist[i + strides[a]] } else { f64::INFINITY };
                    mins[a] = lo.min(hi);
                }
                let candidate = eikonal_update(&mut mins[..dim], h);
                if candidate < dist[i] {
                    if dist[i].is_finite() && dist[i] - candidate <= 1e-13 * candidate {
                        dist[i] = candidate;
                        continue;
                    }
                    dist[i] = candidate;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let values = v
        .iter()
        .zip(&dist)
        .map(|(&x, &d)| {
            if x == 0.0 {
                0.0
            } else if inside(x) {
                d.max(f64::MIN_POSITIVE)
            } else {
                -d.max(f64::MIN_POSITIVE)
            }
        })
        .collect();
    RedistanceOutcome { field: ScalarField::from_raw(grid, values), no_interface: false }
}

/// Godunov solution of `Σ ((d - a_k)^+)² = h²`.
fn eikonal_update(mins: &mut [f64], h: f64) -> f64 {
    mins.sort_by(f64::total_cmp);
    if !mins[0].is_finite() {
        return f64::INFINITY;
    }
    let mut d = mins[0] + h;
    let mut sum = mins[0];
    let mut sum2 = mins[0] * mins[0];
    for k in 1..mins.len() {
        if d <= mins[k] {
            break;
        }
        let count = (k + 1) as f64;
        sum += mins[k];
        sum2 += mins[k] * mins[k];
        let disc = sum * sum - count * (sum2 - h * h);
        if disc < 0.0 {
            break;
        }
        d = (sum + disc.sqrt()) / count;
    }
    d
}
