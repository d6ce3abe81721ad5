//! The heat equation with occupancy-switched sources,
//! `v_t - Δv = g⁺(v) χ + g⁻(v) (1 - χ)`.
//!
//! The production path is an explicit finite-difference stepper with
//! zero-Neumann (mirror) box boundary. The Duhamel quadrature is an
//! independent check of a computed history: it rebuilds `v` from the heat
//! kernel, the initial datum and the sources evaluated on that history.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{FrontError, Result};
use crate::grid::{nearest_stamp, GridSpec, OccupancyHistory, ScalarField};
use crate::scalar_fn::ScalarFn;

/// Heat kernel `G(y, s) = (4πs)^{-N/2} exp(-|y|² / 4s)` with `N = y.len()`.
pub fn green_eval(y: &[f64], s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(FrontError::InvalidParameter(format!("heat kernel needs s > 0, got {s}")));
    }
    let r2: f64 = y.iter().map(|v| v * v).sum();
    Ok((4.0 * PI * s).powf(-(y.len() as f64) / 2.0) * (-r2 / (4.0 * s)).exp())
}

#[inline]
fn green_1d(z: f64, s: f64) -> f64 {
    (4.0 * PI * s).powf(-0.5) * (-z * z / (4.0 * s)).exp()
}

/// Stability limit `h² / (2N)` of the explicit scheme.
pub fn heat_cfl_limit(grid: &GridSpec) -> f64 {
    grid.spacing().powi(2) / (2.0 * grid.dim() as f64)
}

/// Solution value and clock of the heat equation.
#[derive(Debug, Clone)]
pub struct HeatState {
    pub v: ScalarField,
    pub t: f64,
    /// `max(|g_lower|, |g_upper|)`
    pub gamma: f64,
    v0_sup: f64,
}

impl HeatState {
    pub fn new(v0: ScalarField, gamma: f64) -> Self {
        let v0_sup = v0.max_abs();
        Self { v: v0, t: 0.0, gamma, v0_sup }
    }

    /// `‖v0‖∞ + γ t - ‖v(t)‖∞`; nonnegative up to rounding.
    pub fn bound_slack(&self) -> f64 {
        self.v0_sup + self.gamma * self.t - self.v.max_abs()
    }
}

/// One explicit Euler step with the `(2N+1)`-point Laplacian.
pub fn heat_step_fd(
    state: &HeatState,
    chi: &ScalarField,
    g_plus: &ScalarFn,
    g_minus: &ScalarFn,
    dt: f64,
) -> Result<HeatState> {
    let grid = *state.v.grid();
    if !grid.same_nodes(chi.grid()) {
        return Err(FrontError::GridMismatch("occupancy and heat field differ".into()));
    }
    let limit = heat_cfl_limit(&grid);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(FrontError::CflViolation { dt, limit });
    }
    let inv_h2 = 1.0 / grid.spacing().powi(2);
    let strides = grid.strides();
    let last = grid.points_per_axis() - 1;
    let dim = grid.dim();
    let v = state.v.values();
    let c = chi.values();
    let next: Vec<f64> = (0..v.len())
        .into_par_iter()
        .map(|i| {
            let idx = grid.multi_index(i);
            let mut lap = 0.0;
            for axis in 0..dim {
                let s = strides[axis];
                let k = idx[axis];
                // mirror ghost nodes: v[-1] = v[1], v[M] = v[M-2]
                let left = if k == 0 { v[i + s] } else { v[i - s] };
                let right = if k == last { v[i - s] } else { v[i + s] };
                lap += left - 2.0 * v[i] + right;
            }
            let source = g_plus.eval(v[i]) * c[i] + g_minus.eval(v[i]) * (1.0 - c[i]);
            v[i] + dt * (lap * inv_h2 + source)
        })
        .collect();
    Ok(HeatState {
        v: ScalarField::checked(grid, next, "heat step")?,
        t: state.t + dt,
        gamma: state.gamma,
        v0_sup: state.v0_sup,
    })
}

/// Stored heat solution `(t, v(·, t))`.
#[derive(Debug, Clone)]
pub struct HeatHistory {
    pub grid: GridSpec,
    pub steps: Vec<(f64, ScalarField)>,
}

impl HeatHistory {
    pub fn nearest(&self, t: f64) -> &ScalarField {
        &self.steps[nearest_stamp(self.steps.iter().map(|(s, _)| *s), t)].1
    }

    pub fn last(&self) -> &ScalarField {
        &self.steps.last().expect("heat history is never empty").1
    }
}

/// Runs the explicit stepper from 0 to `t_final` with steps no larger than
/// `dt`, sampling `χ` at the nearest stored stamp, and records every
/// `store_every`-th state plus the final one.
pub fn solve_heat(
    v0: &ScalarField,
    chi: &OccupancyHistory,
    g_plus: &ScalarFn,
    g_minus: &ScalarFn,
    gamma: f64,
    t_final: f64,
    dt: f64,
    store_every: usize,
) -> Result<HeatHistory> {
    let n = (t_final / dt).ceil().max(1.0) as usize;
    let step = t_final / n as f64;
    let mut state = HeatState::new(v0.clone(), gamma);
    let mut steps = vec![(0.0, v0.clone())];
    for k in 0..n {
        state = heat_step_fd(&state, chi.nearest(state.t), g_plus, g_minus, step)?;
        if k + 1 == n {
            state.t = t_final;
        }
        if (k + 1) % store_every.max(1) == 0 || k + 1 == n {
            steps.push((state.t, state.v.clone()));
        }
    }
    Ok(HeatHistory { grid: *v0.grid(), steps })
}

/// Per-axis sum of the 1D kernel over the Neumann images of each node
/// coordinate, i.e. the 1D kernel of the evenly reflected (period `4L`) box.
fn image_kernel_1d(grid: &GridSpec, x: f64, s: f64) -> Vec<f64> {
    let l = grid.half_extent();
    let period = 4.0 * l;
    let reach = 12.0 * (2.0 * s).sqrt() + period;
    let copies = (reach / period).ceil() as i64;
    (0..grid.points_per_axis())
        .map(|i| {
            let y = grid.coordinate(i);
            let mut acc = 0.0;
            for m in -copies..=copies {
                let shift = m as f64 * period;
                acc += green_1d(x - (y + shift), s);
                // reflected family 2L - y; both face nodes already belong
                // to the translated family
                if i != grid.points_per_axis() - 1 && i != 0 {
                    acc += green_1d(x - (2.0 * l - y + shift), s);
                }
            }
            acc
        })
        .collect()
}

/// `Σ_y G_box(x - y, s) f(y) h^N` over the box nodes.
fn kernel_quadrature(grid: &GridSpec, x: &[f64], s: f64, f: &[f64]) -> f64 {
    let kernels: Vec<Vec<f64>> = (0..grid.dim()).map(|a| image_kernel_1d(grid, x[a], s)).collect();
    // Full weight h^N everywhere: with the mirror images the box nodes tile
    // the infinite lattice exactly once.
    let h_n = grid.cell_volume();
    f.iter()
        .enumerate()
        .map(|(n, fy)| {
            let idx = grid.multi_index(n);
            let k: f64 = (0..grid.dim()).map(|a| kernels[a][idx[a]]).product();
            h_n * k * fy
        })
        .sum()
}

/// Quadrature mass of `G(·, s)` centred in the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenMass {
    pub s: f64,
    /// `Σ G(x, s) w_x` over the box nodes only.
    pub truncated: f64,
    /// Same sum with the Neumann mirror images folded back into the box.
    pub reflected: f64,
}

impl GreenMass {
    /// `|reflected mass - 1|`, the normalization residual of the box kernel.
    pub fn residual(&self) -> f64 {
        (self.reflected - 1.0).abs()
    }
}

pub fn green_mass(grid: &GridSpec, s: f64) -> Result<GreenMass> {
    if !(s > 0.0) {
        return Err(FrontError::InvalidParameter(format!("Green kernel needs s > 0, got {s}")));
    }
    let dim = grid.dim();
    let truncated = (0..grid.node_count())
        .into_par_iter()
        .map(|i| {
            let x = grid.position(i);
            green_eval(&x[..dim], s).map(|g| g * grid.weight(i))
        })
        .sum::<Result<f64>>()?;
    let origin = [0.0; 3];
    let reflected = kernel_quadrature(grid, &origin[..dim], s, &vec![1.0; grid.node_count()]);
    Ok(GreenMass { s, truncated, reflected })
}

/// Multilinear interpolation of a node field at a point of the box.
fn interpolate(field: &ScalarField, x: &[f64]) -> f64 {
    let grid = field.grid();
    let h = grid.spacing();
    let last = grid.points_per_axis() - 1;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..grid.dim() {
        let r = ((x[a] + grid.half_extent()) / h).clamp(0.0, last as f64);
        let i = (r.floor() as usize).min(last - 1);
        base[a] = i;
        frac[a] = r - i as f64;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << grid.dim()) {
        let mut w = 1.0;
        let mut idx = base;
        for a in 0..grid.dim() {
            if corner >> a & 1 == 1 {
                idx[a] += 1;
                w *= frac[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        if w != 0.0 {
            acc += w * field.values()[grid.flat_index(&idx)];
        }
    }
    acc
}

/// Duhamel representation of `v(x, t)` evaluated by quadrature on a
/// computed history:
/// `∫ G(x-y,t) v0(y) dy + ∫₀ᵗ ∫ G(x-y,t-s) [g⁺(v)χ + g⁻(v)(1-χ)](y,s) dy ds`.
///
/// Time is split into slabs of width at most `quad_dt`, integrated at their
/// midpoints; the last slab, where the kernel concentrates, carries the
/// source at `x` with unit mass. The spatial kernel is that of the mirrored
/// box, consistent with the Neumann boundary of the stepper.
pub fn duhamel_eval(
    v0: &ScalarField,
    chi: &OccupancyHistory,
    v_history: &HeatHistory,
    g_plus: &ScalarFn,
    g_minus: &ScalarFn,
    x: &[f64],
    t: f64,
    quad_dt: f64,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(FrontError::InvalidParameter(format!("Duhamel evaluation needs t > 0, got {t}")));
    }
    if !(quad_dt > 0.0) {
        return Err(FrontError::InvalidParameter("quad_dt must be positive".into()));
    }
    let grid = *v0.grid();
    if x.len() != grid.dim() {
        return Err(FrontError::InvalidParameter("evaluation point has the wrong dimension".into()));
    }
    let source_at = |s: f64| -> Vec<f64> {
        let v = v_history.nearest(s).values();
        let c = chi.nearest(s).values();
        v.iter()
            .zip(c)
            .map(|(&vi, &ci)| g_plus.eval(vi) * ci + g_minus.eval(vi) * (1.0 - ci))
            .collect()
    };
    let mut total = kernel_quadrature(&grid, x, t, v0.values());
    let slabs = (t / quad_dt).ceil().max(1.0) as usize;
    let width = t / slabs as f64;
    let slab_terms: Vec<f64> = (0..slabs - 1)
        .into_par_iter()
        .map(|j| {
            let mid = (j as f64 + 0.5) * width;
            width * kernel_quadrature(&grid, x, t - mid, &source_at(mid))
        })
        .collect();
    total += slab_terms.iter().sum::<f64>();
    let last_mid = t - 0.5 * width;
    let source = ScalarField::from_raw(grid, source_at(last_mid));
    total += width * interpolate(&source, x);
    Ok(total)
}

/// One row of the bound report.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaRow {
    pub t: f64,
    pub max_abs_v: f64,
    /// `‖v0‖∞ + γ t - max|v|`
    pub bound_i_slack: f64,
    /// Smallest constant making the space and time moduli hold up to `t`.
    pub k_fit_running: f64,
}

/// Checks of the uniform bound and fitted moduli of a heat history.
#[derive(Debug, Clone)]
pub struct LemmaReport {
    pub rows: Vec<LemmaRow>,
    /// `|v| ≤ ‖v0‖∞ + γt` at every stored time, within `1e-10`.
    pub bound_i_holds: bool,
    pub worst_bound_i_excess: f64,
    pub k_fit_space: f64,
    pub k_fit_time: f64,
    /// Whether a supplied candidate constant satisfies both moduli.
    pub candidate_holds: Option<bool>,
}

impl LemmaReport {
    pub fn k_fit(&self) -> f64 {
        self.k_fit_space.max(self.k_fit_time)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,max_abs_v,bound_i_slack,k_fit_running\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:e},{:e},{:e}", r.t, r.max_abs_v, r.bound_i_slack, r.k_fit_running);
        }
        out
    }
}

/// Tolerance of the hard uniform bound.
pub const LEMMA_BOUND_TOL: f64 = 1e-10;

fn max_adjacent_slope(field: &ScalarField) -> f64 {
    let grid = field.grid();
    let strides = grid.strides();
    let last = grid.points_per_axis() - 1;
    let v = field.values();
    let mut best: f64 = 0.0;
    for i in 0..v.len() {
        let idx = grid.multi_index(i);
        for a in 0..grid.dim() {
            if idx[a] < last {
                best = best.max((v[i + strides[a]] - v[i]).abs());
            }
        }
    }
    best / grid.spacing()
}

/// Smallest `k ≥ 0` with `a k² + b k + c ≥ 0` (`a, b ≥ 0`), or infinity.
fn smallest_k(a: f64, b: f64, c: f64) -> f64 {
    if c <= 0.0 {
        if a > 0.0 {
            (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
        } else if b > 0.0 {
            -c / b
        } else if c < -1e-14 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        0.0
    }
}

/// Checks `|v| ≤ ‖v0‖∞ + γt` (hard) and fits the constant of the space
/// modulus `|v(x)-v(y)| ≤ (‖Dv0‖∞ + γ k √t)|x-y|` and the time modulus
/// `|v(x,t)-v(x,s)| ≤ k(‖Dv0‖∞ + γ k √s)√(t-s) + γ(t-s)` (reported only).
pub fn lemma_bounds_check(
    history: &HeatHistory,
    v0: &ScalarField,
    gamma: f64,
    k_candidate: Option<f64>,
) -> LemmaReport {
    let v0_sup = v0.max_abs();
    let dv0 = max_adjacent_slope(v0);
    let mut rows = Vec::with_capacity(history.steps.len());
    let mut worst_excess = f64::NEG_INFINITY;
    let mut k_space: f64 = 0.0;
    let mut k_time: f64 = 0.0;
    let mut prev: Option<(f64, &ScalarField)> = None;
    for (t, v) in &history.steps {
        let max_abs = v.max_abs();
        let slack = v0_sup + gamma * t - max_abs;
        worst_excess = worst_excess.max(-slack);
        if *t > 0.0 {
            let slope = max_adjacent_slope(v);
            let k = smallest_k(0.0, gamma * t.sqrt(), dv0 - slope);
            k_space = k_space.max(k);
        }
        if let Some((s, vs)) = prev {
            let jump = v
                .values()
                .iter()
                .zip(vs.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let dt = t - s;
            let k = smallest_k(gamma * s.sqrt() * dt.sqrt(), dv0 * dt.sqrt(), gamma * dt - jump);
            k_time = k_time.max(k);
        }
        prev = Some((*t, v));
        rows.push(LemmaRow {
            t: *t,
            max_abs_v: max_abs,
            bound_i_slack: slack,
            k_fit_running: k_space.max(k_time),
        });
    }
    let candidate_holds = k_candidate.map(|k| k >= k_space && k >= k_time);
    LemmaReport {
        rows,
        bound_i_holds: worst_excess <= LEMMA_BOUND_TOL,
        worst_bound_i_excess: worst_excess,
        k_fit_space: k_space,
        k_fit_time: k_time,
        candidate_holds,
    }
}
