//! Nonlocal normal velocities `c[χ](·, t)`.
//!
//! A [`VelocityLaw`] describes how the velocity depends on the occupancy;
//! a [`VelocityProvider`] evaluates it slice by slice in increasing time,
//! carrying the heat field for the Fitzhugh–Nagumo reduction.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{FrontError, Result};
use crate::grid::{nearest_stamp, volume, GridSpec, OccupancyHistory, ScalarField};
use crate::heat::{heat_cfl_limit, heat_step_fd, HeatState};
use crate::scalar_fn::{sample_range, ScalarFn};

/// A convolution kernel sampled on a centered patch of `(2r+1)^N` nodes
/// with the same spacing as the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPatch {
    field: ScalarField,
    radius: usize,
}

impl KernelPatch {
    /// Wraps a field sampled on a centered patch (odd number of nodes per axis).
    pub fn from_field(field: ScalarField) -> Result<Self> {
        let m = field.grid().points_per_axis();
        if m % 2 == 0 {
            return Err(FrontError::InvalidLaw(format!(
                "kernel patch needs an odd node count per axis, got {m}"
            )));
        }
        Ok(Self { field, radius: (m - 1) / 2 })
    }

    /// Samples `f(z)` at the offsets `z ∈ h·{-r..r}^N`.
    pub fn from_fn<F>(dim: usize, spacing: f64, radius: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let radius = radius.max(1);
        let grid = GridSpec::new(dim, radius as f64 * spacing, 2 * radius + 1, 1.0, 1.0)?;
        Self::from_field(ScalarField::from_fn(grid, f)?)
    }

    /// `amplitude · exp(-|z|² / 2σ²)`, truncated at `4σ`.
    pub fn gaussian(grid: &GridSpec, sigma: f64, amplitude: f64) -> Result<Self> {
        check_width(sigma)?;
        let radius = patch_radius(grid, 4.0 * sigma);
        Self::from_fn(grid.dim(), grid.spacing(), radius, |z| {
            amplitude * (-norm2(z) / (2.0 * sigma * sigma)).exp()
        })
    }

    /// `a` on a patch wide enough to couple any two nodes of the box.
    pub fn constant(grid: &GridSpec, a: f64) -> Result<Self> {
        Self::from_fn(grid.dim(), grid.spacing(), grid.points_per_axis() - 1, |_| a)
    }

    /// Sign-changing difference of Gaussians
    /// `a₁ exp(-|z|²/2σ²) - a₂ exp(-|z|²/8σ²)`, truncated at `8σ`.
    pub fn mexican_hat(grid: &GridSpec, sigma: f64, a1: f64, a2: f64) -> Result<Self> {
        check_width(sigma)?;
        let radius = patch_radius(grid, 8.0 * sigma);
        Self::from_fn(grid.dim(), grid.spacing(), radius, |z| {
            let r2 = norm2(z);
            a1 * (-r2 / (2.0 * sigma * sigma)).exp() - a2 * (-r2 / (8.0 * sigma * sigma)).exp()
        })
    }

    /// Discrete delta: `1/h^N` at the origin.
    pub fn delta(dim: usize, spacing: f64) -> Result<Self> {
        let peak = spacing.powi(dim as i32).recip();
        Self::from_fn(dim, spacing, 1, |z| if norm2(z) == 0.0 { peak } else { 0.0 })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.field.grid().spacing()
    }

    pub fn dim(&self) -> usize {
        self.field.grid().dim()
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    /// Value at an integer offset in `[-r, r]^N`.
    pub fn at(&self, offset: &[isize]) -> f64 {
        let r = self.radius as isize;
        let idx: Vec<usize> = offset.iter().map(|&o| (o + r) as usize).collect();
        self.field.values()[self.field.grid().flat_index(&idx)]
    }

    /// Discrete `‖k‖_{L¹} = Σ |k(z)| h^N`.
    pub fn l1_norm(&self) -> f64 {
        self.field.values().iter().map(|v| v.abs()).sum::<f64>() * self.field.grid().cell_volume()
    }

    /// Discrete `Σ_z |k(z + e_a) - k(z)| h^N / h`, maximized over axes, with
    /// the kernel extended by zero outside the patch.
    pub fn gradient_l1_norm(&self) -> f64 {
        let g = self.field.grid();
        let m = g.points_per_axis() as isize;
        let strides = g.strides();
        let v = self.field.values();
        let mut best: f64 = 0.0;
        for a in 0..g.dim() {
            let mut total = 0.0;
            for n in 0..v.len() {
                let idx = g.multi_index(n);
                // pairs (z, z + e_a) with z + e_a inside, plus the two edge pairs
                let next = if (idx[a] as isize) + 1 < m { v[n + strides[a]] } else { 0.0 };
                total += (next - v[n]).abs();
                if idx[a] == 0 {
                    total += v[n].abs();
                }
            }
            best = best.max(total);
        }
        best * g.cell_volume() / g.spacing()
    }
}

fn check_width(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(FrontError::InvalidLaw(format!("kernel width must be positive, got {sigma}")))
    }
}

fn patch_radius(grid: &GridSpec, reach: f64) -> usize {
    ((reach / grid.spacing()).ceil() as usize).clamp(1, grid.points_per_axis() - 1)
}

fn norm2(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

/// `Σ_y k(x - y) χ(y) w_y` over the nodes of the box, truncated at the patch.
pub fn convolve_spatial(kernel: &KernelPatch, occupancy: &ScalarField) -> Result<ScalarField> {
    let grid = *occupancy.grid();
    if kernel.dim() != grid.dim() {
        return Err(FrontError::GridMismatch("kernel and grid dimensions differ".into()));
    }
    if (kernel.spacing() - grid.spacing()).abs() > 1e-9 * grid.spacing() {
        return Err(FrontError::GridMismatch(format!(
            "kernel spacing {} differs from grid spacing {}",
            kernel.spacing(),
            grid.spacing()
        )));
    }
    let dim = grid.dim();
    let m = grid.points_per_axis();
    let weighted: Vec<f64> =
        occupancy.values().iter().enumerate().map(|(i, c)| c * grid.weight(i)).collect();

    // bounding box of the support of χ
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, &w) in weighted.iter().enumerate() {
        if w != 0.0 {
            any = true;
            let idx = grid.multi_index(i);
            for a in 0..dim {
                lo[a] = lo[a].min(idx[a]);
                hi[a] = hi[a].max(idx[a]);
            }
        }
    }
    if !any {
        return Ok(ScalarField::constant(grid, 0.0));
    }
    for a in dim..3 {
        lo[a] = 0;
        hi[a] = 0;
    }

    let r = kernel.radius();
    let kgrid = kernel.field().grid();
    let kstrides = kgrid.strides();
    let kvals = kernel.field().values();
    let strides = grid.strides();
    let out: Vec<f64> = (0..grid.node_count())
        .into_par_iter()
        .map(|i| {
            let x = grid.multi_index(i);
            // y ranges over support ∩ (x - patch)
            let mut ylo = [0usize; 3];
            let mut yhi = [0usize; 3];
            for a in 0..3 {
                if a < dim {
                    ylo[a] = lo[a].max(x[a].saturating_sub(r));
                    yhi[a] = hi[a].min((x[a] + r).min(m - 1));
                    if ylo[a] > yhi[a] {
                        return 0.0;
                    }
                }
            }
            let mut acc = 0.0;
            for y0 in ylo[0]..=yhi[0] {
                let k0 = (x[0] + r - y0) * kstrides[0];
                let o0 = y0 * strides[0];
                for y1 in ylo[1]..=yhi[1] {
                    let k1 = k0 + (x[1] + r - y1) * kstrides[1];
                    let o1 = o0 + y1 * strides[1];
                    for y2 in ylo[2]..=yhi[2] {
                        let k2 = k1 + (x[2] + r - y2) * kstrides[2];
                        acc += kvals[k2] * weighted[o1 + y2 * strides[2]];
                    }
                }
            }
            acc
        })
        .collect();
    ScalarField::checked(grid, out, "convolution")
}

/// Space-time drift `c₁(x, t)`.
#[derive(Clone)]
pub enum Drift {
    Constant(f64),
    Function(Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>),
    /// Sampled fields, used at the nearest stamp.
    PerStep(Vec<(f64, ScalarField)>),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Function(_) => f.write_str("Function(..)"),
            Self::PerStep(s) => write!(f, "PerStep({} fields)", s.len()),
        }
    }
}

impl Drift {
    fn sample(&self, grid: &GridSpec, t: f64) -> Result<ScalarField> {
        match self {
            Self::Constant(c) => Ok(ScalarField::constant(*grid, *c)),
            Self::Function(f) => ScalarField::from_fn(*grid, |x| f(x, t)),
            Self::PerStep(steps) => {
                let k = nearest_stamp(steps.iter().map(|(s, _)| *s), t);
                let field = &steps[k].1;
                if !field.grid().same_nodes(grid) {
                    return Err(FrontError::GridMismatch("drift field grid".into()));
                }
                Ok(field.clone())
            }
        }
    }
}

/// Kernel `c₀(·, t)`: fixed, or sampled per stamp.
#[derive(Debug, Clone)]
pub enum KernelSchedule {
    Static(KernelPatch),
    PerStep(Vec<(f64, KernelPatch)>),
}

impl KernelSchedule {
    fn index_at(&self, t: f64) -> usize {
        match self {
            Self::Static(_) => 0,
            Self::PerStep(s) => nearest_stamp(s.iter().map(|(t, _)| *t), t),
        }
    }

    fn patch(&self, index: usize) -> &KernelPatch {
        match self {
            Self::Static(k) => k,
            Self::PerStep(s) => &s[index].1,
        }
    }

    fn max_l1_norm(&self) -> f64 {
        match self {
            Self::Static(k) => k.l1_norm(),
            Self::PerStep(s) => s.iter().map(|(_, k)| k.l1_norm()).fold(0.0, f64::max),
        }
    }
}

/// Dislocation dynamics: `c = c₀(·,t) ⋆ χ(·,t) + c₁(x,t)`.
#[derive(Debug, Clone)]
pub struct DislocationLaw {
    pub kernel: KernelSchedule,
    pub drift: Drift,
    /// Declared bound `M` with `|c₁| ≤ M`.
    pub drift_bound: f64,
    pub with_curvature: bool,
}

impl DislocationLaw {
    pub fn new(kernel: KernelPatch, drift: Drift, drift_bound: f64, with_curvature: bool) -> Result<Self> {
        Self::with_schedule(KernelSchedule::Static(kernel), drift, drift_bound, with_curvature)
    }

    pub fn with_schedule(
        kernel: KernelSchedule,
        drift: Drift,
        drift_bound: f64,
        with_curvature: bool,
    ) -> Result<Self> {
        if !(drift_bound >= 0.0 && drift_bound.is_finite()) {
            return Err(FrontError::InvalidLaw("drift bound must be finite and nonnegative".into()));
        }
        if let KernelSchedule::PerStep(s) = &kernel {
            if s.is_empty() {
                return Err(FrontError::InvalidLaw("empty kernel schedule".into()));
            }
        }
        if let Drift::Constant(c) = drift {
            if c.abs() > drift_bound {
                return Err(FrontError::InvalidLaw(format!(
                    "constant drift {c} exceeds its declared bound {drift_bound}"
                )));
            }
        }
        Ok(Self { kernel, drift, drift_bound, with_curvature })
    }

    /// `‖c‖∞ ≤ ‖c₀‖_{L¹} + M`.
    pub fn speed_bound(&self) -> f64 {
        self.kernel.max_l1_norm() + self.drift_bound
    }
}

/// Fitzhugh–Nagumo reduction: `c = α(v)` with `v` solving the switched heat
/// equation driven by `χ`.
#[derive(Debug, Clone)]
pub struct FitzhughNagumoLaw {
    pub alpha: ScalarFn,
    pub g_plus: ScalarFn,
    pub g_minus: ScalarFn,
    pub v0: ScalarField,
    pub g_lower: f64,
    pub g_upper: f64,
}

/// Range and resolution on which the ordering of the sources is sampled.
const SOURCE_SAMPLE_HALF_RANGE: f64 = 100.0;
const SOURCE_SAMPLES: usize = 4001;

impl FitzhughNagumoLaw {
    /// Checks `g_lower ≤ g⁻(r) ≤ g⁺(r) ≤ g_upper` on a sample range that
    /// covers the reachable values of `v`.
    pub fn new(
        alpha: ScalarFn,
        g_plus: ScalarFn,
        g_minus: ScalarFn,
        v0: ScalarField,
        g_lower: f64,
        g_upper: f64,
    ) -> Result<Self> {
        if !(g_lower <= g_upper) {
            return Err(FrontError::InvalidLaw(format!("g_lower {g_lower} > g_upper {g_upper}")));
        }
        let reach = SOURCE_SAMPLE_HALF_RANGE.max(2.0 * v0.max_abs());
        for r in sample_range(-reach, reach, SOURCE_SAMPLES) {
            let (lo, hi) = (g_minus.eval(r), g_plus.eval(r));
            if !(g_lower <= lo && lo <= hi && hi <= g_upper) {
                return Err(FrontError::InvalidLaw(format!(
                    "source ordering g_lower <= g-(r) <= g+(r) <= g_upper fails at r = {r}: \
                     g- = {lo}, g+ = {hi}"
                )));
            }
        }
        Ok(Self { alpha, g_plus, g_minus, v0, g_lower, g_upper })
    }

    /// `γ = max(|g_lower|, |g_upper|)`.
    pub fn gamma(&self) -> f64 {
        self.g_lower.abs().max(self.g_upper.abs())
    }
}

/// The velocity laws of the engine.
#[derive(Debug, Clone)]
pub enum VelocityLaw {
    Constant(f64),
    Dislocation(DislocationLaw),
    FitzhughNagumo(FitzhughNagumoLaw),
    VolumeDependent { beta: ScalarFn, with_curvature: bool },
    CurvatureOnly,
}

impl VelocityLaw {
    /// False when `c` does not depend on `χ`, so the fixed-point map is constant.
    pub fn depends_on_occupancy(&self) -> bool {
        !matches!(self, Self::Constant(_) | Self::CurvatureOnly)
    }

    /// Whether the law itself carries a mean-curvature term.
    pub fn has_curvature(&self) -> bool {
        match self {
            Self::Dislocation(d) => d.with_curvature,
            Self::VolumeDependent { with_curvature, .. } => *with_curvature,
            Self::CurvatureOnly => true,
            _ => false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant(_) => "constant",
            Self::Dislocation(_) => "dislocation",
            Self::FitzhughNagumo(_) => "fitzhugh_nagumo",
            Self::VolumeDependent { .. } => "volume",
            Self::CurvatureOnly => "curvature",
        }
    }
}

/// `c = c₀(·,t) ⋆ χ(·,t) + c₁(·,t)`.
pub fn dislocation_velocity(law: &DislocationLaw, chi: &ScalarField, t: f64) -> Result<ScalarField> {
    let kernel = law.kernel.patch(law.kernel.index_at(t));
    let conv = convolve_spatial(kernel, chi)?;
    add_drift(law, conv, t)
}

fn add_drift(law: &DislocationLaw, conv: ScalarField, t: f64) -> Result<ScalarField> {
    let grid = *conv.grid();
    let drift = law.drift.sample(&grid, t)?;
    let bound = law.drift_bound * (1.0 + 1e-12) + 1e-300;
    if drift.max_abs() > bound {
        return Err(FrontError::InvalidLaw(format!(
            "drift reaches {} at t = {t}, above its declared bound {}",
            drift.max_abs(),
            law.drift_bound
        )));
    }
    let values = conv.values().iter().zip(drift.values()).map(|(a, b)| a + b).collect();
    ScalarField::checked(grid, values, "dislocation velocity")
}

/// `β(𝓛^N(χ))`, using the relaxed occupancy itself.
pub fn volume_velocity(beta: &ScalarFn, chi: &ScalarField) -> f64 {
    beta.eval(volume(chi))
}

/// Fraction of the explicit heat limit used by the provider's internal steps.
pub const HEAT_STEP_SAFETY: f64 = 0.9;

/// Stateful evaluator of a law at increasing times.
#[derive(Debug, Clone)]
pub struct VelocityProvider {
    law: VelocityLaw,
    grid: GridSpec,
    last_t: f64,
    heat: Option<HeatState>,
    heat_dt: f64,
    /// (χ stamp, kernel stamp) of the cached convolution
    cache: Option<((usize, usize), ScalarField)>,
}

impl VelocityProvider {
    pub fn new(law: VelocityLaw, grid: GridSpec) -> Result<Self> {
        let heat = match &law {
            VelocityLaw::FitzhughNagumo(fhn) => {
                if !fhn.v0.grid().same_nodes(&grid) {
                    return Err(FrontError::GridMismatch("v0 grid differs from the simulation grid".into()));
                }
                Some(HeatState::new(fhn.v0.clone(), fhn.gamma()))
            }
            _ => None,
        };
        Ok(Self { law, grid, last_t: 0.0, heat, heat_dt: HEAT_STEP_SAFETY * heat_cfl_limit(&grid), cache: None })
    }

    /// Overrides the internal heat step; it is validated on use.
    pub fn with_heat_dt(mut self, dt: f64) -> Self {
        self.heat_dt = dt;
        self
    }

    pub fn law(&self) -> &VelocityLaw {
        &self.law
    }

    pub fn last_time(&self) -> f64 {
        self.last_t
    }

    /// Heat field of the Fitzhugh–Nagumo law at the last prepared time.
    pub fn heat_state(&self) -> Option<&HeatState> {
        self.heat.as_ref()
    }

    /// Velocity field at `t`, with `χ` taken at its nearest stored stamp.
    pub fn prepare(&mut self, t: f64, chi: &OccupancyHistory) -> Result<ScalarField> {
        if t < self.last_t - 1e-12 * self.grid.t_final() {
            return Err(FrontError::TimeRegression { requested: t, last: self.last_t });
        }
        if !chi.grid().same_nodes(&self.grid) {
            return Err(FrontError::GridMismatch("occupancy grid differs from the provider grid".into()));
        }
        let grid = self.grid;
        let field = match &self.law {
            VelocityLaw::Constant(c) => ScalarField::constant(grid, *c),
            VelocityLaw::CurvatureOnly => ScalarField::constant(grid, 0.0),
            VelocityLaw::VolumeDependent { beta, .. } => {
                let c = volume_velocity(beta, chi.nearest(t));
                if !c.is_finite() {
                    return Err(FrontError::NonFinite("volume velocity"));
                }
                ScalarField::constant(grid, c)
            }
            VelocityLaw::Dislocation(law) => {
                let key = (chi.nearest_index(t), law.kernel.index_at(t));
                let conv = match &self.cache {
                    Some((k, f)) if *k == key => f.clone(),
                    _ => {
                        let f = convolve_spatial(law.kernel.patch(key.1), &chi.steps()[key.0].1)?;
                        self.cache = Some((key, f.clone()));
                        f
                    }
                };
                add_drift(law, conv, t)?
            }
            VelocityLaw::FitzhughNagumo(fhn) => {
                let limit = heat_cfl_limit(&grid);
                if !(self.heat_dt > 0.0) || self.heat_dt > limit * (1.0 + 1e-12) {
                    return Err(FrontError::CflViolation { dt: self.heat_dt, limit });
                }
                let mut state = self.heat.take().expect("heat state exists for this law");
                let tol = 1e-12 * grid.t_final();
                while state.t < t - tol {
                    let dt = self.heat_dt.min(t - state.t);
                    state = heat_step_fd(&state, chi.nearest(state.t), &fhn.g_plus, &fhn.g_minus, dt)?;
                }
                let c = state.v.map(|v| fhn.alpha.eval(v));
                self.heat = Some(state);
                c?
            }
        };
        self.last_t = self.last_t.max(t);
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{indicator, signed_distance_init, IndicatorMode, ShapeSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid2(m: usize) -> GridSpec {
        GridSpec::new(2, 1.0, m, 1.0, 0.1).unwrap()
    }

    fn random_field(grid: GridSpec, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ScalarField {
        let v = (0..grid.node_count()).map(|_| rng.gen_range(lo..hi)).collect();
        ScalarField::new(grid, v).unwrap()
    }

    /// Brute force over all node pairs.
    fn brute_convolution(kernel: &KernelPatch, chi: &ScalarField) -> Vec<f64> {
        let g = chi.grid();
        let r = kernel.radius() as isize;
        (0..g.node_count())
            .map(|i| {
                let xi = g.multi_index(i);
                let mut acc = 0.0;
                for j in 0..g.node_count() {
                    let yj = g.multi_index(j);
                    let off: Vec<isize> = (0..g.dim()).map(|a| xi[a] as isize - yj[a] as isize).collect();
                    if off.iter().all(|o| o.abs() <= r) {
                        acc += kernel.at(&off) * chi.values()[j] * g.weight(j);
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let g = grid2(21);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chi = random_field(g, &mut rng, 0.0, 1.0);
        let k = KernelPatch::delta(2, g.spacing()).unwrap();
        let out = convolve_spatial(&k, &chi).unwrap();
        for (i, (a, b)) in out.values().iter().zip(chi.values()).enumerate() {
            // the identity holds against trapezoidal weights: halved on faces
            let expected = b * g.weight(i) / g.cell_volume();
            assert!((a - expected).abs() < 1e-12);
            if !g.is_boundary(i) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_patch_matches_brute_force() {
        let g = grid2(11);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let chi = random_field(g, &mut rng, 0.0, 1.0);
        let kvals: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kgrid = GridSpec::new(2, 2.0 * g.spacing(), 5, 1.0, 1.0).unwrap();
        let k = KernelPatch::from_field(ScalarField::new(kgrid, kvals).unwrap()).unwrap();
        let fast = convolve_spatial(&k, &chi).unwrap();
        let brute = brute_convolution(&k, &chi);
        for (a, b) in fast.values().iter().zip(&brute) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn random_patch_matches_brute_force_3d() {
        let g = GridSpec::new(3, 1.0, 7, 1.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let chi = random_field(g, &mut rng, 0.0, 1.0);
        let k = KernelPatch::mexican_hat(&g, 0.2, 1.0, 0.6).unwrap();
        let fast = convolve_spatial(&k, &chi).unwrap();
        let brute = brute_convolution(&k, &chi);
        for (a, b) in fast.values().iter().zip(&brute) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_kernel_integrates_volume() {
        let g = grid2(41);
        let u = signed_distance_init(&g, &ShapeSpec::centered_ball(2, 0.4)).unwrap();
        let chi = indicator(&u, IndicatorMode::Sharp, 0.0);
        let a = 0.7;
        let out = convolve_spatial(&KernelPatch::constant(&g, a).unwrap(), &chi).unwrap();
        let center = g.flat_index(&[20, 20]);
        assert!((out.values()[center] - a * volume(&chi)).abs() < 1e-12);
        // every node sees the whole box through the constant kernel
        assert!((out.values()[0] - a * volume(&chi)).abs() < 1e-12);
    }

    #[test]
    fn spacing_mismatch_rejected() {
        let g = grid2(21);
        let k = KernelPatch::delta(2, 0.5 * g.spacing()).unwrap();
        assert!(convolve_spatial(&k, &ScalarField::constant(g, 1.0)).is_err());
    }

    #[test]
    fn dislocation_examples() {
        let g = grid2(41);
        let drift = Drift::Function(Arc::new(|x: &[f64], t: f64| 0.1 * x[0] + 0.05 * t));
        let zero_kernel = KernelPatch::gaussian(&g, 0.1, 0.0).unwrap();
        let law = DislocationLaw::new(zero_kernel, drift.clone(), 1.0, false).unwrap();
        let u = signed_distance_init(&g, &ShapeSpec::centered_ball(2, 0.3)).unwrap();
        let chi = indicator(&u, IndicatorMode::Sharp, 0.0);
        let c = dislocation_velocity(&law, &chi, 0.5).unwrap();
        let c1 = drift.sample(&g, 0.5).unwrap();
        assert_eq!(c.values(), c1.values());

        let law = DislocationLaw::new(KernelPatch::gaussian(&g, 0.1, 2.0).unwrap(), drift, 1.0, false).unwrap();
        let c = dislocation_velocity(&law, &ScalarField::constant(g, 0.0), 0.5).unwrap();
        assert_eq!(c.values(), c1.values());
    }

    #[test]
    fn constant_kernel_ball_velocity() {
        let g = grid2(101);
        let a = 0.5;
        let r = 0.3;
        let law = DislocationLaw::new(KernelPatch::constant(&g, a).unwrap(), Drift::Constant(0.0), 0.0, false)
            .unwrap();
        let u = signed_distance_init(&g, &ShapeSpec::centered_ball(2, r)).unwrap();
        let chi = indicator(&u, IndicatorMode::Sharp, 0.0);
        let c = dislocation_velocity(&law, &chi, 0.0).unwrap();
        let disk = a * std::f64::consts::PI * r * r;
        for i in 0..g.node_count() {
            if g.cells_to_boundary(i) > 10 {
                assert!((c.values()[i] - disk).abs() <= 4.0 * g.spacing());
            }
        }
    }

    #[test]
    fn drift_bound_enforced() {
        let g = grid2(11);
        let k = KernelPatch::delta(2, g.spacing()).unwrap();
        assert!(DislocationLaw::new(k.clone(), Drift::Constant(2.0), 1.0, false).is_err());
        let law = DislocationLaw::new(k, Drift::Function(Arc::new(|x: &[f64], _| 3.0 * x[0])), 1.0, false)
            .unwrap();
        assert!(dislocation_velocity(&law, &ScalarField::constant(g, 0.0), 0.0).is_err());
    }

    #[test]
    fn volume_velocity_examples() {
        let g = grid2(201);
        let beta = ScalarFn::Affine { offset: 1.0, slope: -1.0 };
        assert_eq!(volume_velocity(&beta, &ScalarField::constant(g, 0.0)), 1.0);
        let square = ScalarField::from_fn(g, |x| if x[0].abs() <= 0.5 && x[1].abs() <= 0.5 { 1.0 } else { 0.0 })
            .unwrap();
        // the closed square picks up its boundary nodes: O(h) above 1
        assert!(volume_velocity(&beta, &square).abs() <= 4.0 * g.spacing());
        let u = signed_distance_init(&g, &ShapeSpec::centered_ball(2, 0.5)).unwrap();
        let chi = indicator(&u, IndicatorMode::Sharp, 0.0);
        let expected = 1.0 - std::f64::consts::PI / 4.0;
        assert!((volume_velocity(&beta, &chi) - expected).abs() <= 4.0 * g.spacing());
    }

    #[test]
    fn fhn_source_ordering_checked() {
        let g = grid2(11);
        let v0 = ScalarField::constant(g, 0.0);
        let ok = FitzhughNagumoLaw::new(
            ScalarFn::identity(),
            ScalarFn::Constant(1.0),
            ScalarFn::Constant(0.0),
            v0.clone(),
            0.0,
            1.0,
        );
        assert!(ok.is_ok());
        assert_eq!(ok.unwrap().gamma(), 1.0);
        let swapped = FitzhughNagumoLaw::new(
            ScalarFn::identity(),
            ScalarFn::Constant(0.0),
            ScalarFn::Constant(1.0),
            v0.clone(),
            0.0,
            1.0,
        );
        assert!(swapped.is_err());
        let unbounded =
            FitzhughNagumoLaw::new(ScalarFn::identity(), ScalarFn::identity(), ScalarFn::Constant(-5.0), v0, -5.0, 5.0);
        assert!(unbounded.is_err());
    }

    #[test]
    fn prepare_examples() {
        let g = grid2(21);
        let stamps = g.stamps();
        let empty = OccupancyHistory::constant_in_time(&ScalarField::constant(g, 0.0), &stamps).unwrap();

        let mut p = VelocityProvider::new(VelocityLaw::Constant(1.0), g).unwrap();
        assert!(p.prepare(0.3, &empty).unwrap().values().iter().all(|&v| v == 1.0));

        let fhn = FitzhughNagumoLaw::new(
            ScalarFn::identity(),
            ScalarFn::Constant(0.0),
            ScalarFn::Constant(0.0),
            ScalarField::constant(g, 0.7),
            0.0,
            0.0,
        )
        .unwrap();
        let mut p = VelocityProvider::new(VelocityLaw::FitzhughNagumo(fhn), g).unwrap();
        for t in [0.0, 0.05, 0.3, 1.0] {
            assert!(p.prepare(t, &empty).unwrap().values().iter().all(|&v| v == 0.7));
        }

        let law = VelocityLaw::VolumeDependent { beta: ScalarFn::Affine { offset: 1.0, slope: -1.0 }, with_curvature: false };
        let mut p = VelocityProvider::new(law, g).unwrap();
        assert!(p.prepare(0.0, &empty).unwrap().values().iter().all(|&v| v == 1.0));

        let mut p = VelocityProvider::new(VelocityLaw::CurvatureOnly, g).unwrap();
        assert_eq!(p.prepare(0.0, &empty).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn prepare_rejects_time_regression() {
        let g = grid2(11);
        let chi = OccupancyHistory::constant_in_time(&ScalarField::constant(g, 0.0), &g.stamps()).unwrap();
        let mut p = VelocityProvider::new(VelocityLaw::Constant(1.0), g).unwrap();
        p.prepare(0.5, &chi).unwrap();
        assert!(matches!(p.prepare(0.2, &chi), Err(FrontError::TimeRegression { .. })));
    }

    #[test]
    fn prepare_rejects_heat_cfl_violation() {
        let g = grid2(11);
        let chi = OccupancyHistory::constant_in_time(&ScalarField::constant(g, 0.0), &g.stamps()).unwrap();
        let fhn = FitzhughNagumoLaw::new(
            ScalarFn::identity(),
            ScalarFn::Constant(0.0),
            ScalarFn::Constant(0.0),
            ScalarField::constant(g, 0.0),
            0.0,
            0.0,
        )
        .unwrap();
        let mut p = VelocityProvider::new(VelocityLaw::FitzhughNagumo(fhn), g)
            .unwrap()
            .with_heat_dt(2.0 * heat_cfl_limit(&g));
        assert!(matches!(p.prepare(0.1, &chi), Err(FrontError::CflViolation { .. })));
    }

    #[test]
    fn fhn_constant_source_tracks_linear_growth() {
        let g = grid2(21);
        let chi = OccupancyHistory::constant_in_time(&ScalarField::constant(g, 1.0), &g.stamps()).unwrap();
        let fhn = FitzhughNagumoLaw::new(
            ScalarFn::identity(),
            ScalarFn::Constant(1.0),
            ScalarFn::Constant(0.0),
            ScalarField::constant(g, 0.0),
            0.0,
            1.0,
        )
        .unwrap();
        let mut p = VelocityProvider::new(VelocityLaw::FitzhughNagumo(fhn), g).unwrap();
        let c = p.prepare(0.25, &chi).unwrap();
        assert!(c.values().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn speed_bound_and_lipschitz_bound_hold() {
        let g = grid2(41);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = KernelPatch::mexican_hat(&g, 0.08, 1.0, 0.5).unwrap();
        let drift_bound = 0.2;
        let lip_drift = 0.1;
        let law = DislocationLaw::new(k.clone(), Drift::Function(Arc::new(|x: &[f64], _| 0.1 * x[1])), drift_bound, false)
            .unwrap();
        let grad_bound = k.gradient_l1_norm() + lip_drift;
        for _ in 0..10 {
            let chi = random_field(g, &mut rng, 0.0, 1.0);
            let c = dislocation_velocity(&law, &chi, 0.0).unwrap();
            assert!(c.max_abs() <= law.speed_bound());
            let h = g.spacing();
            let m = g.points_per_axis();
            for i in 0..m {
                for j in 0..m - 1 {
                    let a = c.values()[g.flat_index(&[i, j])];
                    let b = c.values()[g.flat_index(&[i, j + 1])];
                    assert!((a - b).abs() / h <= grad_bound * (1.0 + 1e-12));
                }
            }
        }
    }
}
