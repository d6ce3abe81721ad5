//! Uniform Cartesian grids on the box `[-L, L]^N`, node fields, occupancy
//! histories, quadrature and initial-data builders.
//!
//! Fields are stored row-major: the last axis varies fastest. All quadratures
//! use trapezoidal node weights, so the weights of a grid sum to the box
//! volume `(2L)^N`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;

use crate::error::{FrontError, Result};

/// Default cap on the number of nodes of a grid (512 MiB per `f64` field).
pub const DEFAULT_NODE_BUDGET: usize = 1 << 26;

/// Number of cells between a front and the box boundary below which the
/// truncation of `R^N` to the box is considered unsafe.
pub const BOUNDARY_MARGIN_CELLS: usize = 2;

/// A uniform discretization of `[-L, L]^N` together with the time horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    half_extent: f64,
    points_per_axis: usize,
    spacing: f64,
    t_final: f64,
    dt: f64,
}

impl GridSpec {
    pub fn new(
        dim: usize,
        half_extent: f64,
        points_per_axis: usize,
        t_final: f64,
        dt: f64,
    ) -> Result<Self> {
        Self::with_budget(dim, half_extent, points_per_axis, t_final, dt, DEFAULT_NODE_BUDGET)
    }

    pub fn with_budget(
        dim: usize,
        half_extent: f64,
        points_per_axis: usize,
        t_final: f64,
        dt: f64,
        node_budget: usize,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(FrontError::UnsupportedDimension(dim));
        }
        if !(half_extent.is_finite() && half_extent > 0.0) {
            return Err(FrontError::InvalidParameter(format!(
                "half_extent must be positive, got {half_extent}"
            )));
        }
        if points_per_axis < 3 {
            return Err(FrontError::InvalidParameter(format!(
                "points_per_axis must be at least 3, got {points_per_axis}"
            )));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(FrontError::InvalidParameter(format!(
                "t_final must be positive, got {t_final}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(FrontError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let nodes = (points_per_axis as u128).pow(dim as u32);
        if nodes > node_budget as u128 {
            return Err(FrontError::MemoryBudget { nodes, budget: node_budget });
        }
        let spacing = 2.0 * half_extent / (points_per_axis - 1) as f64;
        Ok(Self { dim, half_extent, points_per_axis, spacing, t_final, dt })
    }

    /// Same geometry with a different time horizon and nominal step.
    pub fn with_time(&self, t_final: f64, dt: f64) -> Result<Self> {
        Self::new(self.dim, self.half_extent, self.points_per_axis, t_final, dt)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Node spacing `h = 2L / (M - 1)`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Nominal output time step (the stored-stamp spacing).
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn node_count(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    /// `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// `(2L)^N`.
    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_extent).powi(self.dim as i32)
    }

    /// Row-major stride of each axis; unused axes have stride 0.
    pub fn strides(&self) -> [usize; 3] {
        let m = self.points_per_axis;
        match self.dim {
            1 => [1, 0, 0],
            2 => [m, 1, 0],
            _ => [m * m, m, 1],
        }
    }

    /// Multi-index of a flat node index; unused axes are 0.
    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let m = self.points_per_axis;
        let mut out = [0usize; 3];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % m;
            rest /= m;
        }
        out
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        let strides = self.strides();
        index.iter().take(self.dim).zip(strides.iter()).map(|(i, s)| i * s).sum()
    }

    /// Coordinate of node `i` along one axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_extent + i as f64 * self.spacing
    }

    /// Physical position of a node; unused axes are 0.
    pub fn position(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = self.coordinate(idx[axis]);
        }
        x
    }

    /// Trapezoidal quadrature weight of a node: `h^N` halved once per axis on
    /// which the node sits on a box face.
    pub fn weight(&self, flat: usize) -> f64 {
        let idx = self.multi_index(flat);
        let last = self.points_per_axis - 1;
        let mut w = self.cell_volume();
        for &i in idx.iter().take(self.dim) {
            if i == 0 || i == last {
                w *= 0.5;
            }
        }
        w
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.node_count()).map(|i| self.weight(i)).collect()
    }

    /// Distance (in nodes) from a node to the nearest box face.
    pub fn cells_to_boundary(&self, flat: usize) -> usize {
        let idx = self.multi_index(flat);
        let last = self.points_per_axis - 1;
        idx.iter().take(self.dim).map(|&i| i.min(last - i)).min().unwrap_or(0)
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        self.cells_to_boundary(flat) == 0
    }

    /// True when both grids discretize the same box with the same nodes.
    pub fn same_nodes(&self, other: &GridSpec) -> bool {
        self.dim == other.dim
            && self.points_per_axis == other.points_per_axis
            && (self.half_extent - other.half_extent).abs() <= 1e-12 * self.half_extent
    }

    /// Stored time stamps `0 = t_0 < ... < t_n = T`, uniformly spaced with
    /// `n = ceil(T / dt)` (a step within 1e-9 relative of an integer count is
    /// rounded to it).
    pub fn stamps(&self) -> Vec<f64> {
        let ratio = self.t_final / self.dt;
        let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
            ratio.round()
        } else {
            ratio.ceil()
        }
        .max(1.0) as usize;
        (0..=n).map(|k| if k == n { self.t_final } else { self.t_final * k as f64 / n as f64 }).collect()
    }

    fn check_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self.same_nodes(other) {
            Ok(())
        } else {
            Err(FrontError::GridMismatch(format!(
                "{what}: {}D/{} nodes/L={} vs {}D/{} nodes/L={}",
                self.dim,
                self.points_per_axis,
                self.half_extent,
                other.dim,
                other.points_per_axis,
                other.half_extent
            )))
        }
    }
}

/// Volume `ω_N` of the unit ball in dimension `dim` (1, 2 or 3).
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => f64::NAN,
    }
}

/// Radius of the ball with the given volume.
pub fn effective_radius(volume: f64, dim: usize) -> f64 {
    (volume.max(0.0) / unit_ball_volume(dim)).powf(1.0 / dim as f64)
}

/// A real-valued node function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(FrontError::GridMismatch(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FrontError::NonFinite("field construction"));
        }
        Ok(Self { grid, values })
    }

    /// Caller guarantees length and finiteness.
    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self { grid, values }
    }

    /// Checks finiteness of values produced by an internal computation.
    pub(crate) fn checked(grid: GridSpec, values: Vec<f64>, origin: &'static str) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FrontError::NonFinite(origin));
        }
        Ok(Self::from_raw(grid, values))
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self { grid, values: vec![value; grid.node_count()] }
    }

    /// Samples `f` at every node position (unused coordinates are dropped).
    pub fn from_fn<F>(grid: GridSpec, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let dim = grid.dim();
        let values: Vec<f64> = (0..grid.node_count())
            .into_par_iter()
            .map(|i| {
                let x = grid.position(i);
                f(&x[..dim])
            })
            .collect();
        Self::checked(grid, values, "sampled function")
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Node-wise map; fails if the map produces a non-finite value.
    pub fn map<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let values: Vec<f64> = self.values.par_iter().map(|&v| f(v)).collect();
        Self::checked(self.grid, values, "field map")
    }

    /// `Σ |a - b| w_i` with trapezoidal weights.
    pub fn l1_distance(&self, other: &ScalarField) -> Result<f64> {
        self.grid.check_same(&other.grid, "l1 distance")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() * self.grid.weight(i))
            .sum())
    }

    /// True when some node within `cells` of a box face has `u >= 0`.
    pub fn touches_boundary(&self, cells: usize) -> bool {
        self.values
            .iter()
            .enumerate()
            .any(|(i, &v)| v >= 0.0 && self.grid.cells_to_boundary(i) < cells)
    }
}

/// Node-weighted quadrature `Σ χ_i w_i` of a field.
pub fn volume(field: &ScalarField) -> f64 {
    let grid = field.grid();
    field.values().iter().enumerate().map(|(i, v)| v * grid.weight(i)).sum()
}

/// How a level-set function is turned into an occupancy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndicatorMode {
    /// `1` on `{u >= 0}` (ties count as inside), `0` elsewhere.
    Sharp,
    /// Linear ramp from 0 at `u = -ε` to 1 at `u = +ε`.
    Smoothed,
}

pub fn indicator(u: &ScalarField, mode: IndicatorMode, band: f64) -> ScalarField {
    let values: Vec<f64> = match mode {
        IndicatorMode::Sharp => u.values().iter().map(|&v| sharp(v)).collect(),
        IndicatorMode::Smoothed if band <= 0.0 => u.values().iter().map(|&v| sharp(v)).collect(),
        IndicatorMode::Smoothed => u
            .values()
            .iter()
            .map(|&v| ((v + band) / (2.0 * band)).clamp(0.0, 1.0))
            .collect(),
    };
    ScalarField::from_raw(*u.grid(), values)
}

#[inline]
fn sharp(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// A time-indexed occupancy `χ` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyHistory {
    grid: GridSpec,
    steps: Vec<(f64, ScalarField)>,
}

impl OccupancyHistory {
    /// Values are clamped into `[0, 1]`. Times must increase strictly from 0
    /// to the grid horizon.
    pub fn new(grid: GridSpec, steps: Vec<(f64, ScalarField)>) -> Result<Self> {
        check_stamps(&grid, steps.iter().map(|(t, _)| *t))?;
        let mut clamped = Vec::with_capacity(steps.len());
        for (t, field) in steps {
            grid.check_same(field.grid(), "occupancy step")?;
            let values = field.into_values().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
            clamped.push((t, ScalarField::from_raw(grid, values)));
        }
        Ok(Self { grid, steps: clamped })
    }

    /// The same occupancy at every stamp.
    pub fn constant_in_time(field: &ScalarField, stamps: &[f64]) -> Result<Self> {
        let grid = *field.grid();
        Self::new(grid, stamps.iter().map(|&t| (t, field.clone())).collect())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn steps(&self) -> &[(f64, ScalarField)] {
        &self.steps
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|(t, _)| *t).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Index of the stored stamp nearest to `t` (ties go to the earlier one).
    pub fn nearest_index(&self, t: f64) -> usize {
        nearest_stamp(self.steps.iter().map(|(s, _)| *s), t)
    }

    pub fn nearest(&self, t: f64) -> &ScalarField {
        &self.steps[self.nearest_index(t)].1
    }

    /// Convex combination `(1 - θ) self + θ other`, stamp by stamp.
    pub fn relax_toward(&self, other: &OccupancyHistory, theta: f64) -> Result<Self> {
        check_matching_stamps(&self.times(), &other.times())?;
        let steps = self
            .steps
            .iter()
            .zip(&other.steps)
            .map(|((t, a), (_, b))| {
                let values = a
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| ((1.0 - theta) * x + theta * y).clamp(0.0, 1.0))
                    .collect();
                (*t, ScalarField::from_raw(self.grid, values))
            })
            .collect();
        Ok(Self { grid: self.grid, steps })
    }
}

pub(crate) fn nearest_stamp(times: impl Iterator<Item = f64>, t: f64) -> usize {
    let mut best = 0;
    let mut best_gap = f64::INFINITY;
    for (k, s) in times.enumerate() {
        let gap = (s - t).abs();
        if gap < best_gap {
            best = k;
            best_gap = gap;
        }
    }
    best
}

pub(crate) fn check_stamps(grid: &GridSpec, times: impl Iterator<Item = f64>) -> Result<()> {
    let times: Vec<f64> = times.collect();
    let tol = 1e-9 * grid.t_final();
    if times.is_empty() {
        return Err(FrontError::StampMismatch("empty history".into()));
    }
    if times[0].abs() > tol {
        return Err(FrontError::StampMismatch(format!("first stamp {} is not 0", times[0])));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FrontError::StampMismatch("stamps are not strictly increasing".into()));
    }
    let last = *times.last().unwrap();
    if (last - grid.t_final()).abs() > tol {
        return Err(FrontError::StampMismatch(format!(
            "last stamp {last} differs from T = {}",
            grid.t_final()
        )));
    }
    Ok(())
}

pub(crate) fn check_matching_stamps(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(FrontError::StampMismatch(format!("{} vs {} stamps", a.len(), b.len())));
    }
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > 1e-12 * x.abs().max(y.abs()).max(1.0) {
            return Err(FrontError::StampMismatch(format!("stamp {x} vs {y}")));
        }
    }
    Ok(())
}

/// Trapezoidal time weights of a stamp sequence; they sum to `t_n - t_0`.
pub fn time_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| {
            let left = if k > 0 { times[k] - times[k - 1] } else { 0.0 };
            let right = if k + 1 < n { times[k + 1] - times[k] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Discrete space-time L¹ distance between two occupancy histories.
pub fn l1_distance(a: &OccupancyHistory, b: &OccupancyHistory) -> Result<f64> {
    a.grid.check_same(&b.grid, "l1 distance")?;
    let times = a.times();
    check_matching_stamps(&times, &b.times())?;
    let weights = time_weights(&times);
    let mut total = 0.0;
    for (((_, fa), (_, fb)), wt) in a.steps.iter().zip(&b.steps).zip(&weights) {
        total += fa.l1_distance(fb)? * wt;
    }
    Ok(total)
}

/// Signed distance of a point to a closed set; positive inside.
pub type SignedDistanceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Description of the initial set `K_0`.
#[derive(Clone)]
pub enum ShapeSpec {
    Ball { center: Vec<f64>, radius: f64 },
    UnionOfBalls(Vec<(Vec<f64>, f64)>),
    /// Half-space `{x : n·x <= offset}`.
    Plane { normal: Vec<f64>, offset: f64 },
    CustomSignedDistance(SignedDistanceFn),
}

impl fmt::Debug for ShapeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ball { center, radius } => {
                f.debug_struct("Ball").field("center", center).field("radius", radius).finish()
            }
            Self::UnionOfBalls(balls) => f.debug_tuple("UnionOfBalls").field(balls).finish(),
            Self::Plane { normal, offset } => {
                f.debug_struct("Plane").field("normal", normal).field("offset", offset).finish()
            }
            Self::CustomSignedDistance(_) => f.write_str("CustomSignedDistance(..)"),
        }
    }
}

impl ShapeSpec {
    pub fn ball(center: &[f64], radius: f64) -> Self {
        Self::Ball { center: center.to_vec(), radius }
    }

    pub fn centered_ball(dim: usize, radius: f64) -> Self {
        Self::Ball { center: vec![0.0; dim], radius }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let check_ball = |center: &[f64], radius: f64| -> Result<()> {
            if center.len() != dim {
                return Err(FrontError::InvalidParameter(format!(
                    "ball center has {} coordinates, grid dimension is {dim}",
                    center.len()
                )));
            }
            if !(radius.is_finite() && radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
                return Err(FrontError::InvalidParameter(format!(
                    "ball radius must be positive and finite, got {radius}"
                )));
            }
            Ok(())
        };
        match self {
            Self::Ball { center, radius } => check_ball(center, *radius),
            Self::UnionOfBalls(balls) => {
                if balls.is_empty() {
                    return Err(FrontError::InvalidParameter("union of zero balls".into()));
                }
                balls.iter().try_for_each(|(c, r)| check_ball(c, *r))
            }
            Self::Plane { normal, offset } => {
                let norm = normal.iter().map(|n| n * n).sum::<f64>().sqrt();
                if normal.len() != dim || !(norm > 0.0 && norm.is_finite()) || !offset.is_finite() {
                    return Err(FrontError::InvalidParameter(
                        "plane needs a finite nonzero normal of the grid dimension".into(),
                    ));
                }
                Ok(())
            }
            Self::CustomSignedDistance(_) => Ok(()),
        }
    }

    /// Signed distance to the boundary of the shape, positive inside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            Self::Ball { center, radius } => radius - distance(x, center),
            Self::UnionOfBalls(balls) => balls
                .iter()
                .map(|(c, r)| r - distance(x, c))
                .fold(f64::NEG_INFINITY, f64::max),
            Self::Plane { normal, offset } => {
                let norm = normal.iter().map(|n| n * n).sum::<f64>().sqrt();
                let dot: f64 = normal.iter().zip(x).map(|(n, xi)| n * xi).sum();
                (offset - dot) / norm
            }
            Self::CustomSignedDistance(f) => f(x),
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Initial level-set function: the signed distance to `∂K_0`, positive in `K_0`.
pub fn signed_distance_init(grid: &GridSpec, shape: &ShapeSpec) -> Result<ScalarField> {
    shape.validate(grid.dim())?;
    let field = ScalarField::from_fn(*grid, |x| shape.signed_distance(x))?;
    if field.touches_boundary(BOUNDARY_MARGIN_CELLS) {
        warn!(
            "initial front lies within {BOUNDARY_MARGIN_CELLS} cells of the box boundary; \
             the truncation of the domain may pollute the evolution"
        );
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(m: usize) -> GridSpec {
        GridSpec::new(2, 1.0, m, 1.0, 0.1).unwrap()
    }

    #[test]
    fn build_grid_examples() {
        let g = GridSpec::new(2, 1.0, 201, 0.5, 1e-3).unwrap();
        assert!((g.spacing() - 0.01).abs() < 1e-15);
        let g = GridSpec::new(1, 1.0, 3, 1.0, 0.1).unwrap();
        assert_eq!(g.spacing(), 1.0);
        assert!(matches!(
            GridSpec::new(4, 1.0, 11, 1.0, 0.1),
            Err(FrontError::UnsupportedDimension(4))
        ));
    }

    #[test]
    fn build_grid_rejects_bad_input() {
        assert!(GridSpec::new(2, -1.0, 11, 1.0, 0.1).is_err());
        assert!(GridSpec::new(2, 1.0, 2, 1.0, 0.1).is_err());
        assert!(GridSpec::new(2, 1.0, 11, 0.0, 0.1).is_err());
        assert!(GridSpec::new(2, 1.0, 11, 1.0, 0.0).is_err());
        assert!(matches!(
            GridSpec::with_budget(3, 1.0, 101, 1.0, 0.1, 1_000_000),
            Err(FrontError::MemoryBudget { .. })
        ));
    }

    #[test]
    fn spacing_matches_extent() {
        for m in [3, 7, 100, 201, 1001] {
            let g = GridSpec::new(1, 0.7, m, 1.0, 0.1).unwrap();
            let span = g.spacing() * (m - 1) as f64;
            assert!((span - 1.4).abs() <= 8.0 * f64::EPSILON);
        }
    }

    #[test]
    fn index_round_trip() {
        let g = GridSpec::new(3, 1.0, 5, 1.0, 0.1).unwrap();
        for i in 0..g.node_count() {
            let idx = g.multi_index(i);
            assert_eq!(g.flat_index(&idx), i);
        }
        assert_eq!(g.position(0), [-1.0, -1.0, -1.0]);
        assert_eq!(g.position(g.node_count() - 1), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn weights_sum_to_box_volume() {
        for dim in 1..=3 {
            let g = GridSpec::new(dim, 1.3, 17, 1.0, 0.1).unwrap();
            let total: f64 = g.weights().iter().sum();
            assert!((total - g.box_volume()).abs() <= 1e-12 * g.box_volume());
        }
    }

    #[test]
    fn stamps_cover_horizon() {
        let g = GridSpec::new(2, 1.0, 11, 0.4, 0.01).unwrap();
        let s = g.stamps();
        assert_eq!(s.len(), 41);
        assert_eq!(s[0], 0.0);
        assert_eq!(*s.last().unwrap(), 0.4);
        let g = GridSpec::new(2, 1.0, 11, 1.0, 0.3).unwrap();
        assert_eq!(g.stamps().len(), 5);
    }

    #[test]
    fn ball_signed_distance() {
        let g = grid2(201);
        let u = signed_distance_init(&g, &ShapeSpec::centered_ball(2, 0.3)).unwrap();
        let center = g.flat_index(&[100, 100]);
        assert!((u.values()[center] - 0.3).abs() < 1e-12);
        let on_front = g.flat_index(&[130, 100]);
        assert!(u.values()[on_front].abs() < 1e-12);
    }

    #[test]
    fn union_of_balls_tangency() {
        let g = grid2(201);
        let shape = ShapeSpec::UnionOfBalls(vec![(vec![0.3, 0.0], 0.3), (vec![-0.3, 0.0], 0.3)]);
        let u = signed_distance_init(&g, &shape).unwrap();
        let origin = g.flat_index(&[100, 100]);
        // min-distance oracle: distance from the origin to each circle, signed.
        let oracle = [(0.3f64, 0.0f64), (-0.3, 0.0)]
            .iter()
            .map(|(cx, cy)| 0.3 - (cx * cx + cy * cy).sqrt())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((u.values()[origin] - oracle).abs() < 1e-12);
        assert!(u.values()[origin].abs() < 1e-12);
    }

    #[test]
    fn positive_nodes_lie_inside_a_primitive() {
        let g = grid2(81);
        let balls = vec![(vec![0.2, -0.1], 0.25), (vec![-0.3, 0.35], 0.15)];
        let u = signed_distance_init(&g, &ShapeSpec::UnionOfBalls(balls.clone())).unwrap();
        for (i, &v) in u.values().iter().enumerate() {
            let x = g.position(i);
            let inside = balls.iter().any(|(c, r)| distance(&x[..2], c) < *r);
            assert_eq!(v > 0.0, inside, "node {i}");
        }
    }

    #[test]
    fn signed_distance_is_lipschitz() {
        let g = grid2(61);
        let u = signed_distance_init(&g, &ShapeSpec::ball(&[0.1, 0.0], 0.4)).unwrap();
        let h = g.spacing();
        let m = g.points_per_axis();
        for i in 0..m {
            for j in 0..m - 1 {
                let a = u.values()[g.flat_index(&[i, j])];
                let b = u.values()[g.flat_index(&[i, j + 1])];
                assert!((a - b).abs() <= h * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(ShapeSpec::centered_ball(2, -0.1).validate(2).is_err());
        assert!(ShapeSpec::UnionOfBalls(vec![]).validate(2).is_err());
        assert!(ShapeSpec::ball(&[0.0], 0.1).validate(2).is_err());
        let plane = ShapeSpec::Plane { normal: vec![0.0, 0.0], offset: 0.0 };
        assert!(plane.validate(2).is_err());
    }

    #[test]
    fn plane_distance() {
        let plane = ShapeSpec::Plane { normal: vec![2.0, 0.0], offset: 0.5 };
        assert!((plane.signed_distance(&[0.0, 3.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn indicator_examples() {
        let g = grid2(11);
        let ones = indicator(&ScalarField::constant(g, 1.0), IndicatorMode::Sharp, 0.0);
        assert!(ones.values().iter().all(|&v| v == 1.0));
        let mut vals = vec![-1.0; g.node_count()];
        vals[5] = 0.0;
        let u = ScalarField::new(g, vals).unwrap();
        let s = indicator(&u, IndicatorMode::Smoothed, 0.1);
        assert_eq!(s.values()[5], 0.5);
        assert_eq!(s.values()[0], 0.0);
        let sharp = indicator(&u, IndicatorMode::Sharp, 0.0);
        assert_eq!(sharp.values()[5], 1.0);
        let zeros = indicator(&ScalarField::constant(g, -1.0), IndicatorMode::Smoothed, 0.1);
        assert!(zeros.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smoothed_indicator_sandwich() {
        let g = GridSpec::new(1, 1.0, 101, 1.0, 0.1).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0]).unwrap();
        let eps = 0.05;
        let chi = indicator(&u, IndicatorMode::Smoothed, eps);
        for (&v, &c) in u.values().iter().zip(chi.values()) {
            let lower = if v > eps { 1.0 } else { 0.0 };
            let upper = if v >= -eps { 1.0 } else { 0.0 };
            assert!(lower <= c && c <= upper);
        }
    }

    #[test]
    fn volume_examples() {
        let g = grid2(201);
        assert_eq!(volume(&ScalarField::constant(g, 0.0)), 0.0);
        assert!((volume(&ScalarField::constant(g, 1.0)) - 4.0).abs() < 1e-10);
        let u = signed_distance_init(&g, &ShapeSpec::centered_ball(2, 0.5)).unwrap();
        let chi = indicator(&u, IndicatorMode::Sharp, 0.0);
        let disk = PI * 0.25;
        assert!((volume(&chi) - disk).abs() <= 4.0 * g.spacing());
    }

    #[test]
    fn unit_ball_volume_matches_quadrature() {
        for dim in 1..=3 {
            let m = if dim == 3 { 61 } else { 201 };
            let g = GridSpec::new(dim, 1.5, m, 1.0, 0.1).unwrap();
            let u = signed_distance_init(&g, &ShapeSpec::centered_ball(dim, 1.0)).unwrap();
            let vol = volume(&indicator(&u, IndicatorMode::Sharp, 0.0));
            assert!(
                (vol - unit_ball_volume(dim)).abs() <= 4.0 * g.spacing() * unit_ball_volume(dim),
                "dim {dim}: {vol}"
            );
        }
    }

    #[test]
    fn l1_distance_examples() {
        let g = grid2(21);
        let stamps: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let one = OccupancyHistory::constant_in_time(&ScalarField::constant(g, 1.0), &stamps).unwrap();
        let zero = OccupancyHistory::constant_in_time(&ScalarField::constant(g, 0.0), &stamps).unwrap();
        assert_eq!(l1_distance(&one, &one).unwrap(), 0.0);
        let d = l1_distance(&one, &zero).unwrap();
        // volume x duration oracle: (2L)^2 * T
        assert!((d - 4.0).abs() <= 0.02 * 4.0);

        let mut steps: Vec<(f64, ScalarField)> = zero.steps().to_vec();
        let node = g.flat_index(&[10, 10]);
        let mut vals = vec![0.0; g.node_count()];
        vals[node] = 1.0;
        steps[4].1 = ScalarField::new(g, vals).unwrap();
        let single = OccupancyHistory::new(g, steps).unwrap();
        let d = l1_distance(&single, &zero).unwrap();
        assert!((d - g.cell_volume() * 0.1).abs() < 1e-15);
    }

    #[test]
    fn l1_distance_rejects_mismatch() {
        let g = grid2(21);
        let a = OccupancyHistory::constant_in_time(&ScalarField::constant(g, 1.0), &[0.0, 0.5, 1.0]).unwrap();
        let b = OccupancyHistory::constant_in_time(&ScalarField::constant(g, 1.0), &[0.0, 1.0]).unwrap();
        assert!(l1_distance(&a, &b).is_err());
        let g2 = grid2(11);
        let c = OccupancyHistory::constant_in_time(&ScalarField::constant(g2, 1.0), &[0.0, 0.5, 1.0]).unwrap();
        assert!(l1_distance(&a, &c).is_err());
    }

    #[test]
    fn occupancy_is_clamped_and_stamps_checked() {
        let g = grid2(5);
        let f = ScalarField::constant(g, 1.7);
        let h = OccupancyHistory::constant_in_time(&f, &[0.0, 1.0]).unwrap();
        assert!(h.steps()[0].1.values().iter().all(|&v| v == 1.0));
        assert!(OccupancyHistory::constant_in_time(&f, &[0.1, 1.0]).is_err());
        assert!(OccupancyHistory::constant_in_time(&f, &[0.0, 0.5]).is_err());
        assert!(OccupancyHistory::constant_in_time(&f, &[0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn nearest_stamp_prefers_earlier_on_ties() {
        let g = grid2(5);
        let f = ScalarField::constant(g, 0.0);
        let h = OccupancyHistory::constant_in_time(&f, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(h.nearest_index(0.25), 0);
        assert_eq!(h.nearest_index(0.26), 1);
        assert_eq!(h.nearest_index(2.0), 2);
    }

    #[test]
    fn non_finite_rejected() {
        let g = grid2(3);
        let mut vals = vec![0.0; 9];
        vals[3] = f64::NAN;
        assert!(ScalarField::new(g, vals).is_err());
        assert!(ScalarField::new(g, vec![0.0; 8]).is_err());
    }
}
