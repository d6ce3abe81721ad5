//! Radial barriers `ψ = R(t) - |x|` with `R' = β(ω_N R^N)`, containment of
//! computed fronts, and the discrete comparison harness.

use rayon::prelude::*;

use crate::error::{FrontError, Result};
use crate::grid::{unit_ball_volume, OccupancyHistory, ScalarField};
use crate::levelset::{solve_frozen, FieldHistory, StepperConfig};
use crate::scalar_fn::ScalarFn;
use crate::velocity::{VelocityLaw, VelocityProvider};

/// Radius above which the barrier counts as blown up, in units of the box extent.
pub const BLOW_UP_EXTENT_FACTOR: f64 = 10.0;
/// Largest tolerated growth of `R` over one ODE step.
pub const BLOW_UP_STEP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierTrajectory {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    pub blew_up: bool,
    pub blow_up_time: Option<f64>,
}

impl BarrierTrajectory {
    /// Piecewise-linear `R(t)`; infinite past a blow-up, clamped at the ends otherwise.
    pub fn radius_at(&self, t: f64) -> f64 {
        let last = *self.times.last().expect("trajectory is never empty");
        if t > last {
            return if self.blew_up { f64::INFINITY } else { *self.radii.last().unwrap() };
        }
        if t <= self.times[0] {
            return self.radii[0];
        }
        let k = self.times.partition_point(|&s| s <= t).min(self.times.len() - 1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (r0, r1) = (self.radii[k - 1], self.radii[k]);
        if t1 == t0 {
            r1
        } else {
            r0 + (r1 - r0) * (t - t0) / (t1 - t0)
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,R\n");
        for (t, r) in self.times.iter().zip(&self.radii) {
            s.push_str(&format!("{t:.9e},{r:.12e}\n"));
        }
        s
    }
}

/// RK4 integration of `R' = β(ω_N max(R,0)^N)` on `[0, T]`.
///
/// `extent` is the largest box coordinate; crossing `10·extent`, a tenfold
/// jump in one step, or a non-finite value ends the trajectory as a blow-up.
pub fn barrier_ode(beta: &ScalarFn, r0: f64, t_final: f64, ode_dt: f64, dim: usize, extent: f64) -> Result<BarrierTrajectory> {
    if !(r0 > 0.0) || !(ode_dt > 0.0) || !(t_final > 0.0) {
        return Err(FrontError::InvalidParameter(format!(
            "barrier needs R0 > 0, T > 0 and ode_dt > 0 (got {r0}, {t_final}, {ode_dt})"
        )));
    }
    if !(1..=3).contains(&dim) {
        return Err(FrontError::UnsupportedDimension(dim));
    }
    let omega = unit_ball_volume(dim);
    let rhs = |r: f64| beta.eval(omega * r.max(0.0).powi(dim as i32));
    let n = (t_final / ode_dt).ceil().max(1.0) as usize;
    let dt = t_final / n as f64;
    let limit = BLOW_UP_EXTENT_FACTOR * extent;

    let mut times = vec![0.0];
    let mut radii = vec![r0];
    let mut r = r0;
    for k in 1..=n {
        let k1 = rhs(r);
        let k2 = rhs(r + 0.5 * dt * k1);
        let k3 = rhs(r + 0.5 * dt * k2);
        let k4 = rhs(r + dt * k3);
        let next = r + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t = if k == n { t_final } else { k as f64 * dt };
        let jump = r > 0.0 && next > BLOW_UP_STEP_FACTOR * r;
        if !next.is_finite() || next > limit || jump {
            return Ok(BarrierTrajectory { times, radii, blew_up: true, blow_up_time: Some(t) });
        }
        r = next;
        times.push(t);
        radii.push(r);
    }
    Ok(BarrierTrajectory { times, radii, blew_up: false, blow_up_time: None })
}

/// Checks `β(v) ≤ L₁ + L₂ v^{1/N}` on 400 log-spaced samples of `[1e-6, sample_max]`.
pub fn sublinear_growth_check(beta: &ScalarFn, l1: f64, l2: f64, dim: usize, sample_max: f64) -> bool {
    const SAMPLES: usize = 400;
    let lo: f64 = 1e-6;
    let hi = sample_max.max(lo * 10.0);
    let ratio = (hi / lo).ln();
    (0..SAMPLES).all(|k| {
        let v = lo * (ratio * k as f64 / (SAMPLES - 1) as f64).exp();
        beta.eval(v) <= l1 + l2 * v.powf(1.0 / dim as f64)
    })
}

/// Grönwall envelope `(R₀ + ct)e^{ct}` with `c = max(L₁, L₂ ω_N^{1/N})`.
pub fn growth_envelope(r0: f64, l1: f64, l2: f64, dim: usize, t: f64) -> f64 {
    let c = l1.max(l2 * unit_ball_volume(dim).powf(1.0 / dim as f64));
    (r0 + c * t) * (c * t).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub contained: bool,
    pub first_violation: Option<f64>,
    /// Largest `|x| - R(t)` over nodes with `u ≥ 0` (negative when strictly inside).
    pub max_excess: f64,
    pub tol: f64,
}

impl ContainmentReport {
    pub fn to_text(&self) -> String {
        format!(
            "contained={}\nfirst_violation={}\nmax_excess={:e}\ntol={:e}\n",
            self.contained,
            self.first_violation.map(|t| format!("{t:e}")).unwrap_or_else(|| "none".into()),
            self.max_excess,
            self.tol
        )
    }
}

/// Checks `{u(·,t) ≥ 0} ⊆ B(0, R(t) + tol)` at every stored stamp.
pub fn containment_check(u: &FieldHistory, traj: &BarrierTrajectory, tol: f64) -> ContainmentReport {
    let grid = u.grid;
    let mut first = None;
    let mut worst = f64::NEG_INFINITY;
    for (t, f) in &u.steps {
        let radius = traj.radius_at(*t);
        let excess = f
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v >= 0.0)
            .map(|(i, _)| {
                let x = grid.position(i);
                x.iter().map(|c| c * c).sum::<f64>().sqrt() - radius
            })
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(excess);
        if excess > tol && first.is_none() {
            first = Some(*t);
        }
    }
    ContainmentReport { contained: first.is_none(), first_violation: first, max_excess: worst, tol }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub pairs: usize,
    /// Largest `u - v` over all pairs, stamps and nodes (0 when ordered).
    pub max_violation: f64,
    pub violating_pairs: usize,
}

impl ComparisonReport {
    pub fn holds(&self) -> bool {
        self.violating_pairs == 0
    }

    pub fn to_text(&self) -> String {
        format!(
            "pairs={}\nmax_violation={:e}\nviolating_pairs={}\n",
            self.pairs, self.max_violation, self.violating_pairs
        )
    }
}

/// Evolves each ordered pair `u0 ≤ v0` with the same frozen `χ` and records
/// every nodewise inversion `u > v` at the stored stamps.
pub fn comparison_harness(
    law: &VelocityLaw,
    chi: &OccupancyHistory,
    pairs: &[(ScalarField, ScalarField)],
    config: &StepperConfig,
) -> Result<ComparisonReport> {
    for (k, (a, b)) in pairs.iter().enumerate() {
        if a.values().iter().zip(b.values()).any(|(x, y)| x > y) {
            return Err(FrontError::InvalidParameter(format!("pair {k} is not ordered")));
        }
    }
    let violations: Vec<f64> = pairs
        .par_iter()
        .map(|(a, b)| {
            let mut pa = VelocityProvider::new(law.clone(), *chi.grid())?;
            let mut pb = VelocityProvider::new(law.clone(), *chi.grid())?;
            let ua = solve_frozen(&mut pa, chi, a, config)?;
            let ub = solve_frozen(&mut pb, chi, b, config)?;
            Ok(max_inversion(&ua, &ub))
        })
        .collect::<Result<_>>()?;
    Ok(ComparisonReport {
        pairs: pairs.len(),
        max_violation: violations.iter().copied().fold(0.0, f64::max),
        violating_pairs: violations.iter().filter(|&&v| v > 0.0).count(),
    })
}

fn max_inversion(a: &FieldHistory, b: &FieldHistory) -> f64 {
    a.steps
        .iter()
        .zip(&b.steps)
        .flat_map(|((_, x), (_, y))| x.values().iter().zip(y.values()).map(|(p, q)| p - q))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{indicator, signed_distance_init, GridSpec, IndicatorMode, ShapeSpec};
    use std::f64::consts::PI;

    #[test]
    fn ode_examples() {
        let traj = barrier_ode(&ScalarFn::Constant(0.25), 0.1, 2.0, 0.01, 2, 1.0).unwrap();
        for (t, r) in traj.times.iter().zip(&traj.radii) {
            assert!((r - (0.1 + 0.25 * t)).abs() < 1e-12);
        }
        assert!(!traj.blew_up);

        let r0 = 0.5;
        let traj = barrier_ode(&ScalarFn::Affine { offset: 0.0, slope: -1.0 }, r0, 1.0, 1e-3, 2, 1.0).unwrap();
        let exact = r0 / (1.0 + PI * r0);
        assert!((traj.radii.last().unwrap() - exact).abs() < 1e-8);

        let traj = barrier_ode(&ScalarFn::Power { coef: 1.0, exponent: 2.0 }, 1.0, 1.0, 1e-4, 1, 1.0).unwrap();
        assert!(traj.blew_up);
        let tb = traj.blow_up_time.unwrap();
        // R' = 4R² from R = 1 blows up at t = 1/4
        assert!(tb > 0.2 && tb <= 0.26, "{tb}");
        assert!(traj.radii.iter().all(|r| r.is_finite()));
        assert_eq!(traj.radius_at(0.9), f64::INFINITY);

        assert!(barrier_ode(&ScalarFn::Constant(1.0), 0.0, 1.0, 0.1, 2, 1.0).is_err());
    }

    #[test]
    fn radius_interpolation() {
        let traj = BarrierTrajectory { times: vec![0.0, 1.0, 2.0], radii: vec![1.0, 2.0, 4.0], blew_up: false, blow_up_time: None };
        assert_eq!(traj.radius_at(0.5), 1.5);
        assert_eq!(traj.radius_at(1.5), 3.0);
        assert_eq!(traj.radius_at(5.0), 4.0);
        assert!(traj.to_csv().starts_with("t,R\n"));
    }

    #[test]
    fn growth_check_examples() {
        assert!(sublinear_growth_check(&ScalarFn::Affine { offset: 1.0, slope: -1.0 }, 1.0, 1.0, 2, 1e6));
        assert!(!sublinear_growth_check(&ScalarFn::identity(), 1.0, 1.0, 2, 1e6));
        assert!(sublinear_growth_check(&ScalarFn::Power { coef: 2.0, exponent: 0.5 }, 0.1, 2.0, 2, 1e6));
    }

    #[test]
    fn containment_examples() {
        let g = GridSpec::new(2, 1.0, 101, 0.4, 0.05).unwrap();
        let h = g.spacing();
        let u0 = signed_distance_init(&g, &ShapeSpec::centered_ball(2, 0.3)).unwrap();
        let chi = OccupancyHistory::constant_in_time(&indicator(&u0, IndicatorMode::Sharp, 0.0), &g.stamps()).unwrap();
        let mut p = VelocityProvider::new(VelocityLaw::Constant(1.0), g).unwrap();
        let u = solve_frozen(&mut p, &chi, &u0, &StepperConfig::default()).unwrap();
        let traj = barrier_ode(&ScalarFn::Constant(1.0), 0.3, 0.4, 1e-3, 2, 1.0).unwrap();
        assert!(containment_check(&u, &traj, 2.0 * h).contained);

        let tiny = BarrierTrajectory { times: vec![0.0, 0.4], radii: vec![0.01, 0.01], blew_up: false, blow_up_time: None };
        let rep = containment_check(&u, &tiny, 2.0 * h);
        assert_eq!(rep.first_violation, Some(0.0));
        assert!(rep.to_text().contains("contained=false"));

        let mut empty = u.clone();
        for (_, f) in empty.steps.iter_mut() {
            *f = ScalarField::constant(g, -1.0);
        }
        assert!(containment_check(&empty, &tiny, 0.0).contained);
    }

    #[test]
    fn comparison_trivial_pairs() {
        let g = GridSpec::new(2, 1.0, 41, 0.2, 0.05).unwrap();
        let u0 = signed_distance_init(&g, &ShapeSpec::centered_ball(2, 0.3)).unwrap();
        let chi = OccupancyHistory::constant_in_time(&indicator(&u0, IndicatorMode::Sharp, 0.0), &g.stamps()).unwrap();
        let shifted = u0.map(|v| v + 1.0).unwrap();
        let pairs = vec![(u0.clone(), shifted.clone()), (u0.clone(), u0.clone())];
        for law in [VelocityLaw::Constant(1.0), VelocityLaw::CurvatureOnly] {
            let rep = comparison_harness(&law, &chi, &pairs, &StepperConfig::default()).unwrap();
            assert!(rep.holds(), "{rep:?}");
            assert_eq!(rep.max_violation, 0.0);
        }
        assert!(comparison_harness(&VelocityLaw::Constant(1.0), &chi, &[(shifted, u0)], &StepperConfig::default()).is_err());
    }

    #[test]
    fn envelope_dominates_linear_growth() {
        let beta = ScalarFn::Affine { offset: 1.0, slope: 0.0 };
        let traj = barrier_ode(&beta, 0.2, 1.0, 1e-3, 2, 10.0).unwrap();
        for (t, r) in traj.times.iter().zip(&traj.radii) {
            assert!(*r <= growth_envelope(0.2, 1.0, 1.0, 2, *t) + 1e-12);
        }
    }
}
