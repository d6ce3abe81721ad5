//! Self-check suites run by `frontflow check`.

use std::sync::Arc;

use frontflow::heat::heat_cfl_limit;
use frontflow::{
    certify, comparison_harness, green_mass, lemma_bounds_check, relaxed_iterate, solve_heat, xi_select, DislocationLaw,
    Drift, FieldHistory, FixedPointConfig, GridSpec, KernelPatch, OccupancyHistory, ScalarField, ScalarFn,
    StepperConfig, VelocityLaw,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;

pub const SUITES: [&str; 4] = ["comparison", "heat", "green", "certificate"];
pub const RESULT_HEADER: &str = "suite,check,value,tolerance,passed";

/// One assertion: `value ≤ tolerance`.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub suite: &'static str,
    pub check: String,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }

    pub fn to_csv_line(&self) -> String {
        format!("{},{},{:e},{:e},{}", self.suite, self.check, self.value, self.tolerance, self.passed())
    }
}

/// Expands `all` and rejects unknown names.
pub fn resolve(name: &str) -> Result<Vec<&'static str>, CliError> {
    if name == "all" {
        return Ok(SUITES.to_vec());
    }
    SUITES
        .iter()
        .find(|s| **s == name)
        .map(|s| vec![*s])
        .ok_or_else(|| CliError::Usage(format!("unknown suite \"{name}\" (expected {} or all)", SUITES.join(", "))))
}

pub fn run_suite(name: &str, seed: u64) -> Result<Vec<CheckRow>, CliError> {
    match name {
        "comparison" => comparison(seed),
        "heat" => heat(seed),
        "green" => green(),
        "certificate" => certificate(seed),
        other => Err(CliError::Usage(format!("unknown suite \"{other}\""))),
    }
}

fn random_field(grid: GridSpec, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ScalarField {
    ScalarField::new(grid, (0..grid.node_count()).map(|_| rng.gen_range(lo..=hi)).collect())
        .expect("length matches the grid")
}

fn ordered_pair(grid: GridSpec, rng: &mut ChaCha8Rng) -> (ScalarField, ScalarField) {
    let (cx, cy) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    let r = rng.gen_range(0.2..0.5);
    let noise = rng.gen_range(0.0..0.05);
    let u: Vec<f64> = (0..grid.node_count())
        .map(|i| {
            let x = grid.position(i);
            r - ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt() + noise * rng.gen_range(-1.0..1.0)
        })
        .collect();
    let v = u.iter().map(|&a| if rng.gen_bool(0.3) { a } else { a + rng.gen_range(0.0..0.1) }).collect();
    (ScalarField::new(grid, u).expect("length matches"), ScalarField::new(grid, v).expect("length matches"))
}

/// 100 ordered pairs per law under a frozen random occupancy.
fn comparison(seed: u64) -> Result<Vec<CheckRow>, CliError> {
    let grid = GridSpec::new(2, 1.0, 41, 0.1, 0.01)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi = OccupancyHistory::constant_in_time(&random_field(grid, &mut rng, 0.0, 1.0), &grid.stamps())?;
    let kernel = KernelPatch::mexican_hat(&grid, 0.1, 1.0, 0.6)?;
    let drift = Drift::Function(Arc::new(|x: &[f64], t: f64| 0.3 * (3.0 * x[0]).sin() - 0.2 * t));
    let laws = [
        ("constant", VelocityLaw::Constant(0.8)),
        ("dislocation", VelocityLaw::Dislocation(DislocationLaw::new(kernel, drift, 0.35, false)?)),
        ("curvature", VelocityLaw::CurvatureOnly),
    ];
    let config = StepperConfig::default();
    let mut rows = Vec::new();
    for (name, law) in laws {
        let pairs: Vec<_> = (0..100).map(|_| ordered_pair(grid, &mut rng)).collect();
        let report = comparison_harness(&law, &chi, &pairs, &config)?;
        rows.push(CheckRow {
            suite: "comparison",
            check: format!("{name}_violating_pairs"),
            value: report.violating_pairs as f64,
            tolerance: 0.0,
        });
        rows.push(CheckRow {
            suite: "comparison",
            check: format!("{name}_max_violation"),
            value: report.max_violation,
            tolerance: 0.0,
        });
    }
    Ok(rows)
}

/// Uniform bound `max|v(t)| ≤ ‖v0‖ + γt` under random switching occupancy.
fn heat(seed: u64) -> Result<Vec<CheckRow>, CliError> {
    let grid = GridSpec::new(2, 1.0, 41, 0.2, 0.01)?;
    let gamma = 1.0;
    let g_plus = ScalarFn::Tanh { amplitude: 1.0, rate: 2.0 };
    let g_minus = ScalarFn::custom(|r: f64| -0.6 * r.cos());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for run in 0..8 {
        let steps = grid.stamps().into_iter().map(|t| (t, random_field(grid, &mut rng, 0.0, 1.0))).collect();
        let chi = OccupancyHistory::new(grid, steps)?;
        let amp = rng.gen_range(0.1..2.0);
        let (kx, ky) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
        let v0 = ScalarField::from_fn(grid, |x| amp * (kx * x[0]).sin() * (ky * x[1]).cos())?;
        let hist = solve_heat(&v0, &chi, &g_plus, &g_minus, gamma, grid.t_final(), heat_cfl_limit(&grid), 1)?;
        let report = lemma_bounds_check(&hist, &v0, gamma, None);
        rows.push(CheckRow {
            suite: "heat",
            check: format!("bound_excess_run{run}"),
            value: report.worst_bound_i_excess,
            tolerance: 1e-10,
        });
    }
    Ok(rows)
}

/// Mass of the reflected heat kernel on the box.
fn green() -> Result<Vec<CheckRow>, CliError> {
    let grid = GridSpec::new(2, 1.0, 201, 1.0, 0.1)?;
    let mut rows = Vec::new();
    for s in [0.01, 0.05] {
        let m = green_mass(&grid, s)?;
        log::info!("green s = {s}: reflected mass {:.12}, truncated free-space mass {:.6}", m.reflected, m.truncated);
        rows.push(CheckRow { suite: "green", check: format!("mass_residual_s{s}"), value: m.residual(), tolerance: 1e-3 });
    }
    Ok(rows)
}

fn random_history(grid: GridSpec, rng: &mut ChaCha8Rng) -> FieldHistory {
    let steps = grid.stamps().into_iter().map(|t| (t, random_field(grid, rng, -1.0, 1.0))).collect();
    FieldHistory { grid, steps, log: Vec::new(), boundary_touch: None, total_substeps: 0 }
}

/// Maximal selections certify; an empty occupancy under a positive field
/// violates everywhere; χ-independent laws converge at once.
fn certificate(seed: u64) -> Result<Vec<CheckRow>, CliError> {
    let grid = GridSpec::new(2, 1.0, 41, 0.1, 0.02)?;
    let band = 2.0 * grid.spacing();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let u = random_history(grid, &mut rng);
        let cert = certify(&u, &xi_select(&u)?, band)?;
        worst = worst.max(cert.sandwich_violation_fraction).max(cert.residual_l1);
    }
    let mut rows =
        vec![CheckRow { suite: "certificate", check: "maximal_selection_violation".into(), value: worst, tolerance: 0.0 }];

    let ones = FieldHistory {
        grid,
        steps: grid.stamps().into_iter().map(|t| (t, ScalarField::constant(grid, 1.0))).collect(),
        log: Vec::new(),
        boundary_touch: None,
        total_substeps: 0,
    };
    let empty = OccupancyHistory::constant_in_time(&ScalarField::constant(grid, 0.0), &grid.stamps())?;
    let fraction = certify(&ones, &empty, band)?.sandwich_violation_fraction;
    rows.push(CheckRow {
        suite: "certificate",
        check: "empty_occupancy_violation_deficit".into(),
        value: (1.0 - fraction).abs(),
        // the fraction is a ratio of quadrature sums
        tolerance: 1e-12,
    });

    let u0 = ScalarField::from_fn(grid, |x| 0.3 - (x[0] * x[0] + x[1] * x[1]).sqrt())?;
    let out = relaxed_iterate(&VelocityLaw::Constant(0.5), &u0, None, &StepperConfig::default(), &FixedPointConfig::default())?;
    rows.push(CheckRow {
        suite: "certificate",
        check: "constant_law_iterations_beyond_one".into(),
        value: out.iterations() as f64 - 1.0,
        tolerance: 0.0,
    });
    rows.push(CheckRow {
        suite: "certificate",
        check: "constant_law_residual".into(),
        value: out.log.last().map_or(f64::INFINITY, |r| r.residual_l1),
        tolerance: 0.0,
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_names() {
        assert_eq!(resolve("all").unwrap(), SUITES.to_vec());
        assert_eq!(resolve("green").unwrap(), vec!["green"]);
        assert_eq!(resolve("bogus").unwrap_err().exit_code(), 1);
    }

    #[test]
    fn fast_suites_pass() {
        for name in ["green", "certificate"] {
            let rows = run_suite(name, 42).unwrap();
            assert!(rows.iter().all(CheckRow::passed), "{rows:?}");
        }
    }

    #[test]
    fn csv_line_layout() {
        let row = CheckRow { suite: "green", check: "x".into(), value: 2.0, tolerance: 1.0 };
        assert_eq!(row.to_csv_line(), "green,x,2e0,1e0,false");
    }
}
