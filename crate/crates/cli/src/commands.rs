//! The `run`, `iterate`, `check` and `barrier` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use frontflow::io::{write_ffld, write_field_csv};
use frontflow::{
    barrier_ode, containment_check, growth_envelope, relaxed_iterate, solve_frozen, sublinear_growth_check,
    FieldHistory, GridSpec, IterationOutcome, ScalarField, VelocityLaw, VelocityProvider,
};

use crate::config::{CheckSettings, OutputSettings, Scenario};
use crate::error::CliError;
use crate::suites::{self, CheckRow, RESULT_HEADER};

/// Flat `key=value` text.
fn kv_text(pairs: &[(&str, String)]) -> String {
    pairs.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{k}={v}");
        s
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::from)
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::from)
}

/// Writes `{prefix}_{k:05}.ffld` for every `stride`-th stamp up to `t_max`,
/// always including the last kept stamp. Returns the number of dumps.
fn dump_history(
    out: &OutputSettings,
    prefix: &str,
    steps: &[(f64, ScalarField)],
    t_max: f64,
) -> Result<usize, CliError> {
    let kept: Vec<usize> = (0..steps.len()).filter(|&k| steps[k].0 <= t_max).collect();
    let Some(&last) = kept.last() else { return Ok(0) };
    let mut count = 0;
    for &k in &kept {
        let on_stride = out.dump_stride > 0 && k % out.dump_stride == 0;
        if !(on_stride || k == last) {
            continue;
        }
        let (t, field) = &steps[k];
        if out.ffld {
            write_ffld(out.directory.join(format!("{prefix}_{k:05}.ffld")), field, *t)?;
            count += 1;
        }
    }
    if out.csv {
        write_field_csv(out.directory.join(format!("{prefix}_final.csv")), &steps[last].1)?;
    }
    Ok(count)
}

fn radius_at_end(u: &FieldHistory) -> f64 {
    u.effective_radii().last().map_or(0.0, |(_, r)| *r)
}

fn grid_pairs(grid: &GridSpec) -> Vec<(&'static str, String)> {
    vec![
        ("dim", grid.dim().to_string()),
        ("half_extent", grid.half_extent().to_string()),
        ("points_per_axis", grid.points_per_axis().to_string()),
        ("spacing", format!("{:e}", grid.spacing())),
        ("t_final", grid.t_final().to_string()),
        ("stamps", grid.stamps().len().to_string()),
    ]
}

fn touch_text(u: &FieldHistory) -> String {
    u.boundary_touch.map_or_else(|| "none".into(), |t| t.to_string())
}

fn boundary_violation(u: &FieldHistory) -> Result<(), CliError> {
    match u.boundary_touch {
        Some(t) => Err(CliError::Runtime(format!("front reached the boundary margin at t = {t}"))),
        None => Ok(()),
    }
}

/// One frozen solve with the configured (or initial) occupancy.
pub fn run(scenario: &Scenario) -> Result<(), CliError> {
    let started = Instant::now();
    let out = &scenario.output;
    prepare_dir(&out.directory)?;
    let chi = scenario.frozen_chi()?;
    let mut provider = VelocityProvider::new(scenario.law.clone(), scenario.grid)?;
    let u = solve_frozen(&mut provider, &chi, &scenario.u0, &scenario.stepper)?;
    let t_max = u.boundary_touch.unwrap_or(f64::INFINITY);
    let dumps = dump_history(out, "u", &u.steps, t_max)?;
    write_text(&out.directory.join("steps.csv"), &u.log_csv())?;

    let radius = radius_at_end(&u);
    let mut pairs = vec![("command", "run".to_string()), ("law", scenario.law.name().to_string())];
    pairs.extend(grid_pairs(&scenario.grid));
    pairs.extend([
        ("total_substeps", u.total_substeps.to_string()),
        ("final_volume", u.log.last().map_or(0.0, |r| r.volume).to_string()),
        ("final_effective_radius", radius.to_string()),
        ("boundary_touch", touch_text(&u)),
        ("ffld_dumps", dumps.to_string()),
        ("wall_time_s", format!("{:.3}", started.elapsed().as_secs_f64())),
    ]);
    write_text(&out.directory.join("summary.txt"), &kv_text(&pairs))?;
    log::info!("run finished: final effective radius {radius:.6}, {} substeps", u.total_substeps);
    boundary_violation(&u)
}

fn iterate_outcome(scenario: &Scenario) -> Result<IterationOutcome, CliError> {
    Ok(relaxed_iterate(&scenario.law, &scenario.u0, None, &scenario.stepper, &scenario.fixedpoint)?)
}

/// Damped fixed-point iteration; artifacts are written before any exit code
/// is decided.
pub fn iterate(scenario: &Scenario) -> Result<(), CliError> {
    let started = Instant::now();
    let out = &scenario.output;
    prepare_dir(&out.directory)?;
    let outcome = iterate_outcome(scenario)?;
    write_text(&out.directory.join("iterations.csv"), &outcome.log_csv())?;
    write_text(&out.directory.join("certificate.txt"), &outcome.certificate.to_kv())?;
    write_text(&out.directory.join("steps.csv"), &outcome.u.log_csv())?;
    dump_history(out, "u", &outcome.u.steps, f64::INFINITY)?;
    let t_final = outcome.u.steps.last().map_or(0.0, |(t, _)| *t);
    write_ffld(out.directory.join("u_final.ffld"), outcome.u.last(), t_final)?;
    if let Some((t, chi)) = outcome.chi.steps().last() {
        write_ffld(out.directory.join("chi_final.ffld"), chi, *t)?;
    }

    let mut pairs = vec![("command", "iterate".to_string()), ("law", scenario.law.name().to_string())];
    pairs.extend(grid_pairs(&scenario.grid));
    pairs.extend([
        ("iterations", outcome.iterations().to_string()),
        ("converged", outcome.converged.to_string()),
        ("final_residual_l1", outcome.log.last().map_or(f64::NAN, |r| r.residual_l1).to_string()),
        ("tolerance", scenario.fixedpoint.tolerance(&scenario.grid).to_string()),
        ("radius_monotone", outcome.radius_monotone.to_string()),
        ("final_effective_radius", radius_at_end(&outcome.u).to_string()),
        ("boundary_touch", touch_text(&outcome.u)),
        ("wall_time_s", format!("{:.3}", started.elapsed().as_secs_f64())),
    ]);
    write_text(&out.directory.join("summary.txt"), &kv_text(&pairs))?;
    if !outcome.radius_monotone {
        log::warn!("effective radius at T did not settle monotonically across iterations");
    }
    log::info!(
        "iterate finished after {} iterations, converged = {}, sandwich violations {:.3e}",
        outcome.iterations(),
        outcome.converged,
        outcome.certificate.sandwich_violation_fraction
    );
    boundary_violation(&outcome.u)?;
    if !outcome.converged {
        return Err(CliError::NotConverged(outcome.iterations()));
    }
    Ok(())
}

/// Runs the named suites and writes `check_<suite>.csv`.
pub fn check(suite: &str, settings: &CheckSettings) -> Result<(), CliError> {
    let names = suites::resolve(suite)?;
    let out_dir = settings.directory.as_path();
    prepare_dir(out_dir)?;
    let mut rows: Vec<CheckRow> = Vec::new();
    for name in names {
        let started = Instant::now();
        let mut suite_rows = suites::run_suite(name, settings.seed)?;
        for row in &mut suite_rows {
            row.tolerance *= settings.tolerance_scale;
        }
        let failed = suite_rows.iter().filter(|r| !r.passed()).count();
        for row in suite_rows.iter().filter(|r| !r.passed()) {
            log::error!("{name}: {} = {:e} exceeds {:e}", row.check, row.value, row.tolerance);
        }
        log::info!(
            "suite {name}: {}/{} checks passed in {:.2} s",
            suite_rows.len() - failed,
            suite_rows.len(),
            started.elapsed().as_secs_f64()
        );
        rows.extend(suite_rows);
    }
    let mut csv = format!("{RESULT_HEADER}\n");
    for row in &rows {
        csv.push_str(&row.to_csv_line());
        csv.push('\n');
    }
    write_text(&out_dir.join(format!("check_{suite}.csv")), &csv)?;
    let failed = rows.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::CheckFailed { failed, total: rows.len() });
    }
    Ok(())
}

/// Radial barrier against the scenario's front history.
pub fn barrier(scenario: &Scenario) -> Result<(), CliError> {
    let settings = scenario.barrier.as_ref().ok_or_else(|| CliError::Config {
        path: "scenario".into(),
        line: None,
        message: "the barrier command needs a [barrier] table".into(),
    })?;
    let out = &scenario.output;
    prepare_dir(&out.directory)?;
    let grid = &scenario.grid;
    let traj = barrier_ode(&settings.beta, settings.r0, grid.t_final(), settings.ode_dt, grid.dim(), grid.half_extent())?;
    write_text(&out.directory.join("barrier.csv"), &traj.to_csv())?;
    if let Some((l1, l2)) = settings.growth {
        let sample_max = 10.0 * grid.box_volume();
        if sublinear_growth_check(&settings.beta, l1, l2, grid.dim(), sample_max) {
            let envelope = growth_envelope(settings.r0, l1, l2, grid.dim(), grid.t_final());
            log::info!("growth bound holds; envelope at T = {envelope:.6}");
        } else {
            log::warn!("beta exceeds L1 + L2 v^(1/N) on [0, {sample_max}]");
        }
    }
    if traj.blew_up {
        let t = traj.blow_up_time.unwrap_or(f64::NAN);
        log::warn!("barrier radius blew up at t = {t}; containment check skipped");
        write_text(&out.directory.join("containment.txt"), &format!("skipped=blow_up\nblow_up_time={t:e}\n"))?;
        return Ok(());
    }

    let u = match &scenario.law {
        VelocityLaw::VolumeDependent { .. } | VelocityLaw::FitzhughNagumo(_) => iterate_outcome(scenario)?.u,
        law => {
            let mut provider = VelocityProvider::new(law.clone(), *grid)?;
            solve_frozen(&mut provider, &scenario.frozen_chi()?, &scenario.u0, &scenario.stepper)?
        }
    };
    dump_history(out, "u", &u.steps, f64::INFINITY)?;
    let report = containment_check(&u, &traj, settings.tol);
    write_text(&out.directory.join("containment.txt"), &report.to_text())?;
    match report.first_violation {
        Some(t) if !report.contained => Err(CliError::ContainmentViolated(t)),
        _ => {
            log::info!("front contained in the barrier ball (max excess {:.3e})", report.max_excess);
            Ok(())
        }
    }
}

/// Resolves the output directory: `--out` wins over the config.
pub fn with_out_dir(mut scenario: Scenario, out: Option<PathBuf>) -> Scenario {
    if let Some(dir) = out {
        scenario.output.directory = dir;
    }
    scenario
}
