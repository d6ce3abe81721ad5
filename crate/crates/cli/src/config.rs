//! Scenario files: TOML with `grid`, `law`, `initial`, `stepper`,
//! `fixedpoint`, `output` and `barrier` tables.
//!
//! Parse errors and validation errors both carry the line of the offending
//! key so that a malformed file can be fixed without guessing.

use std::path::{Path, PathBuf};

use frontflow::io::read_ffld;
use frontflow::levelset::DEFAULT_REDISTANCE_EVERY;
use frontflow::{
    indicator, signed_distance_init, CurvatureScheme, DislocationLaw, Drift, FitzhughNagumoLaw, FixedPointConfig,
    FrontError, GridSpec, IndicatorMode, KernelPatch, OccupancyHistory, ScalarField, ScalarFn, ShapeSpec,
    StepperConfig, VelocityLaw,
};
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;
/// Stored stamps per run when `grid.dt` is not given.
const DEFAULT_STAMP_COUNT: f64 = 20.0;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    grid: GridBlock,
    law: LawBlock,
    initial: InitialBlock,
    #[serde(default)]
    stepper: StepperBlock,
    #[serde(default)]
    fixedpoint: FixedPointBlock,
    #[serde(default)]
    output: OutputBlock,
    barrier: Option<BarrierBlock>,
    #[serde(default)]
    check: CheckBlock,
}

/// The subset of a scenario read by `frontflow check`.
#[derive(Debug, Deserialize)]
struct RawCheckConfig {
    seed: Option<u64>,
    #[serde(default)]
    output: OutputBlock,
    #[serde(default)]
    check: CheckBlock,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckBlock {
    /// Multiplies every check tolerance.
    #[serde(default = "one")]
    tolerance_scale: f64,
}

impl Default for CheckBlock {
    fn default() -> Self {
        Self { tolerance_scale: 1.0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridBlock {
    dim: usize,
    half_extent: f64,
    points_per_axis: usize,
    t_final: f64,
    /// Spacing of the stored time stamps.
    dt: Option<f64>,
    node_budget: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum FnSpec {
    Constant { value: f64 },
    Affine { offset: f64, slope: f64 },
    Tanh { amplitude: f64, rate: f64 },
    Power { coef: f64, exponent: f64 },
}

impl FnSpec {
    fn build(&self) -> ScalarFn {
        match *self {
            Self::Constant { value } => ScalarFn::Constant(value),
            Self::Affine { offset, slope } => ScalarFn::Affine { offset, slope },
            Self::Tanh { amplitude, rate } => ScalarFn::Tanh { amplitude, rate },
            Self::Power { coef, exponent } => ScalarFn::Power { coef, exponent },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
enum KernelSpec {
    Gaussian {
        sigma: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Constant {
        value: f64,
    },
    MexicanHat {
        sigma: f64,
        a1: f64,
        a2: f64,
    },
    Delta {},
    File {
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LawBlock {
    Constant {
        speed: f64,
    },
    Curvature {},
    Volume {
        beta: FnSpec,
        #[serde(default)]
        curvature: bool,
    },
    Dislocation {
        kernel: KernelSpec,
        #[serde(default)]
        drift: f64,
        drift_bound: Option<f64>,
        #[serde(default)]
        curvature: bool,
    },
    FitzhughNagumo {
        alpha: FnSpec,
        g_plus: FnSpec,
        g_minus: FnSpec,
        #[serde(default)]
        v0: f64,
        g_lower: f64,
        g_upper: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BallEntry {
    center: Vec<f64>,
    radius: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialBlock {
    /// `ball`, `balls`, `plane` or `file`.
    shape: String,
    center: Option<Vec<f64>>,
    radius: Option<f64>,
    balls: Option<Vec<BallEntry>>,
    normal: Option<Vec<f64>>,
    offset: Option<f64>,
    path: Option<PathBuf>,
    /// Optional FFLD occupancy held constant in time for `run`.
    chi: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepperBlock {
    #[serde(default)]
    curvature_enabled: bool,
    grad_regularization: Option<f64>,
    #[serde(default = "half")]
    cfl_safety: f64,
    #[serde(default)]
    redistance: bool,
    redistance_every: Option<usize>,
    #[serde(default = "median")]
    curvature_scheme: String,
    #[serde(default = "three")]
    median_radius_cells: f64,
    median_directions: Option<usize>,
}

impl Default for StepperBlock {
    fn default() -> Self {
        Self {
            curvature_enabled: false,
            grad_regularization: None,
            cfl_safety: 0.5,
            redistance: false,
            redistance_every: None,
            curvature_scheme: median(),
            median_radius_cells: 3.0,
            median_directions: None,
        }
    }
}

fn half() -> f64 {
    0.5
}

fn three() -> f64 {
    3.0
}

fn median() -> String {
    "median".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedPointBlock {
    #[serde(default = "half")]
    relaxation: f64,
    #[serde(default = "fifty")]
    max_iterations: usize,
    tol_l1: Option<f64>,
}

impl Default for FixedPointBlock {
    fn default() -> Self {
        Self { relaxation: 0.5, max_iterations: 50, tol_l1: None }
    }
}

fn fifty() -> usize {
    50
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputBlock {
    directory: Option<PathBuf>,
    /// Write every n-th stamp as FFLD (0 keeps only the final one).
    dump_stride: Option<usize>,
    /// Any of `ffld` and `csv`.
    formats: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BarrierBlock {
    beta: Option<FnSpec>,
    r0: Option<f64>,
    #[serde(default = "ode_dt")]
    ode_dt: f64,
    tol: Option<f64>,
    l1: Option<f64>,
    l2: Option<f64>,
}

fn ode_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone)]
pub struct OutputSettings {
    pub directory: PathBuf,
    pub dump_stride: usize,
    pub ffld: bool,
    pub csv: bool,
}

#[derive(Debug, Clone)]
pub struct BarrierSettings {
    pub beta: ScalarFn,
    pub r0: f64,
    pub ode_dt: f64,
    pub tol: f64,
    pub growth: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct CheckSettings {
    pub seed: u64,
    pub directory: PathBuf,
    pub tolerance_scale: f64,
}

/// A fully validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: GridSpec,
    pub law: VelocityLaw,
    pub u0: ScalarField,
    /// Frozen occupancy for `run`; `None` means the indicator of `u0`.
    pub chi: Option<OccupancyHistory>,
    pub stepper: StepperConfig,
    pub fixedpoint: FixedPointConfig,
    pub output: OutputSettings,
    pub barrier: Option<BarrierSettings>,
    pub seed: u64,
}

impl Scenario {
    /// The frozen occupancy used by `run`.
    pub fn frozen_chi(&self) -> Result<OccupancyHistory, FrontError> {
        match &self.chi {
            Some(c) => Ok(c.clone()),
            None => {
                OccupancyHistory::constant_in_time(&indicator(&self.u0, IndicatorMode::Sharp, 0.0), &self.grid.stamps())
            }
        }
    }
}

/// Source text with helpers to anchor errors to lines.
struct Source<'a> {
    text: &'a str,
    path: &'a Path,
}

impl Source<'_> {
    /// Line (1-based) of `key = ...` inside `[section]`, falling back to the
    /// section header.
    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        let mut header = None;
        for (n, raw) in self.text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('[') {
                current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
                if current == section {
                    header = Some(n + 1);
                }
                continue;
            }
            let in_section = current == section || current.starts_with(&format!("{section}."));
            if in_section {
                if let Some(rest) = line.strip_prefix(key) {
                    if rest.trim_start().starts_with('=') {
                        return Some(n + 1);
                    }
                }
            }
        }
        header
    }

    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> CliError {
        CliError::Config {
            path: self.path.display().to_string(),
            line: self.line_of(section, key),
            message: format!("{section}.{key}: {}", message.into()),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        line: None,
        message: format!("cannot read config: {e}"),
    })
}

fn syntax_error(text: &str, path: &Path, e: toml::de::Error) -> CliError {
    CliError::Config {
        path: path.display().to_string(),
        line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
        message: e.message().to_string(),
    }
}

pub fn load(path: &Path) -> Result<Scenario, CliError> {
    parse(&read(path)?, path)
}

/// Reads only `seed`, `[output]` and `[check]`; other tables are ignored.
pub fn load_check(path: &Path) -> Result<CheckSettings, CliError> {
    let text = read(path)?;
    parse_check(&text, path)
}

pub fn parse_check(text: &str, path: &Path) -> Result<CheckSettings, CliError> {
    let src = Source { text, path };
    let raw: RawCheckConfig = toml::from_str(text).map_err(|e| syntax_error(text, path, e))?;
    let scale = raw.check.tolerance_scale;
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(src.err("check", "tolerance_scale", "must be finite and non-negative"));
    }
    Ok(CheckSettings {
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        directory: build_output(&src, &raw.output)?.directory,
        tolerance_scale: scale,
    })
}

/// Parses and validates scenario text; `path` anchors relative file
/// references and error messages.
pub fn parse(text: &str, path: &Path) -> Result<Scenario, CliError> {
    let src = Source { text, path };
    let raw: RawConfig = toml::from_str(text).map_err(|e| syntax_error(text, path, e))?;

    let grid = build_grid(&src, &raw.grid)?;
    let u0 = build_initial(&src, &raw.initial, &grid)?;
    let chi = match &raw.initial.chi {
        Some(p) => {
            let field = read_ffld(src.resolve(p))
                .and_then(|rec| rec.into_field(&grid))
                .map_err(|e| src.err("initial", "chi", e.to_string()))?;
            Some(
                OccupancyHistory::constant_in_time(&field, &grid.stamps())
                    .map_err(|e| src.err("initial", "chi", e.to_string()))?,
            )
        }
        None => None,
    };
    let law = build_law(&src, &raw.law, &grid)?;
    let stepper = build_stepper(&src, &raw.stepper, grid.dim())?;
    let fixedpoint = FixedPointConfig {
        relaxation: raw.fixedpoint.relaxation,
        max_iterations: raw.fixedpoint.max_iterations,
        tol_l1: raw.fixedpoint.tol_l1,
    };
    if let Err(e) = fixedpoint.validate() {
        let key = match &e {
            FrontError::InvalidParameter(m) if m.contains("max_iterations") => "max_iterations",
            FrontError::InvalidParameter(m) if m.contains("tol_l1") => "tol_l1",
            _ => "relaxation",
        };
        return Err(src.err("fixedpoint", key, e.to_string()));
    }
    let output = build_output(&src, &raw.output)?;
    if !(raw.check.tolerance_scale >= 0.0 && raw.check.tolerance_scale.is_finite()) {
        return Err(src.err("check", "tolerance_scale", "must be finite and non-negative"));
    }
    let barrier = match &raw.barrier {
        Some(b) => Some(build_barrier(&src, b, &raw, &grid)?),
        None => None,
    };
    Ok(Scenario {
        grid,
        law,
        u0,
        chi,
        stepper,
        fixedpoint,
        output,
        barrier,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
    })
}

fn build_grid(src: &Source, g: &GridBlock) -> Result<GridSpec, CliError> {
    if !(1..=3).contains(&g.dim) {
        return Err(src.err("grid", "dim", format!("dimension must be 1, 2 or 3, got {}", g.dim)));
    }
    if !(g.half_extent > 0.0 && g.half_extent.is_finite()) {
        return Err(src.err("grid", "half_extent", "must be positive"));
    }
    if g.points_per_axis < 3 {
        return Err(src.err("grid", "points_per_axis", "need at least 3 nodes per axis"));
    }
    if !(g.t_final > 0.0 && g.t_final.is_finite()) {
        return Err(src.err("grid", "t_final", "must be positive"));
    }
    let dt = g.dt.unwrap_or(g.t_final / DEFAULT_STAMP_COUNT);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(src.err("grid", "dt", "must be positive"));
    }
    let result = match g.node_budget {
        Some(b) => GridSpec::with_budget(g.dim, g.half_extent, g.points_per_axis, g.t_final, dt, b),
        None => GridSpec::new(g.dim, g.half_extent, g.points_per_axis, g.t_final, dt),
    };
    result.map_err(|e| src.err("grid", "points_per_axis", e.to_string()))
}

fn check_point(src: &Source, key: &str, v: &[f64], dim: usize) -> Result<(), CliError> {
    if v.len() != dim {
        return Err(src.err("initial", key, format!("expected {dim} coordinates, got {}", v.len())));
    }
    Ok(())
}

fn build_initial(src: &Source, b: &InitialBlock, grid: &GridSpec) -> Result<ScalarField, CliError> {
    let dim = grid.dim();
    let missing = |key: &str| src.err("initial", key, format!("required for shape = \"{}\"", b.shape));
    let shape = match b.shape.as_str() {
        "ball" => {
            let radius = b.radius.ok_or_else(|| missing("radius"))?;
            let center = b.center.clone().unwrap_or_else(|| vec![0.0; dim]);
            check_point(src, "center", &center, dim)?;
            ShapeSpec::ball(&center, radius)
        }
        "balls" => {
            let balls = b.balls.as_ref().ok_or_else(|| missing("balls"))?;
            for ball in balls {
                check_point(src, "balls", &ball.center, dim)?;
            }
            ShapeSpec::UnionOfBalls(balls.iter().map(|e| (e.center.clone(), e.radius)).collect())
        }
        "plane" => {
            let normal = b.normal.clone().ok_or_else(|| missing("normal"))?;
            check_point(src, "normal", &normal, dim)?;
            ShapeSpec::Plane { normal, offset: b.offset.ok_or_else(|| missing("offset"))? }
        }
        "file" => {
            let p = b.path.as_ref().ok_or_else(|| missing("path"))?;
            return read_ffld(src.resolve(p))
                .and_then(|rec| rec.into_field(grid))
                .map_err(|e| src.err("initial", "path", e.to_string()));
        }
        other => {
            return Err(src.err(
                "initial",
                "shape",
                format!("unknown shape \"{other}\" (expected ball, balls, plane or file)"),
            ))
        }
    };
    let key = match b.shape.as_str() {
        "ball" => "radius",
        "plane" => "normal",
        _ => "balls",
    };
    signed_distance_init(grid, &shape).map_err(|e| src.err("initial", key, e.to_string()))
}

fn build_kernel(src: &Source, spec: &KernelSpec, grid: &GridSpec) -> Result<KernelPatch, CliError> {
    let kernel = match spec {
        KernelSpec::Gaussian { sigma, amplitude } => KernelPatch::gaussian(grid, *sigma, *amplitude),
        KernelSpec::Constant { value } => KernelPatch::constant(grid, *value),
        KernelSpec::MexicanHat { sigma, a1, a2 } => KernelPatch::mexican_hat(grid, *sigma, *a1, *a2),
        KernelSpec::Delta {} => KernelPatch::delta(grid.dim(), grid.spacing()),
        KernelSpec::File { path } => read_ffld(src.resolve(path)).and_then(|rec| {
            let patch_grid = GridSpec::new(rec.dim, rec.half_extent, rec.points_per_axis, 1.0, 1.0)?;
            KernelPatch::from_field(rec.into_field(&patch_grid)?)
        }),
    };
    kernel.map_err(|e| src.err("law.kernel", "name", e.to_string()))
}

fn build_law(src: &Source, b: &LawBlock, grid: &GridSpec) -> Result<VelocityLaw, CliError> {
    Ok(match b {
        LawBlock::Constant { speed } => {
            if !speed.is_finite() {
                return Err(src.err("law", "speed", "must be finite"));
            }
            VelocityLaw::Constant(*speed)
        }
        LawBlock::Curvature {} => VelocityLaw::CurvatureOnly,
        LawBlock::Volume { beta, curvature } => {
            VelocityLaw::VolumeDependent { beta: beta.build(), with_curvature: *curvature }
        }
        LawBlock::Dislocation { kernel, drift, drift_bound, curvature } => {
            let kernel = build_kernel(src, kernel, grid)?;
            let bound = drift_bound.unwrap_or(drift.abs());
            let law = DislocationLaw::new(kernel, Drift::Constant(*drift), bound, *curvature)
                .map_err(|e| src.err("law", "drift_bound", e.to_string()))?;
            VelocityLaw::Dislocation(law)
        }
        LawBlock::FitzhughNagumo { alpha, g_plus, g_minus, v0, g_lower, g_upper } => {
            let law = FitzhughNagumoLaw::new(
                alpha.build(),
                g_plus.build(),
                g_minus.build(),
                ScalarField::constant(*grid, *v0),
                *g_lower,
                *g_upper,
            )
            .map_err(|e| src.err("law", "g_plus", e.to_string()))?;
            VelocityLaw::FitzhughNagumo(law)
        }
    })
}

fn build_stepper(src: &Source, b: &StepperBlock, dim: usize) -> Result<StepperConfig, CliError> {
    let curvature_scheme = match b.curvature_scheme.as_str() {
        "median" => CurvatureScheme::Median {
            radius_cells: b.median_radius_cells,
            directions: b.median_directions.unwrap_or(if dim == 3 { 64 } else { 32 }),
        },
        "central" => CurvatureScheme::Central,
        other => {
            return Err(src.err(
                "stepper",
                "curvature_scheme",
                format!("unknown scheme \"{other}\" (expected median or central)"),
            ))
        }
    };
    let redistance_every = match (b.redistance, b.redistance_every) {
        (_, Some(n)) => n,
        (true, None) => DEFAULT_REDISTANCE_EVERY,
        (false, None) => 0,
    };
    let cfg = StepperConfig {
        curvature_enabled: b.curvature_enabled,
        grad_regularization: b.grad_regularization,
        cfl_safety: b.cfl_safety,
        redistance_every,
        curvature_scheme,
    };
    cfg.validate().map_err(|e| {
        let msg = e.to_string();
        let key = if msg.contains("cfl_safety") {
            "cfl_safety"
        } else if msg.contains("grad_regularization") {
            "grad_regularization"
        } else if msg.contains("direction") {
            "median_directions"
        } else {
            "median_radius_cells"
        };
        src.err("stepper", key, msg)
    })?;
    Ok(cfg)
}

fn build_output(src: &Source, b: &OutputBlock) -> Result<OutputSettings, CliError> {
    let formats = b.formats.clone().unwrap_or_else(|| vec!["ffld".into(), "csv".into()]);
    for f in &formats {
        if f != "ffld" && f != "csv" {
            return Err(src.err("output", "formats", format!("unknown format \"{f}\" (expected ffld or csv)")));
        }
    }
    Ok(OutputSettings {
        directory: b.directory.as_ref().map(|d| src.resolve(d)).unwrap_or_else(|| PathBuf::from("out")),
        dump_stride: b.dump_stride.unwrap_or(1),
        ffld: formats.iter().any(|f| f == "ffld"),
        csv: formats.iter().any(|f| f == "csv"),
    })
}

fn build_barrier(src: &Source, b: &BarrierBlock, raw: &RawConfig, grid: &GridSpec) -> Result<BarrierSettings, CliError> {
    let beta = match (&b.beta, &raw.law) {
        (Some(f), _) => f.build(),
        (None, LawBlock::Volume { beta, .. }) => beta.build(),
        (None, _) => return Err(src.err("barrier", "beta", "required unless the law is volume-dependent")),
    };
    let centered_ball = raw.initial.shape == "ball"
        && raw.initial.center.as_ref().map_or(true, |c| c.iter().all(|x| *x == 0.0));
    let r0 = match (b.r0, raw.initial.radius) {
        (Some(r), _) => r,
        (None, Some(r)) if centered_ball => r,
        _ => return Err(src.err("barrier", "r0", "required unless the initial shape is a centred ball")),
    };
    if !(r0 > 0.0) {
        return Err(src.err("barrier", "r0", "must be positive"));
    }
    if !(b.ode_dt > 0.0) {
        return Err(src.err("barrier", "ode_dt", "must be positive"));
    }
    let growth = match (b.l1, b.l2) {
        (Some(l1), Some(l2)) if l1 > 0.0 && l2 > 0.0 => Some((l1, l2)),
        (None, None) => None,
        _ => return Err(src.err("barrier", "l1", "l1 and l2 must be given together and be positive")),
    };
    Ok(BarrierSettings { beta, r0, ode_dt: b.ode_dt, tol: b.tol.unwrap_or(2.0 * grid.spacing()), growth })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[grid]
dim = 2
half_extent = 1.0
points_per_axis = 41
t_final = 0.2
dt = 0.05

[law]
kind = "constant"
speed = 1.0

[initial]
shape = "ball"
radius = 0.3
"#;

    fn parse_str(text: &str) -> Result<Scenario, CliError> {
        parse(text, Path::new("scenario.toml"))
    }

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = parse_str(BASE).unwrap();
        assert_eq!(s.seed, DEFAULT_SEED);
        assert_eq!(s.grid.points_per_axis(), 41);
        assert_eq!(s.grid.stamps().len(), 5);
        assert_eq!(s.stepper, StepperConfig::default());
        assert_eq!(s.fixedpoint, FixedPointConfig::default());
        assert!(s.output.ffld && s.output.csv);
        assert!(s.barrier.is_none());
        assert!(matches!(s.law, VelocityLaw::Constant(c) if c == 1.0));
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = BASE.replace("speed = 1.0", "speed = = 1.0");
        match parse_str(&text) {
            Err(CliError::Config { line: Some(line), .. }) => assert_eq!(line, 11),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_error_reports_line() {
        let text = BASE.replace("points_per_axis = 41", "points_per_axis = 2");
        match parse_str(&text) {
            Err(CliError::Config { line: Some(line), message, .. }) => {
                assert_eq!(line, 5);
                assert!(message.contains("points_per_axis"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{BASE}\n[stepper]\ncfl_safety = 1.5\n");
        match parse_str(&text) {
            Err(CliError::Config { line: Some(line), .. }) => assert_eq!(line, text.lines().count()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = BASE.replace("radius = 0.3", "radius = 0.3\nradious = 0.2");
        assert!(matches!(parse_str(&text), Err(CliError::Config { line: Some(_), .. })));
    }

    #[test]
    fn laws_parse() {
        let vol = BASE.replace(
            "kind = \"constant\"\nspeed = 1.0",
            "kind = \"volume\"\nbeta = { kind = \"affine\", offset = 0.25, slope = -1.0 }",
        );
        let s = parse_str(&format!("{vol}\n[barrier]\n")).unwrap();
        assert!(matches!(s.law, VelocityLaw::VolumeDependent { .. }));
        let b = s.barrier.unwrap();
        assert_eq!(b.r0, 0.3);
        assert_eq!(b.beta.eval(0.25), 0.0);

        let dis = BASE.replace(
            "kind = \"constant\"\nspeed = 1.0",
            "kind = \"dislocation\"\ndrift = 0.1\nkernel = { name = \"mexican_hat\", sigma = 0.1, a1 = 1.0, a2 = 0.5 }",
        );
        assert!(matches!(parse_str(&dis).unwrap().law, VelocityLaw::Dislocation(_)));

        let fhn = BASE.replace(
            "kind = \"constant\"\nspeed = 1.0",
            "kind = \"fitzhugh_nagumo\"\nalpha = { kind = \"affine\", offset = 0.0, slope = 1.0 }\n\
             g_plus = { kind = \"constant\", value = 1.0 }\ng_minus = { kind = \"constant\", value = 0.0 }\n\
             g_lower = 0.0\ng_upper = 1.0",
        );
        assert!(matches!(parse_str(&fhn).unwrap().law, VelocityLaw::FitzhughNagumo(_)));

        let bad = fhn.replace("g_upper = 1.0", "g_upper = 0.5");
        assert!(parse_str(&bad).is_err());
    }

    #[test]
    fn barrier_needs_beta_for_other_laws() {
        let text = format!("{BASE}\n[barrier]\nr0 = 0.3\n");
        assert!(matches!(parse_str(&text), Err(CliError::Config { .. })));
    }

    #[test]
    fn check_settings_ignore_scenario_tables() {
        let c = parse_check(&format!("seed = 7\n{BASE}\n[check]\ntolerance_scale = 0.0\n"), Path::new("c.toml")).unwrap();
        assert_eq!((c.seed, c.tolerance_scale), (7, 0.0));
        let c = parse_check("", Path::new("c.toml")).unwrap();
        assert_eq!((c.seed, c.tolerance_scale), (DEFAULT_SEED, 1.0));
        assert!(parse_check("[check]\ntolerance_scale = -1.0\n", Path::new("c.toml")).is_err());
    }

    #[test]
    fn redistance_switch_uses_default_stride() {
        let s = parse_str(&format!("{BASE}\n[stepper]\nredistance = true\n")).unwrap();
        assert_eq!(s.stepper.redistance_every, DEFAULT_REDISTANCE_EVERY);
    }
}
