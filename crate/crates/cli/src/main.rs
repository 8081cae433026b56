use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use zermelo_core::curvature::{
    curvature_profile, hypersurface_normal, linear_mean_curvature, linear_mean_curvature_variational,
    mean_curvature_parts, zero_crossing,
};
use zermelo_core::emit::{self, ReportFormat};
use zermelo_core::fields::{gradient_field, laplacian, sample_fiber, GradientRoute};
use zermelo_core::geodesic::{geodesic, geodesic_fan, navigation_geodesic};
use zermelo_core::scenario::{builtin, builtin_scenarios, load_scenario, Scenario, Setup};
use zermelo_core::suite::{run_suite, SuiteOptions};
use zermelo_core::volume::{bh_density, bh_density_quadrature, ht_density};
use zermelo_core::{Point, Vector};

const SEED_VAR: &str = "ZERMELO_SEED";

#[derive(Parser)]
#[command(name = "zermelo", version, about = "Zermelo navigation metrics: evaluation and verification")]
struct Cli {
    /// Print results as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List, print or validate scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Evaluate the metric, a gradient or a Laplacian at a point.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Mean curvatures.
    #[command(subcommand)]
    Curvature(CurvatureCmd),
    /// Integrate a geodesic and print or save it as a polyline.
    #[command(subcommand)]
    Geodesic(GeodesicCmd),
    /// Volume densities.
    #[command(subcommand)]
    Volume(VolumeCmd),
    /// Run the verification suite.
    Verify(VerifyArgs),
    /// Write reports and plot data to files.
    #[command(subcommand)]
    Emit(EmitCmd),
}

#[derive(Args, Clone)]
struct Pick {
    /// Builtin scenario name.
    #[arg(long, short, conflicts_with = "config", required_unless_present = "config")]
    scenario: Option<String>,
    /// Scenario configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ScenarioCmd {
    List,
    Show {
        #[command(flatten)]
        pick: Pick,
    },
    Validate {
        file: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    Metric {
        #[command(flatten)]
        pick: Pick,
        #[arg(long, value_parser = parse_vec)]
        point: Coords,
        #[arg(long, value_parser = parse_vec)]
        vector: Coords,
    },
    Gradient(FieldArgs),
    Laplacian(FieldArgs),
}

#[derive(Args)]
struct FieldArgs {
    #[command(flatten)]
    pick: Pick,
    /// Index into the scenario's function list.
    #[arg(long, default_value_t = 0)]
    function: usize,
    #[arg(long, value_parser = parse_vec)]
    point: Coords,
}

#[derive(Subcommand)]
enum CurvatureCmd {
    /// Mean curvature of the level set of a scenario function.
    Nonlinear {
        #[command(flatten)]
        field: FieldArgs,
        /// Invert the Legendre map by Newton instead of the native gradient.
        #[arg(long)]
        legendre: bool,
    },
    /// Linear mean curvature of a scenario immersion.
    Linear {
        #[command(flatten)]
        pick: Pick,
        #[arg(long, default_value_t = 0)]
        immersion: usize,
        #[arg(long, value_parser = parse_vec)]
        param: Coords,
    },
    /// Mean curvature along a ray from the origin.
    Profile(ProfileArgs),
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    pick: Pick,
    #[arg(long, default_value_t = 0)]
    function: usize,
    #[arg(long, value_parser = parse_vec)]
    direction: Coords,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long, default_value_t = 41)]
    count: usize,
}

#[derive(Args)]
struct GeodesicArgs {
    #[command(flatten)]
    pick: Pick,
    #[arg(long, value_parser = parse_vec)]
    point: Coords,
    /// Initial direction; rescaled to unit speed.
    #[arg(long, value_parser = parse_vec)]
    vector: Coords,
    #[arg(long, default_value_t = 1.0)]
    time: f64,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Write the polyline here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GeodesicCmd {
    /// Integrate the geodesic equation of the metric itself.
    Direct(GeodesicArgs),
    /// Navigate a base geodesic by the wind.
    Navigation(GeodesicArgs),
}

#[derive(Subcommand)]
enum VolumeCmd {
    Bh {
        #[command(flatten)]
        pick: Pick,
        #[arg(long, value_parser = parse_vec)]
        point: Coords,
        /// Measure the unit ball by quadrature even where a closed form exists.
        #[arg(long)]
        quadrature: bool,
    },
    Ht {
        #[command(flatten)]
        pick: Pick,
        #[arg(long, value_parser = parse_vec)]
        point: Coords,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, env = SEED_VAR, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct VerifyArgs {
    /// Scenarios to check; all builtins when omitted.
    #[arg(long = "scenario", short)]
    scenarios: Vec<String>,
    /// Extra scenario configuration files.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Only checks whose id contains this text.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long, env = SEED_VAR, default_value_t = 0)]
    seed: u64,
    /// Tolerance applied to every check.
    #[arg(long)]
    tol: Option<f64>,
    /// Also write the full report (TOML, or JSON with --json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EmitCmd {
    /// Suite report as a file.
    Report {
        #[arg(long = "scenario", short)]
        scenarios: Vec<String>,
        #[arg(long, env = SEED_VAR, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unit-speed geodesics from a point in evenly spaced directions.
    Fan {
        #[command(flatten)]
        pick: Pick,
        #[arg(long, value_parser = parse_vec)]
        point: Coords,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 5.0)]
        time: f64,
        #[arg(long, default_value_t = 1e-2)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fibers of a scenario function at its levels.
    Fibers {
        #[command(flatten)]
        pick: Pick,
        #[arg(long, default_value_t = 0)]
        function: usize,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, env = SEED_VAR, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean-curvature profile as a table.
    Profile {
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Comma-separated coordinates.
#[derive(Clone, Debug)]
struct Coords(Vec<f64>);

fn parse_vec(s: &str) -> Result<Coords, String> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"))).collect::<Result<_, _>>().map(Coords)
}

/// Failure with its exit status.
struct Failure(u8, String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(2, e.to_string())
    }
}

type Outcome = Result<u8, Failure>;

fn load(pick: &Pick) -> Result<Setup, Failure> {
    if let Some(path) = &pick.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure(2, format!("{}: {e}", path.display())))?;
        return Ok(load_scenario(&text)?);
    }
    let name = pick.scenario.as_deref().expect("clap requires one of the two");
    let scenario = builtin(name).ok_or_else(|| Failure(2, format!("unknown scenario `{name}`")))?;
    Ok(scenario.build()?)
}

fn point(setup: &Setup, xs: &Coords) -> Result<Point, Failure> {
    let xs = &xs.0;
    if xs.len() != setup.scenario.dim {
        return Err(Failure(2, format!("expected {} coordinates, got {}", setup.scenario.dim, xs.len())));
    }
    Ok(Point::from_column_slice(xs))
}

fn function(setup: &Setup, k: usize) -> Result<&zermelo_core::ScalarFieldSpec, Failure> {
    setup.functions.get(k).ok_or_else(|| Failure(2, format!("scenario has {} function(s)", setup.functions.len())))
}

fn print<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
    } else {
        println!("{}", text());
    }
}

fn g(x: f64) -> String {
    emit::format_g17(x)
}

fn joined(v: &Vector) -> String {
    v.iter().map(|x| g(*x)).collect::<Vec<_>>().join(",")
}

fn scenario_cmd(json: bool, cmd: ScenarioCmd) -> Outcome {
    match cmd {
        ScenarioCmd::List => {
            let all = builtin_scenarios();
            let names: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
            print(json, &names, || names.join("\n"));
        }
        ScenarioCmd::Show { pick } => {
            let setup = load(&pick)?;
            if json {
                print(true, &setup.scenario, String::new);
            } else {
                print!("{}", setup.scenario.to_toml());
            }
        }
        ScenarioCmd::Validate { file } => {
            let setup = load(&Pick { scenario: None, config: Some(file) })?;
            #[derive(Serialize)]
            struct Valid<'a> {
                name: &'a str,
                wind: Option<zermelo_core::WindClass>,
            }
            let out = Valid { name: &setup.scenario.name, wind: setup.class };
            print(json, &out, || match setup.class {
                Some(c) => format!("{}: valid, {:?} wind", setup.scenario.name, c.kind).to_lowercase(),
                None => format!("{}: valid, no wind", setup.scenario.name),
            });
        }
    }
    Ok(0)
}

fn eval_cmd(json: bool, cmd: EvalCmd) -> Outcome {
    match cmd {
        EvalCmd::Metric { pick, point: p, vector } => {
            let setup = load(&pick)?;
            let (p, v) = (point(&setup, &p)?, point(&setup, &vector)?);
            let value = setup.metric.eval(&p, &v)?;
            print(json, &value, || g(value));
        }
        EvalCmd::Gradient(a) => {
            let setup = load(&a.pick)?;
            let p = point(&setup, &a.point)?;
            let grad = gradient_field(&setup.metric, function(&setup, a.function)?, &p)?;
            print(json, &grad.as_slice(), || joined(&grad));
        }
        EvalCmd::Laplacian(a) => {
            let setup = load(&a.pick)?;
            let p = point(&setup, &a.point)?;
            let value = laplacian(&setup.metric, &setup.volume, function(&setup, a.function)?, &p)?;
            print(json, &value, || g(value));
        }
    }
    Ok(0)
}

fn profile(a: &ProfileArgs) -> Result<Vec<(f64, f64)>, Failure> {
    let setup = load(&a.pick)?;
    let dir = point(&setup, &a.direction)?;
    if a.count < 2 || !(a.from < a.to) {
        return Err(Failure(2, "profile needs from < to and at least two samples".into()));
    }
    let radii: Vec<f64> =
        (0..a.count).map(|k| a.from + (a.to - a.from) * k as f64 / (a.count - 1) as f64).collect();
    Ok(curvature_profile(&setup.metric, &setup.volume, function(&setup, a.function)?, &dir, &radii)?)
}

fn curvature_cmd(json: bool, cmd: CurvatureCmd) -> Outcome {
    match cmd {
        CurvatureCmd::Nonlinear { field, legendre } => {
            let setup = load(&field.pick)?;
            let p = point(&setup, &field.point)?;
            let route = if legendre { GradientRoute::Legendre } else { GradientRoute::Native };
            let parts = mean_curvature_parts(&setup.metric, &setup.volume, function(&setup, field.function)?, &p, route)?;
            print(json, &parts, || g(parts.value));
        }
        CurvatureCmd::Linear { pick, immersion, param } => {
            let setup = load(&pick)?;
            let imm = setup
                .immersions
                .get(immersion)
                .ok_or_else(|| Failure(2, format!("scenario has {} immersion(s)", setup.immersions.len())))?;
            let u = Vector::from_column_slice(&param.0);
            let (base, _) = setup
                .metric
                .navigation_data()
                .ok_or_else(|| Failure(2, "linear mean curvature needs a wind".into()))?;
            let n = hypersurface_normal(base, imm, &u)?;
            let h = linear_mean_curvature(&setup.metric, imm, &u, &n)?;
            let var = linear_mean_curvature_variational(&setup.metric, imm, &|w| hypersurface_normal(base, imm, w), &u)?;
            #[derive(Serialize)]
            struct Out {
                normal: Vec<f64>,
                total: f64,
                pi_h: f64,
                b: f64,
                variational: f64,
            }
            let out = Out { normal: n.as_slice().to_vec(), total: h.total, pi_h: h.pi_h, b: h.b, variational: var };
            print(json, &out, || {
                format!("H {} (Pi^h {} + B {}), first variation {}", g(h.total), g(h.pi_h), g(h.b), g(var))
            });
        }
        CurvatureCmd::Profile(a) => {
            let prof = profile(&a)?;
            #[derive(Serialize)]
            struct Out {
                profile: Vec<(f64, f64)>,
                zero_crossing: Option<f64>,
            }
            let out = Out { zero_crossing: zero_crossing(&prof), profile: prof };
            print(json, &out, || {
                let mut t = emit::curvature_profile_table(&out.profile);
                if let Some(r) = out.zero_crossing {
                    t.push_str(&format!("# zero crossing at r = {}\n", g(r)));
                }
                t.trim_end().to_string()
            });
        }
    }
    Ok(0)
}

fn geodesic_cmd(json: bool, cmd: GeodesicCmd) -> Outcome {
    let (a, navigated) = match cmd {
        GeodesicCmd::Direct(a) => (a, false),
        GeodesicCmd::Navigation(a) => (a, true),
    };
    let setup = load(&a.pick)?;
    let (p, v) = (point(&setup, &a.point)?, point(&setup, &a.vector)?);
    let v = &v / setup.metric.eval(&p, &v)?;
    let path = if navigated {
        navigation_geodesic(&setup.metric, &p, &v, a.time, a.step)?
    } else {
        geodesic(&setup.metric, &p, &v, a.time, a.step)?
    };
    match &a.out {
        Some(out) => emit::write_file(out, &emit::polylines(std::slice::from_ref(&path)))?,
        None => print(json, &path, || emit::polylines(std::slice::from_ref(&path)).trim_end().to_string()),
    }
    Ok(0)
}

fn volume_cmd(json: bool, cmd: VolumeCmd) -> Outcome {
    match cmd {
        VolumeCmd::Bh { pick, point: p, quadrature } => {
            let setup = load(&pick)?;
            let p = point(&setup, &p)?;
            let value = if quadrature { bh_density_quadrature(&setup.metric, &p)? } else { bh_density(&setup.metric, &p)? };
            print(json, &value, || g(value));
        }
        VolumeCmd::Ht { pick, point: p, samples, seed } => {
            let setup = load(&pick)?;
            let p = point(&setup, &p)?;
            let est = ht_density(&setup.metric, &p, samples, seed)?;
            print(json, &est, || format!("{} +- {}", g(est.value), g(est.std_error)));
        }
    }
    Ok(0)
}

fn scenarios_for(names: &[String], configs: &[PathBuf]) -> Result<Vec<Scenario>, Failure> {
    let mut out: Vec<Scenario> = if names.is_empty() && configs.is_empty() {
        builtin_scenarios()
    } else {
        names
            .iter()
            .map(|n| builtin(n).ok_or_else(|| Failure(2, format!("unknown scenario `{n}`"))))
            .collect::<Result<_, _>>()?
    };
    for path in configs {
        out.push(load(&Pick { scenario: None, config: Some(path.clone()) })?.scenario);
    }
    Ok(out)
}

fn format_of(json: bool) -> ReportFormat {
    if json {
        ReportFormat::Json
    } else {
        ReportFormat::Toml
    }
}

fn verify_cmd(json: bool, a: VerifyArgs) -> Outcome {
    if a.tol.is_some_and(|t| !(t > 0.0)) {
        return Err(Failure(2, "--tol must be positive".into()));
    }
    let scenarios = scenarios_for(&a.scenarios, &a.configs)?;
    let report = run_suite(&scenarios, a.seed, &SuiteOptions { filter: a.filter, tolerance: a.tol })?;
    if json {
        print!("{}", emit::render(&report, ReportFormat::Json));
    } else {
        print!("{}", emit::text_summary(&report));
    }
    if let Some(out) = &a.out {
        emit::write_file(out, &emit::render(&report, format_of(json)))?;
    }
    Ok(if report.all_passed() { 0 } else { 1 })
}

fn emit_cmd(json: bool, cmd: EmitCmd) -> Outcome {
    let wrote = |path: &Path| {
        if !json {
            println!("wrote {}", path.display());
        }
    };
    match cmd {
        EmitCmd::Report { scenarios, seed, out } => {
            let report = run_suite(&scenarios_for(&scenarios, &[])?, seed, &SuiteOptions::default())?;
            emit::write_file(&out, &emit::render(&report, format_of(json)))?;
            wrote(&out);
            return Ok(if report.all_passed() { 0 } else { 1 });
        }
        EmitCmd::Fan { pick, point: p, count, time, step, out } => {
            let setup = load(&pick)?;
            let p = point(&setup, &p)?;
            let fan = geodesic_fan(&setup.metric, &p, count, time, step)?;
            emit::write_file(&out, &emit::polylines(&fan))?;
            wrote(&out);
        }
        EmitCmd::Fibers { pick, function: k, samples, seed, out } => {
            let setup = load(&pick)?;
            let f = function(&setup, k)?;
            let sets = setup
                .scenario
                .levels
                .iter()
                .map(|&l| {
                    Ok(sample_fiber(f, setup.metric.domain(), l, samples, seed)?
                        .into_iter()
                        .map(|p| p.as_slice().to_vec())
                        .collect())
                })
                .collect::<Result<Vec<Vec<Vec<f64>>>, Failure>>()?;
            emit::write_file(&out, &emit::point_sets(&sets))?;
            wrote(&out);
        }
        EmitCmd::Profile { profile: a, out } => {
            emit::write_file(&out, &emit::curvature_profile_table(&profile(&a)?))?;
            wrote(&out);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    let outcome = match cli.command {
        Command::Scenario(c) => scenario_cmd(json, c),
        Command::Eval(c) => eval_cmd(json, c),
        Command::Curvature(c) => curvature_cmd(json, c),
        Command::Geodesic(c) => geodesic_cmd(json, c),
        Command::Volume(c) => volume_cmd(json, c),
        Command::Verify(a) => verify_cmd(json, a),
        Command::Emit(c) => emit_cmd(json, c),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
