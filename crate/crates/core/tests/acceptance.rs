//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any of them fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use zermelo_core::curvature::{
    curvature_profile, hypersurface_normal, isoparametric_report, laplace_transfer_residual,
    linear_mean_curvature, linear_mean_curvature_variational, literal_sphere_wind,
    navigation_isoparametric_check, nonlinear_mean_curvature, zermelo_mean_residual, zero_crossing,
    Verdict, DEFAULT_SPREAD_TOL,
};
use zermelo_core::fields::{divergence, Polynomial, VolumeOrigin};
use zermelo_core::geodesic::{geodesic_at, navigation_geodesic_at};
use zermelo_core::scenario::{builtin, builtin_scenarios, fuzz_function, Setup};
use zermelo_core::suite::interior_points;
use zermelo_core::volume::{bh_density, bh_density_quadrature, ImmersionSpec};
use zermelo_core::{
    ChartDomain, GeomError, MetricSpec, Point, Result, ScalarFieldSpec, Vector, VectorFieldSpec, VolumeFormSpec,
    WindKind,
};

const SEED: u64 = 20_240_917;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Runs one criterion and prints its line. `limit` bounds the wall time.
fn criterion(id: &str, title: &str, limit: Option<Duration>, check: impl FnOnce() -> Result<Outcome>) -> bool {
    let start = Instant::now();
    let result = check();
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            pass = false;
            detail.push_str(&format!("; over the {:.0} s limit", limit.as_secs_f64()));
        }
    }
    println!(
        "{} {id:>4} {title}: {detail} [{:.2} s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn setup(name: &str) -> Setup {
    builtin(name).expect("builtin").build().expect("builtin builds")
}

fn rng(salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED ^ salt)
}

fn worst(values: impl IntoIterator<Item = Result<f64>>) -> Result<f64> {
    values.into_iter().try_fold(0.0f64, |acc, v| Ok(acc.max(v?)))
}

fn mild_randers() -> Vec<Setup> {
    builtin_scenarios()
        .iter()
        .map(|s| s.build().expect("builtin builds"))
        .filter(Setup::is_randers_mild)
        .collect()
}

fn regular(f: &ScalarFieldSpec, pts: Vec<Point>) -> Vec<Point> {
    pts.into_iter().filter(|p| f.differential(p).norm() > 1e-3).collect()
}

fn funk_table() -> Result<Outcome> {
    let cases = [(2usize, vec![0.3, 0.5, 0.7]), (3, vec![0.5, 2.0 / 3.0, 0.8])];
    let mut err = 0.0f64;
    let mut crossing_err = 0.0f64;
    for (n, radii) in cases {
        let s = setup(&format!("funk_n{n}"));
        let f = ScalarFieldSpec::norm(n);
        let directions = [Vector::from_fn(n, |i, _| if i == 0 { 1.0 } else { 0.0 }), Vector::from_fn(n, |i, _| 1.0 + i as f64)];
        for dir in &directions {
            for (r, pi) in curvature_profile(&s.metric, &s.volume, &f, dir, &radii)? {
                err = err.max((pi - ((n as f64 - 1.0) / r - n as f64)).abs());
            }
        }
        // coarse bracket from the profile, then bisection on the curvature itself
        let u = &directions[1] / directions[1].norm();
        let coarse: Vec<f64> = (0..=10).map(|k| 0.3 + 0.05 * k as f64).collect();
        let profile = curvature_profile(&s.metric, &s.volume, &f, &u, &coarse)?;
        let guess = zero_crossing(&profile).ok_or_else(|| GeomError::NoConvergence("no sign change".into()))?;
        let pi = |r: f64| nonlinear_mean_curvature(&s.metric, &s.volume, &f, &(&u * r));
        let (mut lo, mut hi) = (guess - 0.05, guess + 0.05);
        let sign_lo = pi(lo)?.signum();
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if pi(mid)?.signum() == sign_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        crossing_err = crossing_err.max((0.5 * (lo + hi) - (1.0 - 1.0 / n as f64)).abs());
    }
    Ok(outcome(
        err < 1e-3 && crossing_err < 1e-3,
        format!("table error {err:.2e}, zero crossing error {crossing_err:.2e} (tol 1e-3)"),
    ))
}

fn curvature_transfer() -> Result<Outcome> {
    let mut err = 0.0f64;
    let mut count = 0;
    for s in mild_randers() {
        let dim = s.scenario.dim;
        let mut functions = s.functions.clone();
        functions.push(ScalarFieldSpec::polynomial(Polynomial::random(dim, 3, SEED)));
        for (k, f) in functions.iter().enumerate() {
            let pts = regular(f, interior_points(s.metric.domain(), 50, &mut rng(k as u64)));
            count += pts.len();
            let r: Vec<Result<f64>> =
                pts.par_iter().map(|p| Ok(zermelo_mean_residual(&s.metric, &s.volume, f, p)?.residual)).collect();
            err = err.max(worst(r)?);
        }
    }
    Ok(outcome(err < 1e-4, format!("max residual {err:.2e} over {count} points (tol 1e-4)")))
}

fn laplace_transfer() -> Result<Outcome> {
    let mut err = 0.0f64;
    for name in ["constant_wind", "funk_n2"] {
        let s = setup(name);
        let mut points = rng(3);
        let cases: Vec<(ScalarFieldSpec, Point)> = (0..20u64)
            .filter_map(|k| {
                let f = ScalarFieldSpec::polynomial(Polynomial::random(2, 3, SEED + k));
                let p = regular(&f, interior_points(s.metric.domain(), 4, &mut points)).into_iter().next()?;
                Some((f, p))
            })
            .collect();
        if cases.len() < 20 {
            return Err(GeomError::NoConvergence(format!("only {} regular cases on {name}", cases.len())));
        }
        let r: Vec<Result<f64>> =
            cases.par_iter().map(|(f, p)| Ok(laplace_transfer_residual(&s.metric, &s.volume, f, p)?.residual)).collect();
        err = err.max(worst(r)?);
    }
    Ok(outcome(err < 1e-3, format!("max residual {err:.2e} over 40 polynomials (tol 1e-3)")))
}

fn navigation_geodesics() -> Result<Outcome> {
    let times: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let mut err = 0.0f64;
    for name in ["funk_n2", "constant_wind"] {
        let s = setup(name);
        let p = Point::from_vec(vec![0.2, -0.1]);
        let v = Vector::from_vec(vec![-0.3, 1.0]);
        let v = &v / s.metric.eval(&p, &v)?;
        let direct = geodesic_at(&s.metric, &p, &v, &times, 1e-3)?;
        let composed = navigation_geodesic_at(&s.metric, &p, &v, &times, 1e-3)?;
        if direct.samples.len() != 10 || composed.samples.len() != 10 {
            return Err(GeomError::LeftDomain(direct.end().t.min(composed.end().t)));
        }
        for (a, b) in direct.samples.iter().zip(&composed.samples) {
            for (x, y) in a.point.iter().zip(&b.point) {
                err = err.max((x - y).abs());
            }
        }
    }
    Ok(outcome(err < 1e-4, format!("max endpoint gap {err:.2e} at 10 checkpoints (tol 1e-4)")))
}

fn homothetic_divergence() -> Result<Outcome> {
    let mut bh_err = 0.0f64;
    let mut ht_lines = Vec::new();
    let mut ht_pass = true;
    for n in [2usize, 3] {
        let s = setup(&format!("funk_n{n}"));
        let wind = s.wind.clone().expect("wind");
        let m = s.metric.clone();
        let bh = VolumeFormSpec::new(m.domain().clone(), VolumeOrigin::BusemannHausdorff, move |p| {
            bh_density_quadrature(&m, p)
        });
        let pts = interior_points(s.metric.domain(), 5, &mut rng(5));
        for p in &pts {
            bh_err = bh_err.max((divergence(&bh, &wind, p)? + n as f64).abs());
        }
        ht_lines.push(format!("n={n} Euclidean base {}", ht_gap(&s.base, &wind, &pts[0], n, &mut ht_pass)?));
    }
    // a Minkowski norm of Randers type, for which -x is homothetic as well
    let minkowski = setup("constant_wind").metric;
    let wind = VectorFieldSpec::radial(2, -1.0);
    let p = Point::from_vec(vec![0.3, -0.4]);
    ht_lines.push(format!("n=2 Randers norm {}", ht_gap(&minkowski, &wind, &p, 2, &mut ht_pass)?));
    Ok(outcome(bh_err < 1e-4 && ht_pass, format!("BH gap {bh_err:.2e} (tol 1e-4); {}", ht_lines.join("; "))))
}

/// Divergence against the Holmes-Thompson density of `metric`, averaged
/// over independent seeds.
fn ht_gap(metric: &MetricSpec, wind: &VectorFieldSpec, p: &Point, n: usize, pass: &mut bool) -> Result<String> {
    let estimates: Vec<f64> = (0..4u64)
        .into_par_iter()
        .map(|k| divergence(&VolumeFormSpec::holmes_thompson(metric, 20_000, SEED + k), wind, p))
        .collect::<Result<_>>()?;
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (estimates.len() - 1) as f64;
    let bound = 3.0 * (var / estimates.len() as f64).sqrt() + 1e-3;
    let gap = (mean + n as f64).abs();
    *pass &= gap < bound;
    Ok(format!("HT gap {gap:.2e} (bound {bound:.2e})"))
}

fn bh_equals_base() -> Result<Outcome> {
    let mut err = 0.0f64;
    let mut names = Vec::new();
    for s in mild_randers() {
        let pts = interior_points(s.metric.domain(), 50, &mut rng(6));
        let r: Vec<Result<f64>> = pts
            .par_iter()
            .map(|p| Ok((bh_density_quadrature(&s.metric, p)? - bh_density(&s.base, p)?).abs()))
            .collect();
        err = err.max(worst(r)?);
        if s.scenario.name.starts_with("funk") {
            let p = &pts[0];
            err = err.max((bh_density_quadrature(&s.metric, p)? - 1.0).abs());
        }
        names.push(s.scenario.name.clone());
    }
    Ok(outcome(err < 1e-6, format!("max gap {err:.2e} on {} (tol 1e-6)", names.join(", "))))
}

fn params(imm: &ImmersionSpec, metric: &MetricSpec, count: usize) -> Vec<Vector> {
    let (lo, hi) = (imm.param_lo()[0], imm.param_hi()[0]);
    (0..count)
        .map(|j| Vector::from_element(1, lo + (hi - lo) * (j as f64 + 0.5) / count as f64))
        .filter(|u| imm.eval(u).is_ok_and(|x| metric.domain().contains(&x)))
        .collect()
}

fn linear_curvature() -> Result<Outcome> {
    let rot = setup("rotation_killing");
    let (base, _) = rot.metric.navigation_data().expect("zermelo");
    let circle = &rot.immersions[0];
    let mut rot_err = 0.0f64;
    let mut b_max = 0.0f64;
    for u in params(circle, &rot.metric, 8) {
        let normal = |u: &Vector| hypersurface_normal(base, circle, u);
        let h = linear_mean_curvature_variational(&rot.metric, circle, &normal, &u)?;
        let parts = linear_mean_curvature(&rot.metric, circle, &u, &normal(&u)?)?;
        rot_err = rot_err.max((h - 1.0).abs());
        b_max = b_max.max(parts.b.abs());
    }
    let line = setup("constant_wind");
    let (base, _) = line.metric.navigation_data().expect("zermelo");
    let imm = &line.immersions[0];
    let mut line_err = 0.0f64;
    for u in params(imm, &line.metric, 8) {
        let normal = |u: &Vector| hypersurface_normal(base, imm, u);
        let h = linear_mean_curvature_variational(&line.metric, imm, &normal, &u)?;
        let parts = linear_mean_curvature(&line.metric, imm, &u, &normal(&u)?)?;
        line_err = line_err.max((h - parts.pi_h - parts.b).abs());
    }
    Ok(outcome(
        rot_err < 1e-4 && b_max < 1e-4 && line_err < 1e-4,
        format!("rotation |H - 1/r| {rot_err:.2e}, |B| {b_max:.2e}; tilted line residual {line_err:.2e} (tol 1e-4)"),
    ))
}

fn bh_minimal_circle() -> Result<Outcome> {
    let s = setup("bh_minimal_circle");
    let (base, _) = s.metric.navigation_data().expect("zermelo");
    let imm = &s.immersions[0];
    let normal = |u: &Vector| hypersurface_normal(base, imm, u);
    let h = worst(params(imm, &s.metric, 12).iter().map(|u| {
        Ok(linear_mean_curvature_variational(&s.metric, imm, &normal, u)?.abs())
    }))?;
    Ok(outcome(h < 1e-3, format!("max |H| on the unit circle {h:.2e} (tol 1e-3)")))
}

/// The profile exactly as printed, on a thin annulus where it is a mild wind.
fn literal_profile_note() -> Result<f64> {
    let domain = ChartDomain::annulus(2, 0.85, 1.09);
    let base = MetricSpec::euclidean(ChartDomain::ball(2, 10.0));
    let z = MetricSpec::zermelo_on(domain, base.clone(), literal_sphere_wind(2, 1.0, 0.1), 64)?;
    let imm = ImmersionSpec::circle(Vector::zeros(2), 1.0);
    let normal = |u: &Vector| hypersurface_normal(&base, &imm, u);
    worst(params(&imm, &z, 6).iter().map(|u| Ok(linear_mean_curvature_variational(&z, &imm, &normal, u)?.abs())))
}

fn isoparametric_verdicts() -> Result<Outcome> {
    let mut notes = Vec::new();
    let mut pass = true;
    for name in ["funk_n2", "funk_n3"] {
        let s = setup(name);
        let n = s.scenario.dim;
        let norm = isoparametric_report(&s.metric, &s.volume, &ScalarFieldSpec::norm(n), &s.scenario.levels, 12, SEED, DEFAULT_SPREAD_TOL)?;
        let (a, b, c) = norm.max_spreads();
        pass &= norm.verdict == Verdict::Isoparametric && a.max(b).max(c) < 1e-3;
        notes.push(format!("{name} norm {:?} spreads {a:.1e}/{b:.1e}/{c:.1e}", norm.verdict));
        let fuzz = isoparametric_report(&s.metric, &s.volume, &fuzz_function(), &s.scenario.levels, 12, SEED, DEFAULT_SPREAD_TOL)?;
        let (a, b, c) = fuzz.max_spreads();
        pass &= fuzz.verdict == Verdict::Neither && a.min(b).min(c) > 1e-1;
        notes.push(format!("fuzz {:?} spreads {a:.1e}/{b:.1e}/{c:.1e}", fuzz.verdict));
    }
    let mut checked = 0;
    let mut disagreements = Vec::new();
    for s in builtin_scenarios().iter().map(|s| s.build().expect("builtin builds")) {
        if s.scenario.levels.len() < 2 || s.class.is_some_and(|c| c.kind != WindKind::Mild) {
            continue;
        }
        for f in &s.functions {
            let r = isoparametric_report(&s.metric, &s.volume, f, &s.scenario.levels, 12, SEED, DEFAULT_SPREAD_TOL)?;
            checked += 1;
            if !r.curvature_agreement {
                disagreements.push(format!("{}/{}", s.scenario.name, f.name()));
            }
        }
    }
    pass &= disagreements.is_empty();
    notes.push(format!("verdict agreement on {checked} cases, disagreeing: [{}]", disagreements.join(", ")));
    Ok(outcome(pass, notes.join("; ")))
}

fn tube_grid() -> (Vec<f64>, usize) {
    ((1..=10).map(|k| 0.1 * k as f64).collect(), 10)
}

fn navigated_laplacian() -> Result<(Outcome, f64)> {
    let (times, samples) = tube_grid();
    let s = setup("funk_n2");
    let (base, _) = s.metric.navigation_data().expect("zermelo");
    let volume = VolumeFormSpec::busemann_hausdorff(base);
    let funk = navigation_isoparametric_check(&s.metric, &volume, &ScalarFieldSpec::norm(2), 0.3, &times, samples, SEED, 1e-3)?;

    // without wind the tube grows to radius 1.3, and every sigma fits the zero field
    let still =
        MetricSpec::zermelo_on(ChartDomain::ball(2, 2.0), base.clone(), VectorFieldSpec::zero(2).with_sigma(0.0), 64)?;
    let calm = navigation_isoparametric_check(&still, &volume, &ScalarFieldSpec::norm(2), 0.3, &times, samples, SEED, 1e-3)?;
    Ok((
        outcome(
            funk.stated_residual < 1e-3 && calm.stated_residual < 1e-6,
            format!(
                "Funk tube residual {:.2e} (tol 1e-3), zero wind residual {:.2e} (tol 1e-6), {} grid points",
                funk.stated_residual,
                calm.stated_residual,
                funk.grid.len()
            ),
        ),
        funk.rescaled_residual,
    ))
}

fn main() -> ExitCode {
    println!("acceptance criteria, seed {SEED}");
    let mut all = true;
    all &= criterion("1", "Funk mean curvature of spheres", Some(Duration::from_secs(10)), funk_table);
    all &= criterion("2", "mean curvature transfer", Some(Duration::from_secs(10)), curvature_transfer);
    all &= criterion("3", "Laplacian transfer on random polynomials", Some(Duration::from_secs(30)), laplace_transfer);
    all &= criterion("4", "navigation geodesics", Some(Duration::from_secs(5)), navigation_geodesics);
    all &= criterion("5", "divergence of a homothetic wind", None, homothetic_divergence);
    all &= criterion("6", "Randers BH density equals the base density", None, bh_equals_base);
    all &= criterion("7", "linear mean curvature", None, linear_curvature);
    all &= criterion("8", "BH-minimal circle", None, bh_minimal_circle);
    criterion("8n", "note: printed wind profile is not minimal", None, || {
        literal_profile_note().map(|h| outcome(h > 1e-1, format!("max |H| {h:.2e}, expected well above 1e-1")))
    });
    all &= criterion("9", "isoparametric verdicts", None, isoparametric_verdicts);
    let mut rescaled = None;
    all &= criterion("10", "Laplacian of the navigated distance function", None, || {
        navigated_laplacian().map(|(o, r)| {
            rescaled = Some(r);
            o
        })
    });
    if let Some(r) = rescaled {
        criterion("10n", "note: with the time-rescaled base Laplacian", None, || {
            Ok(outcome(r < 1e-3, format!("Funk tube residual {r:.2e} (tol 1e-3)")))
        });
    }
    if all {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("some criteria failed");
        ExitCode::FAILURE
    }
}
