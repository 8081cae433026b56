//! Verification suite: every identity the library implements, checked on a
//! scenario and collected into a report.

use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    hessian_law_residual, hypersurface_normal, isoparametric_report, laplace_transfer_residual,
    linear_mean_curvature, linear_mean_curvature_variational, nonlinear_mean_curvature, zermelo_mean_residual,
    Verdict, DEFAULT_SPREAD_TOL,
};
use crate::domain::{Bounds, ChartDomain};
use crate::error::{GeomError, Result};
use crate::fields::{
    divergence, gradient_field, gradient_field_via, sample_fiber, spread_on, GradientRoute, Polynomial, ScalarFieldSpec,
    VectorFieldSpec, VolumeFormSpec,
};
use crate::geodesic::{geodesic_at, navigation_geodesic_at};
use crate::metric::{cone_half_angle, MetricSpec};
use crate::scenario::{Scenario, ScenarioError, Setup, VolumeChoice, HT_SAMPLES};
use crate::volume::{bh_density, bh_density_quadrature};
use crate::{Point, Vector, WindKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub scenario: String,
    pub check: String,
    /// The identity being checked.
    pub anchor: String,
    pub measured: Option<f64>,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckRecord {
    /// Recomputes `pass` from the stored numbers.
    pub fn recompute_pass(&self) -> bool {
        self.measured.is_some_and(|m| (m - self.expected).abs() <= self.tolerance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub summary: Summary,
    pub records: Vec<CheckRecord>,
    /// Wall time; left out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub runtime: Duration,
}

impl SuiteReport {
    pub fn from_records(seed: u64, mut records: Vec<CheckRecord>, runtime: Duration) -> Self {
        records.sort_by(|a, b| (&a.scenario, &a.check).cmp(&(&b.scenario, &b.check)));
        let passed = records.iter().filter(|r| r.pass).count();
        let summary = Summary { total: records.len(), passed, failed: records.len() - passed };
        Self { seed, summary, records, runtime }
    }

    pub fn all_passed(&self) -> bool {
        self.summary.failed == 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    /// Substring every check id must contain.
    pub filter: Option<String>,
    /// Replaces every check tolerance.
    pub tolerance: Option<f64>,
}

struct Ctx<'a> {
    setup: &'a Setup,
    seed: u64,
    options: &'a SuiteOptions,
    records: Vec<CheckRecord>,
}

impl Ctx<'_> {
    fn wants(&self, check: &str) -> bool {
        self.options.filter.as_deref().is_none_or(|f| check.contains(f))
    }

    fn rng(&self, check: &str) -> ChaCha8Rng {
        let salt = check.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
        ChaCha8Rng::seed_from_u64(self.seed ^ salt)
    }

    fn push(&mut self, check: String, anchor: &str, default_tol: f64, outcome: Result<(f64, f64)>) {
        let tolerance = self.options.tolerance.unwrap_or_else(|| self.setup.scenario.tolerance(&check, default_tol));
        let (measured, expected, error) = match outcome {
            Ok((m, e)) => (Some(m), e, None),
            Err(e) => (None, 0.0, Some(e.to_string())),
        };
        let mut record = CheckRecord {
            scenario: self.setup.scenario.name.clone(),
            check,
            anchor: anchor.into(),
            measured,
            expected,
            tolerance,
            pass: false,
            error,
        };
        record.pass = record.recompute_pass();
        self.records.push(record);
    }

    fn run(&mut self, check: impl Into<String>, anchor: &str, tol: f64, f: impl FnOnce(&mut Self) -> Result<(f64, f64)>) {
        let check = check.into();
        if self.wants(&check) {
            let outcome = f(self);
            self.push(check, anchor, tol, outcome);
        }
    }
}

/// Seeded points well inside `domain`, away from its boundary.
pub fn interior_points(domain: &ChartDomain, count: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let (lo, hi) = domain.bounding_box();
    let n = domain.dimension();
    let center = match domain.bounds() {
        Bounds::Ball { center, .. } | Bounds::Annulus { center, .. } => Point::from_vec(center.clone()),
        Bounds::Box { lo, hi } => Point::from_fn(n, |i, _| 0.5 * (lo[i] + hi[i])),
    };
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 1000 * count {
        tries += 1;
        let p = Point::from_fn(n, |i, _| rng.random_range(lo[i]..hi[i]));
        let d = &p - &center;
        if domain.contains(&(&center + &d * 1.12)) && domain.contains(&(&center + &d * 0.88)) {
            out.push(p);
        }
    }
    out
}

fn max_over(values: impl IntoIterator<Item = Result<f64>>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for v in values {
        worst = worst.max(v?);
    }
    Ok(worst)
}

fn regular_points(f: &ScalarFieldSpec, pts: Vec<Point>) -> Vec<Point> {
    pts.into_iter().filter(|p| f.differential(p).norm() > 1e-3).collect()
}

fn euclidean_base(setup: &Setup) -> bool {
    setup.scenario.base.trim() == "euclidean"
}

/// `div W` in closed form for the builtin winds over a Euclidean base with
/// Lebesgue or Busemann-Hausdorff volume, where they coincide.
fn closed_form_divergence(setup: &Setup) -> Option<f64> {
    if !euclidean_base(setup) || setup.scenario.volume == VolumeChoice::HolmesThompson {
        return None;
    }
    let n = setup.scenario.dim as f64;
    let mut words = setup.scenario.wind.split_whitespace();
    match words.next()? {
        "none" | "constant" | "rotation" => Some(0.0),
        "radial" => Some(n * words.next()?.parse::<f64>().ok()?),
        _ => None,
    }
}

fn metric_checks(ctx: &mut Ctx) {
    let setup = ctx.setup;
    if setup.is_randers_mild() {
        let (base, wind) = setup.metric.navigation_data().expect("zermelo");
        for f in &setup.functions {
            let name = f.name().to_string();
            ctx.run(format!("metric.unit_gradient_transfer[{name}]"), "unit gradients differ by the wind", 1e-8, |c| {
                let pts = regular_points(f, interior_points(setup.metric.domain(), 20, &mut c.rng("metric.grad")));
                Ok((
                    max_over(pts.iter().map(|p| {
                        let gz = gradient_field_via(&setup.metric, f, p, GradientRoute::Legendre)?;
                        let gf = gradient_field(base, f, p)?;
                        let lhs = &gz / setup.metric.eval(p, &gz)? - &gf / base.eval(p, &gf)? - wind.eval(p);
                        Ok(lhs.amax())
                    }))?,
                    0.0,
                ))
            });
            ctx.run(format!("metric.gradient_norm_transfer[{name}]"), "Z(grad f) = F(grad f) + df(W)", 1e-8, |c| {
                let pts = regular_points(f, interior_points(setup.metric.domain(), 20, &mut c.rng("metric.norm")));
                Ok((
                    max_over(pts.iter().map(|p| {
                        let gz = gradient_field_via(&setup.metric, f, p, GradientRoute::Legendre)?;
                        let gf = gradient_field(base, f, p)?;
                        let r = setup.metric.eval(p, &gz)? - base.eval(p, &gf)? - f.differential(p).dot(&wind.eval(p));
                        Ok(r.abs())
                    }))?,
                    0.0,
                ))
            });
        }
    }
    if let (Some(class), true) = (setup.class, euclidean_base(setup)) {
        let constant = setup.scenario.wind.trim_start().starts_with("constant");
        if class.kind == WindKind::Strong && constant {
            ctx.run("metric.strong_cone", "admissible cone of a strong constant wind", 1e-6, |_| {
                let p = Point::zeros(setup.scenario.dim);
                let w = setup.wind.as_ref().expect("wind").eval(&p).norm();
                Ok((cone_half_angle(&setup.metric, &p)?, (1.0 / w).asin()))
            });
        }
    }
}

fn volume_checks(ctx: &mut Ctx) {
    let setup = ctx.setup;
    if setup.is_randers_mild() && setup.base.is_riemannian() {
        ctx.run("volume.bh_equals_base", "Randers BH density equals the base Riemannian density", 1e-6, |c| {
            let pts = interior_points(setup.metric.domain(), 50, &mut c.rng("volume.bh"));
            Ok((
                max_over(pts.iter().map(|p| Ok((bh_density_quadrature(&setup.metric, p)? - bh_density(&setup.base, p)?).abs())))?,
                0.0,
            ))
        });
    }
    // the wind of a Zermelo metric is homothetic for the base, so both
    // canonical volumes are taken from the base; BH of the base is that of Z
    let bh = setup.scenario.volume == VolumeChoice::BusemannHausdorff;
    if let (Some(sigma), Some(wind), true) = (setup.sigma(), &setup.wind, bh && setup.is_randers_mild()) {
        let expected = -(setup.scenario.dim as f64) * sigma;
        ctx.run("volume.homothetic_divergence", "div W = -n sigma for a homothetic wind", 1e-4, |c| {
            let pts = interior_points(setup.metric.domain(), 10, &mut c.rng("volume.div"));
            worst_divergence(&setup.volume, wind, &pts, expected)
        });
        ctx.run("volume.homothetic_divergence_ht", "div W = -n sigma against the base Holmes-Thompson volume", 1e-3, |c| {
            let pts = interior_points(setup.metric.domain(), 4, &mut c.rng("volume.div_ht"));
            let volume = VolumeFormSpec::holmes_thompson(&setup.base, HT_SAMPLES, c.seed);
            worst_divergence(&volume, wind, &pts, expected)
        });
    }
}

fn worst_divergence(volume: &VolumeFormSpec, wind: &VectorFieldSpec, pts: &[Point], expected: f64) -> Result<(f64, f64)> {
    let mut worst = expected;
    for p in pts {
        let d = divergence(volume, wind, p)?;
        if (d - expected).abs() > (worst - expected).abs() {
            worst = d;
        }
    }
    Ok((worst, expected))
}

fn curvature_checks(ctx: &mut Ctx) {
    let setup = ctx.setup;
    let dim = setup.scenario.dim;
    if let Some(div) = closed_form_divergence(setup).filter(|_| setup.class.is_none_or(|c| c.kind == WindKind::Mild)) {
        ctx.run("curvature.round_spheres", "mean curvature of round spheres", 1e-4, |c| {
            let pts = interior_points(setup.metric.domain(), 10, &mut c.rng("curvature.spheres"));
            let f = ScalarFieldSpec::norm(dim);
            Ok((
                max_over(pts.iter().map(|p| {
                    let pi = nonlinear_mean_curvature(&setup.metric, &setup.volume, &f, p)?;
                    Ok((pi - ((dim as f64 - 1.0) / p.norm() + div)).abs())
                }))?,
                0.0,
            ))
        });
    }
    if !setup.is_randers_mild() {
        return;
    }
    for f in &setup.functions {
        let name = f.name().to_string();
        ctx.run(format!("curvature.transfer[{name}]"), "Pi^Z = Pi^F + div W", 1e-4, |c| {
            let pts = regular_points(f, interior_points(setup.metric.domain(), 50, &mut c.rng("curvature.transfer")));
            let residuals: Vec<Result<f64>> = pts
                .par_iter()
                .map(|p| Ok(zermelo_mean_residual(&setup.metric, &setup.volume, f, p)?.residual))
                .collect();
            Ok((max_over(residuals)?, 0.0))
        });
    }
    ctx.run("curvature.laplace_transfer", "Zermelo Laplacian term equals base term plus div W", 1e-3, |c| {
        let mut rng = c.rng("curvature.laplace");
        let cases: Vec<(ScalarFieldSpec, Point)> = (0..20)
            .filter_map(|k| {
                let poly = ScalarFieldSpec::polynomial(Polynomial::random(dim, 3, c.seed.wrapping_add(k)));
                let p = regular_points(&poly, interior_points(setup.metric.domain(), 4, &mut rng)).into_iter().next()?;
                Some((poly, p))
            })
            .collect();
        let residuals: Vec<Result<f64>> = cases
            .par_iter()
            .map(|(f, p)| Ok(laplace_transfer_residual(&setup.metric, &setup.volume, f, p)?.residual))
            .collect();
        Ok((max_over(residuals)?, 0.0))
    });
    let (base, wind) = setup.metric.navigation_data().expect("zermelo");
    for (k, imm) in setup.immersions.iter().enumerate() {
        let params: Vec<Vector> = (0..6)
            .map(|j| {
                let (lo, hi) = (imm.param_lo()[0], imm.param_hi()[0]);
                Vector::from_element(1, lo + (hi - lo) * (j as f64 + 0.5) / 6.0)
            })
            .filter(|u| imm.eval(u).is_ok_and(|x| setup.metric.domain().contains(&x)))
            .collect();
        let normal = |u: &Vector| hypersurface_normal(base, imm, u);
        ctx.run(format!("curvature.linear_variational[{k}]"), "H = Pi^h + B against the first variation", 1e-4, |_| {
            Ok((
                max_over(params.iter().map(|u| {
                    let h = linear_mean_curvature(&setup.metric, imm, u, &normal(u)?)?;
                    let var = linear_mean_curvature_variational(&setup.metric, imm, &normal, u)?;
                    Ok((h.total - var).abs())
                }))?,
                0.0,
            ))
        });
        if imm.name().starts_with("circle") {
            ctx.run(format!("curvature.linear_vs_nonlinear[{k}]"), "H = Pi^Z - div W + B", 1e-3, |_| {
                let f = ScalarFieldSpec::norm(dim);
                Ok((
                    max_over(params.iter().map(|u| {
                        let x = imm.eval(u)?;
                        let var = linear_mean_curvature_variational(&setup.metric, imm, &normal, u)?;
                        let b = linear_mean_curvature(&setup.metric, imm, u, &normal(u)?)?.b;
                        let pi = nonlinear_mean_curvature(&setup.metric, &setup.volume, &f, &x)?;
                        Ok((var - (pi - divergence(&setup.volume, wind, &x)? + b)).abs())
                    }))?,
                    0.0,
                ))
            });
        }
        if setup.scenario.wind.trim_start().starts_with("bh_minimal") {
            ctx.run(format!("curvature.bh_minimal[{k}]"), "the constructed wind makes the sphere BH-minimal", 1e-3, |_| {
                Ok((
                    max_over(params.iter().map(|u| {
                        Ok(linear_mean_curvature_variational(&setup.metric, imm, &normal, u)?.abs())
                    }))?,
                    0.0,
                ))
            });
        }
    }
}

fn isoparametric_checks(ctx: &mut Ctx) {
    let setup = ctx.setup;
    if setup.scenario.levels.len() < 2 || setup.class.is_some_and(|c| c.kind != WindKind::Mild) {
        return;
    }
    let levels = setup.scenario.levels.clone();
    for f in &setup.functions {
        let name = f.name().to_string();
        let report = isoparametric_report(&setup.metric, &setup.volume, f, &levels, 12, ctx.seed, DEFAULT_SPREAD_TOL);
        ctx.run(format!("isoparametric.laplacian_vs_curvature[{name}]"), "Laplacian and mean-curvature verdicts agree", 0.5, |_| {
            Ok((report.as_ref().map_err(Clone::clone)?.curvature_agreement as u8 as f64, 1.0))
        });
        let transnormal = report.as_ref().is_ok_and(|r| r.verdict != Verdict::Neither);
        if transnormal {
            ctx.run(format!("isoparametric.hessian_law[{name}]"), "Hess f(grad f, grad f) = b' b / 2", 1e-4, |c| {
                Ok((hessian_law_residual(&setup.metric, f, &levels, 8, c.seed)?, 0.0))
            });
        }
        if let Some((base, wind)) = setup.metric.navigation_data() {
            // W maps fibers to fibers when df(W) is constant on them; with div W
            // also constant there the verdict of the base carries over
            let div_w = |p: &Point| divergence(&setup.volume, wind, p);
            let df_w = |p: &Point| Ok(f.differential(p).dot(&wind.eval(p)));
            let projectable = levels.iter().all(|&l| {
                let pts = sample_fiber(f, setup.metric.domain(), l, 12, ctx.seed).unwrap_or_default();
                [&df_w as &(dyn Fn(&Point) -> Result<f64> + Sync), &div_w]
                    .iter()
                    .all(|q| spread_on(&pts, *q, l).is_ok_and(|s| s.spread < DEFAULT_SPREAD_TOL))
            });
            if projectable {
                ctx.run(format!("isoparametric.projectable_wind[{name}]"), "projectable wind preserves the verdict", 0.5, |c| {
                    let z = report.as_ref().map_err(Clone::clone)?.verdict;
                    let f_verdict = isoparametric_report(base, &setup.volume, f, &levels, 12, c.seed, DEFAULT_SPREAD_TOL)?.verdict;
                    Ok(((z == f_verdict) as u8 as f64, 1.0))
                });
            }
        }
    }
}

fn geodesic_checks(ctx: &mut Ctx) {
    let setup = ctx.setup;
    let dim = setup.scenario.dim;
    let metric = &setup.metric;
    // start a little off centre (mid-shell for annuli), moving across
    let start = |m: &MetricSpec| -> Result<(Point, Vector)> {
        let (lo, hi) = m.domain().bounding_box();
        let mut p = Point::zeros(dim);
        p[0] = match m.domain().bounds() {
            Bounds::Annulus { inner, outer, .. } => 0.5 * (inner + outer),
            _ => 0.5 * (lo[0] + hi[0]) + 0.1 * (hi[0] - lo[0]),
        };
        let mut v = Vector::zeros(dim);
        v[0] = -0.3;
        v[1] = 1.0;
        let speed = m.eval(&p, &v)?;
        Ok((p, v / speed))
    };
    let times: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    if setup.is_randers_mild() && setup.sigma().is_some() {
        ctx.run("geodesic.navigation", "geodesics are navigated base geodesics", 1e-4, |_| {
            let (p, v) = start(metric)?;
            let direct = geodesic_at(metric, &p, &v, &times, 1e-3)?;
            let composed = navigation_geodesic_at(metric, &p, &v, &times, 1e-3)?;
            let worst = direct
                .samples
                .iter()
                .zip(&composed.samples)
                .map(|(a, b)| {
                    a.point.iter().zip(&b.point).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if direct.samples.len() != times.len() || composed.samples.len() != times.len() {
                return Err(GeomError::LeftDomain(direct.end().t.min(composed.end().t)));
            }
            Ok((worst, 0.0))
        });
    }
    if metric.is_riemannian() {
        ctx.run("geodesic.retrace", "reversed geodesics retrace", 1e-8, |_| {
            let (p, v) = start(metric)?;
            let forward = geodesic_at(metric, &p, &v, &[1.0], 1e-3)?;
            let end = forward.end();
            let back = geodesic_at(
                metric,
                &Point::from_vec(end.point.clone()),
                &-Vector::from_vec(end.velocity.clone()),
                &[1.0],
                1e-3,
            )?;
            let back_end = Point::from_vec(back.end().point.clone());
            Ok(((back_end - p).amax(), 0.0))
        });
    }
}

fn run_setup(setup: &Setup, seed: u64, options: &SuiteOptions) -> Vec<CheckRecord> {
    let mut ctx = Ctx { setup, seed, options, records: Vec::new() };
    metric_checks(&mut ctx);
    volume_checks(&mut ctx);
    curvature_checks(&mut ctx);
    isoparametric_checks(&mut ctx);
    geodesic_checks(&mut ctx);
    ctx.records
}

/// Runs every applicable check on each scenario, scenarios in parallel.
pub fn run_suite(scenarios: &[Scenario], seed: u64, options: &SuiteOptions) -> std::result::Result<SuiteReport, ScenarioError> {
    let started = Instant::now();
    let setups: Vec<Setup> = scenarios.iter().map(Scenario::build).collect::<std::result::Result<_, _>>()?;
    let records: Vec<CheckRecord> = setups.par_iter().flat_map(|s| run_setup(s, seed, options)).collect();
    Ok(SuiteReport::from_records(seed, records, started.elapsed()))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;

    fn run(name: &str, filter: Option<&str>) -> SuiteReport {
        let options = SuiteOptions { filter: filter.map(String::from), tolerance: None };
        run_suite(&[builtin(name).unwrap()], 5, &options).unwrap()
    }

    #[test]
    fn euclidean_baseline_passes() {
        let report = run("euclidean_n2", None);
        assert!(report.summary.total > 0);
        assert!(report.all_passed(), "{report:#?}");
        assert!(report.records.iter().all(|r| r.pass == r.recompute_pass()));
    }

    #[test]
    fn filter_selects_geodesic_records() {
        let report = run("funk_n3", Some("geodesic"));
        assert!(!report.records.is_empty());
        assert!(report.records.iter().all(|r| r.check.starts_with("geodesic.")));
        assert!(report.all_passed());
    }

    #[test]
    fn reports_are_deterministic() {
        let a = run("constant_wind", Some("transfer"));
        let b = run("constant_wind", Some("transfer"));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn tolerance_override_applies() {
        let options = SuiteOptions { filter: Some("round_spheres".into()), tolerance: Some(1e-30) };
        let report = run_suite(&[builtin("funk_n2").unwrap()], 0, &options).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].tolerance, 1e-30);
        assert!(!report.all_passed());
    }
}
