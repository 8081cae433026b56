//! Nonlinear and linear mean curvatures, the Zermelo transfer identities for
//! them, and the isoparametric verdict harness.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::fd;
use crate::fields::{
    divergence, divergence_of, gradient_field, hessian_grad_grad_via, integrate_fixed,
    laplacian, laplacian_via, sample_fiber, spread_on, GradientRoute, ScalarFieldSpec, SpreadReport,
    VectorFieldSpec, VolumeFormSpec,
};
use crate::geodesic::{christoffel, contract, geodesic_at, s_of_t, s_prime, s_second, wind_sigma};
use crate::metric::{MetricSpec, WindKind};
use crate::volume::{bh_density_of_norm, ImmersionSpec};
use crate::{Point, Vector};

/// Default spread tolerance for fiber statistics.
pub const DEFAULT_SPREAD_TOL: f64 = 1e-3;

/// Terms of `Pi = (1 / F(grad f)) (lap f - Hess f(u, u))`, `u = grad f / F(grad f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCurvatureParts {
    pub laplacian: f64,
    pub hessian_unit: f64,
    pub grad_norm: f64,
    pub value: f64,
}

pub fn mean_curvature_parts(
    metric: &MetricSpec,
    volume: &VolumeFormSpec,
    f: &ScalarFieldSpec,
    p: &Point,
    route: GradientRoute,
) -> Result<MeanCurvatureParts> {
    let lap = laplacian_via(metric, volume, f, p, route)?;
    let hess = hessian_grad_grad_via(metric, f, p, route)?;
    Ok(MeanCurvatureParts {
        laplacian: lap,
        hessian_unit: hess.unit_value,
        grad_norm: hess.grad_norm,
        value: (lap - hess.unit_value) / hess.grad_norm,
    })
}

/// Mean curvature of the level set of `f` through `p` in the direction of
/// `grad f / F(grad f)`.
pub fn nonlinear_mean_curvature(
    metric: &MetricSpec,
    volume: &VolumeFormSpec,
    f: &ScalarFieldSpec,
    p: &Point,
) -> Result<f64> {
    Ok(mean_curvature_parts(metric, volume, f, p, GradientRoute::Native)?.value)
}

/// Divergence of the unit normal `grad f / |grad f|` for the Riemannian volume.
pub fn riemannian_mean_curvature(h: &MetricSpec, f: &ScalarFieldSpec, p: &Point) -> Result<f64> {
    let volume = VolumeFormSpec::riemannian(h)?;
    if f.differential(p).norm() < 1e-12 {
        return Err(GeomError::UndefinedAtCriticalPoint);
    }
    let unit = |q: &Point| -> Result<Vector> {
        let g = gradient_field(h, f, q)?;
        Ok(&g / h.eval(q, &g)?)
    };
    divergence_of(&volume, &unit, p)
}

/// Mean curvature of a Zermelo level set against that of its base, together
/// with the divergence of the wind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub level: f64,
    pub pi_z: f64,
    pub pi_f: f64,
    pub div_w: f64,
    pub residual: f64,
    pub samples: usize,
}

impl CurvatureReport {
    pub fn new(level: f64, pi_z: f64, pi_f: f64, div_w: f64) -> Self {
        Self { level, pi_z, pi_f, div_w, residual: (pi_z - pi_f - div_w).abs(), samples: 1 }
    }
}

fn navigation(metric: &MetricSpec) -> Result<(&MetricSpec, &VectorFieldSpec)> {
    metric
        .navigation_data()
        .ok_or_else(|| GeomError::Unsupported("expected a Zermelo metric".into()))
}

/// `Pi^Z - Pi^F - div W` at `p`, for the level set of `f` through `p`.
pub fn zermelo_mean_residual(
    metric: &MetricSpec,
    volume: &VolumeFormSpec,
    f: &ScalarFieldSpec,
    p: &Point,
) -> Result<CurvatureReport> {
    let (base, wind) = navigation(metric)?;
    let pi_z = nonlinear_mean_curvature(metric, volume, f, p)?;
    let pi_f = nonlinear_mean_curvature(base, volume, f, p)?;
    let div_w = divergence(volume, wind, p)?;
    Ok(CurvatureReport::new(f.value(p), pi_z, pi_f, div_w))
}

/// Both sides of the Laplacian transfer identity. The Zermelo side uses the
/// Newton inverse of the metric's own Legendre map, the base side its native
/// gradient, so the two share nothing but `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

pub fn laplace_transfer_residual(
    metric: &MetricSpec,
    volume: &VolumeFormSpec,
    f: &ScalarFieldSpec,
    p: &Point,
) -> Result<TransferResidual> {
    let (base, wind) = navigation(metric)?;
    let lhs = mean_curvature_parts(metric, volume, f, p, GradientRoute::Legendre)?.value;
    let rhs = mean_curvature_parts(base, volume, f, p, GradientRoute::Native)?.value + divergence(volume, wind, p)?;
    Ok(TransferResidual { lhs, rhs, residual: (lhs - rhs).abs() })
}

/// `H(n) = Pi^h_n + B(n)` for an immersion into a Randers space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearMeanCurvature {
    pub total: f64,
    pub pi_h: f64,
    pub b: f64,
}

fn randers(metric: &MetricSpec) -> Result<(&MetricSpec, &VectorFieldSpec)> {
    let (base, wind) = navigation(metric)?;
    if !base.is_riemannian() {
        return Err(GeomError::Unsupported("linear mean curvature needs a Riemannian base".into()));
    }
    if metric.wind_class().map(|c| c.kind) != Some(WindKind::Mild) {
        return Err(GeomError::NotRegular("linear mean curvature needs mild wind".into()));
    }
    Ok((base, wind))
}

/// `h`-unit normal of a hypersurface immersion, oriented so that
/// `det[n, J] > 0`.
pub fn hypersurface_normal(h: &MetricSpec, imm: &ImmersionSpec, u: &Vector) -> Result<Vector> {
    let x = imm.eval(u)?;
    let j = imm.jacobian(u)?;
    let (n, m) = (j.nrows(), j.ncols());
    if m + 1 != n {
        return Err(GeomError::Unsupported("normal field needs a hypersurface".into()));
    }
    let hm = h.coefficients(&x).ok_or_else(|| GeomError::Unsupported("Riemannian metric expected".into()))?;
    // null vector of J^T h via the full SVD of its transpose
    let a = (j.transpose() * &hm).transpose();
    let svd = a.svd(true, false);
    let u_mat = svd.u.expect("requested");
    let mut normal = if u_mat.ncols() == n {
        u_mat.column(n - 1).into_owned()
    } else {
        let mut basis = DMatrix::<f64>::identity(n, n);
        basis.view_mut((0, 0), (n, m)).copy_from(&u_mat);
        basis.qr().q().column(n - 1).into_owned()
    };
    normal /= normal.dot(&(&hm * &normal)).sqrt();
    let mut frame = DMatrix::zeros(n, n);
    frame.set_column(0, &normal);
    for c in 0..m {
        frame.set_column(c + 1, &j.column(c));
    }
    if frame.determinant() < 0.0 {
        normal = -normal;
    }
    Ok(normal)
}

pub fn linear_mean_curvature(
    metric: &MetricSpec,
    imm: &ImmersionSpec,
    u: &Vector,
    normal: &Vector,
) -> Result<LinearMeanCurvature> {
    let (base, wind) = randers(metric)?;
    let x = imm.eval(u)?;
    metric.domain().check(&x)?;
    let h = base.coefficients(&x).expect("riemannian");
    let j = imm.jacobian(u)?;
    let m = j.ncols();
    let hn = &h * normal;
    let unit_err = (normal.dot(&hn) - 1.0).abs();
    let orth_err = (j.transpose() * &hn).amax() / j.column_iter().map(|c| c.norm()).fold(1.0, f64::max);
    if unit_err.max(orth_err) > 1e-8 {
        return Err(GeomError::NotUnitNormal(unit_err.max(orth_err)));
    }
    let gram = j.transpose() * &h * &j;
    let gram_inv = gram.try_inverse().ok_or(GeomError::RankDeficient(0.0))?;
    let second = imm.second_derivatives(u)?;
    let gamma = christoffel(base, &x)?;
    let mut trace = 0.0;
    for a in 0..m {
        for b in 0..m {
            let ja = j.column(a).into_owned();
            let jb = j.column(b).into_owned();
            let cov = &second[a][b] + contract(&gamma, &ja, &jb);
            trace += gram_inv[(a, b)] * cov.dot(&hn);
        }
    }
    let pi_h = -trace;
    let w = wind.eval(&x);
    let dw = wind.jacobian(&x) * normal + contract(&gamma, normal, &w);
    let hw = w.dot(&hn);
    let b = m as f64 * hw * dw.dot(&hn) / (1.0 - hw * hw);
    Ok(LinearMeanCurvature { total: pi_h + b, pi_h, b })
}

/// `d/dt ln mu_t(u)` at `t = 0`, where `mu_t` is the Busemann-Hausdorff
/// density of the metric pulled back by `u -> beta_u(t)`, the `h`-geodesic
/// leaving `imm(u)` with velocity `normal(u)`. The density is computed by
/// quadrature of the pulled-back norm.
pub fn linear_mean_curvature_variational(
    metric: &MetricSpec,
    imm: &ImmersionSpec,
    normal: &(dyn Fn(&Vector) -> Result<Vector> + Sync),
    u: &Vector,
) -> Result<f64> {
    let (base, _) = randers(metric)?;
    let moved = |v: &Vector, t: f64| -> Result<Point> {
        let x = imm.eval(v)?;
        if t == 0.0 {
            return Ok(x);
        }
        let n = normal(v)? * t.signum();
        let path = geodesic_at(base, &x, &n, &[t.abs()], 2e-3)?;
        Ok(Point::from_vec(path.end().point.clone()))
    };
    let log_density = |t: f64| -> Result<f64> {
        let x = moved(u, t)?;
        metric.domain().check(&x)?;
        let jac = fd::try_jacobian(|v| moved(v, t), u, fd::STEP_FIRST)?;
        let mu = bh_density_of_norm(imm.param_dimension(), &|v| metric.eval_unchecked(&x, &(&jac * v)))?;
        Ok(mu.ln())
    };
    fd::try_derivative(log_density, 0.0, fd::STEP_SECOND)
}

/// Radial profile of `c` for the wind that makes a round sphere of radius
/// `radius` in Euclidean `n`-space minimal for the induced Busemann-Hausdorff
/// volume: `c(t) = sqrt(1 - exp(2 t Pi / (n - 1) - offset))` with `t` the
/// signed distance to the sphere and `Pi = (n - 1) / radius`. It solves
/// `c' = -(1 - c^2) Pi / ((n - 1) c)`.
pub fn minimal_wind_profile(radius: f64, offset: f64, t: f64) -> f64 {
    (1.0 - (2.0 * t / radius - offset).exp()).sqrt()
}

/// `c(t) = (2 / (n - 1)) sqrt(1 - exp(t Pi - offset))`, which does not solve
/// the equation above; kept to show that it fails to give a minimal sphere.
pub fn literal_wind_profile(n: usize, radius: f64, offset: f64, t: f64) -> f64 {
    let pi = (n as f64 - 1.0) / radius;
    2.0 / (n as f64 - 1.0) * (1.0 - (t * pi - offset).exp()).sqrt()
}

fn radial_profile_field(n: usize, radius: f64, name: String, profile: impl Fn(f64) -> f64 + Send + Sync + 'static) -> VectorFieldSpec {
    VectorFieldSpec::new(name, move |x: &Point| {
        let r = x.norm();
        let c = profile(r - radius);
        debug_assert_eq!(x.len(), n);
        x * (c / r)
    })
}

/// `W = c(|x| - radius) x / |x|` with [`minimal_wind_profile`].
pub fn minimal_sphere_wind(n: usize, radius: f64, offset: f64) -> VectorFieldSpec {
    radial_profile_field(n, radius, format!("bh_minimal {offset}"), move |t| minimal_wind_profile(radius, offset, t))
}

pub fn literal_sphere_wind(n: usize, radius: f64, offset: f64) -> VectorFieldSpec {
    radial_profile_field(n, radius, format!("literal_minimal {offset}"), move |t| {
        literal_wind_profile(n, radius, offset, t)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Isoparametric,
    TransnormalOnly,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpreads {
    pub level: f64,
    pub transnormal: SpreadReport,
    pub laplacian: SpreadReport,
    pub mean_curvature: SpreadReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoparametricVerdict {
    pub levels: Vec<LevelSpreads>,
    pub tolerance: f64,
    pub verdict: Verdict,
    /// On transnormal levels, the Laplacian spread and the mean-curvature
    /// spread fall on the same side of the tolerance.
    pub curvature_agreement: bool,
}

impl IsoparametricVerdict {
    pub fn from_levels(levels: Vec<LevelSpreads>, tolerance: f64) -> Self {
        let transnormal = levels.iter().all(|l| l.transnormal.spread < tolerance);
        let iso = transnormal && levels.iter().all(|l| l.laplacian.spread < tolerance);
        let verdict = if iso {
            Verdict::Isoparametric
        } else if transnormal {
            Verdict::TransnormalOnly
        } else {
            Verdict::Neither
        };
        let curvature_agreement = levels
            .iter()
            .filter(|l| l.transnormal.spread < tolerance)
            .all(|l| (l.laplacian.spread < tolerance) == (l.mean_curvature.spread < tolerance));
        Self { levels, tolerance, verdict, curvature_agreement }
    }

    pub fn max_spreads(&self) -> (f64, f64, f64) {
        self.levels.iter().fold((0.0, 0.0, 0.0), |acc, l| {
            (acc.0.max(l.transnormal.spread), acc.1.max(l.laplacian.spread), acc.2.max(l.mean_curvature.spread))
        })
    }
}

pub fn isoparametric_report(
    metric: &MetricSpec,
    volume: &VolumeFormSpec,
    f: &ScalarFieldSpec,
    levels: &[f64],
    samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<IsoparametricVerdict> {
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let per_level: Result<Vec<LevelSpreads>> = sorted
        .iter()
        .map(|&level| {
            let points = sample_fiber(f, metric.domain(), level, samples, seed)?;
            let transnormal = spread_on(
                &points,
                &|p| {
                    let g = gradient_field(metric, f, p)?;
                    Ok(metric.eval(p, &g)?.powi(2))
                },
                level,
            )?;
            let lap = spread_on(&points, &|p| laplacian(metric, volume, f, p), level)?;
            let mean = spread_on(&points, &|p| nonlinear_mean_curvature(metric, volume, f, p), level)?;
            Ok(LevelSpreads { level, transnormal, laplacian: lap, mean_curvature: mean })
        })
        .collect();
    Ok(IsoparametricVerdict::from_levels(per_level?, tolerance))
}

/// Measured `Hess f(grad f, grad f)` against `b'(f) b(f) / 2`, where `b` is the
/// fiber mean of `F^2(grad f)` and `b'` its fourth-order central difference
/// across neighbouring fibers.
pub fn hessian_law_residual(
    metric: &MetricSpec,
    f: &ScalarFieldSpec,
    levels: &[f64],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let b = |level: f64| -> Result<(Vec<Point>, f64)> {
        let pts = sample_fiber(f, metric.domain(), level, samples, seed)?;
        let report = spread_on(
            &pts,
            &|p| {
                let g = gradient_field(metric, f, p)?;
                Ok(metric.eval(p, &g)?.powi(2))
            },
            level,
        )?;
        Ok((pts, 0.5 * (report.min + report.max)))
    };
    let delta = fd::STEP_SECOND;
    let mut worst: f64 = 0.0;
    for &level in levels {
        let (pts, b0) = b(level)?;
        let db = (8.0 * (b(level + delta)?.1 - b(level - delta)?.1) - (b(level + 2.0 * delta)?.1 - b(level - 2.0 * delta)?.1))
            / (12.0 * delta);
        for p in &pts {
            let measured = crate::fields::hessian_grad_grad(metric, f, p)?.value;
            worst = worst.max((measured - 0.5 * db * b0).abs());
        }
    }
    Ok(worst)
}

/// One tube point of the navigation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubePoint {
    pub fiber_point: Vec<f64>,
    pub t: f64,
    pub point: Vec<f64>,
    /// Laplacian of the tube distance function, computed on the tube itself.
    pub direct: f64,
    /// `div W + s'' + s' e^{tau t} lap^F rho~`.
    pub stated: f64,
    /// `div W + s' lap^F rho~`.
    pub rescaled: f64,
    /// `lap^F rho~` at the base point.
    pub base_laplacian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationIsoReport {
    pub sigma: f64,
    pub tau: f64,
    pub level: f64,
    pub grid: Vec<TubePoint>,
    pub stated_residual: f64,
    pub rescaled_residual: f64,
    /// `(t, direct spread, base spread)` over the fiber at each time.
    pub spreads: Vec<(f64, f64, f64)>,
    /// Both spreads on the same side of the tolerance at every time.
    pub spreads_agree: bool,
}

/// Fixed RK4 step count for the flows that define the tube map.
pub const TUBE_STEPS: usize = 64;

#[derive(Clone)]
struct Tube {
    base: MetricSpec,
    wind: VectorFieldSpec,
    f_base: ScalarFieldSpec,
    sigma: f64,
    level: f64,
}

impl Tube {
    fn base_flow(&self, p: &Point, s: f64) -> Result<Point> {
        let field = |q: &Point| -> Result<Vector> {
            let g = gradient_field(&self.base, &self.f_base, q)?;
            Ok(&g / self.base.eval_unchecked(q, &g)?)
        };
        integrate_fixed(&field, p, s, TUBE_STEPS)
    }

    /// `phi^W_t(phi~_{s(t)}(p))`.
    fn map(&self, p: &Point, t: f64) -> Result<Point> {
        let x = self.base_flow(p, s_of_t(self.sigma, t))?;
        integrate_fixed(&|q| Ok(self.wind.eval(q)), &x, t, TUBE_STEPS)
    }

    /// `(p, t)` with `map(p, t) = q` and `f_base(p) = level`, by Newton from
    /// `(p0, t0)`.
    fn invert(&self, q: &Point, p0: &Point, t0: f64) -> Result<(Point, f64)> {
        let n = q.len();
        let residual = |z: &DVector<f64>| -> Result<DVector<f64>> {
            let p = z.rows(0, n).into_owned();
            let x = self.map(&p, z[n])?;
            let mut r = DVector::zeros(n + 1);
            r.rows_mut(0, n).copy_from(&(x - q));
            r[n] = self.f_base.value(&p) - self.level;
            Ok(r)
        };
        let mut z = DVector::zeros(n + 1);
        z.rows_mut(0, n).copy_from(p0);
        z[n] = t0;
        let jac = fd::try_jacobian(residual, &z, fd::STEP_FIRST)?;
        let lu = jac.lu();
        for _ in 0..60 {
            let r = residual(&z)?;
            if r.amax() < 1e-14 {
                return Ok((z.rows(0, n).into_owned(), z[n]));
            }
            let dz = lu.solve(&r).ok_or_else(|| GeomError::NumericBreakdown("singular tube map".into()))?;
            z -= dz;
        }
        let r = residual(&z)?;
        if r.amax() < 1e-12 {
            Ok((z.rows(0, n).into_owned(), z[n]))
        } else {
            Err(GeomError::NoConvergence(format!("tube inversion residual {}", r.amax())))
        }
    }
}

/// Checks the Laplacian of the Zermelo distance function built by
/// navigating the base distance function `f_base` from its fiber
/// `f_base = level`, on a grid of fiber points and times.
pub fn navigation_isoparametric_check(
    metric: &MetricSpec,
    volume: &VolumeFormSpec,
    f_base: &ScalarFieldSpec,
    level: f64,
    times: &[f64],
    samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<NavigationIsoReport> {
    let (base, wind) = navigation(metric)?;
    let sigma = wind_sigma(metric, seed)?;
    let tube = Tube { base: base.clone(), wind: wind.clone(), f_base: f_base.clone(), sigma, level };
    let fiber = sample_fiber(f_base, metric.domain(), level, samples, seed)?;
    let cells: Result<Vec<(Point, f64, Point, f64)>> = fiber
        .iter()
        .flat_map(|p| times.iter().map(move |t| (p.clone(), *t)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(p, t)| {
            let q = tube.map(p, *t)?;
            metric.domain().check(&q)?;
            let div_w = divergence(volume, wind, &q)?;
            Ok((p.clone(), *t, q, div_w))
        })
        .collect();
    let cells = cells?;
    // the wind divergence must be constant over the tube
    let (lo, hi) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, c| (a.0.min(c.3), a.1.max(c.3)));
    if hi - lo > tolerance {
        return Err(GeomError::DivergenceNotConstant(hi - lo));
    }
    let tau = cells.iter().map(|c| c.3).sum::<f64>() / cells.len() as f64;
    let grid: Result<Vec<TubePoint>> = cells
        .par_iter()
        .map(|(p, t, q, div_w)| {
            let (t, div_w) = (*t, *div_w);
            let rho = ScalarFieldSpec::new("tube distance", {
                let (tube, p) = (tube.clone(), p.clone());
                move |x: &Point| tube.invert(x, &p, t).map(|z| z.1).unwrap_or(f64::NAN)
            });
            let direct = laplacian(metric, volume, &rho, q)?;
            if !direct.is_finite() {
                return Err(GeomError::NoConvergence("tube distance undefined near the grid point".into()));
            }
            let x = tube.base_flow(p, s_of_t(sigma, t))?;
            let base_lap = laplacian(base, volume, f_base, &x)?;
            let stated = div_w + s_second(sigma, t) + s_prime(sigma, t) * (tau * t).exp() * base_lap;
            let rescaled = div_w + s_prime(sigma, t) * base_lap;
            Ok(TubePoint {
                fiber_point: p.as_slice().to_vec(),
                t,
                point: q.as_slice().to_vec(),
                direct,
                stated,
                rescaled,
                base_laplacian: base_lap,
            })
        })
        .collect();
    let grid = grid?;
    let stated_residual = grid.iter().map(|g| (g.direct - g.stated).abs()).fold(0.0, f64::max);
    let rescaled_residual = grid.iter().map(|g| (g.direct - g.rescaled).abs()).fold(0.0, f64::max);
    let mut spreads = Vec::new();
    for &t in times {
        let at: Vec<&TubePoint> = grid.iter().filter(|g| g.t == t).collect();
        let spread = |v: &dyn Fn(&TubePoint) -> f64| {
            let vals: Vec<f64> = at.iter().map(|g| v(g)).collect();
            vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - vals.iter().copied().fold(f64::INFINITY, f64::min)
        };
        let direct = spread(&|g| g.direct);
        let base_spread = spread(&|g| g.base_laplacian);
        spreads.push((t, direct, base_spread));
    }
    let spreads_agree = spreads.iter().all(|(_, a, b)| (*a < tolerance) == (*b < tolerance));
    Ok(NavigationIsoReport { sigma, tau, level, grid, stated_residual, rescaled_residual, spreads, spreads_agree })
}

/// `(r, Pi)` along the ray `r u`, for the level sets of `f`.
pub fn curvature_profile(
    metric: &MetricSpec,
    volume: &VolumeFormSpec,
    f: &ScalarFieldSpec,
    direction: &Vector,
    radii: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let u = direction / direction.norm();
    radii.par_iter().map(|&r| Ok((r, nonlinear_mean_curvature(metric, volume, f, &(&u * r))?))).collect()
}

/// Linear zero crossing of a sampled profile, if it changes sign.
pub fn zero_crossing(profile: &[(f64, f64)]) -> Option<f64> {
    profile.windows(2).find_map(|w| {
        let ((r0, y0), (r1, y1)) = (w[0], w[1]);
        (y0 == 0.0 || y0.signum() != y1.signum()).then(|| r0 - y0 * (r1 - r0) / (y1 - y0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ChartDomain;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn funk(n: usize) -> MetricSpec {
        let base = MetricSpec::euclidean(ChartDomain::ball(n, 10.0));
        MetricSpec::zermelo_on(ChartDomain::ball(n, 0.9), base, VectorFieldSpec::radial(n, -1.0), 64).unwrap()
    }

    fn wind_plane(w: VectorFieldSpec, domain: ChartDomain) -> MetricSpec {
        let base = MetricSpec::euclidean(ChartDomain::ball(2, 10.0));
        MetricSpec::zermelo_on(domain, base, w, 64).unwrap()
    }

    #[test]
    fn round_spheres() {
        for n in [2, 3] {
            let e = MetricSpec::euclidean(ChartDomain::ball(n, 2.0));
            let vol = VolumeFormSpec::euclidean(e.domain().clone());
            let f = ScalarFieldSpec::norm(n);
            let mut p = Vector::zeros(n);
            p[0] = 0.3;
            p[n - 1] += 0.4;
            let pi = nonlinear_mean_curvature(&e, &vol, &f, &p).unwrap();
            assert!((pi - (n as f64 - 1.0) / p.norm()).abs() < 1e-6, "{pi}");
            let rm = riemannian_mean_curvature(&e, &f, &p).unwrap();
            assert!((rm - pi).abs() < 1e-6);
        }
    }

    #[test]
    fn funk_spheres() {
        // Lebesgue measure is the Busemann-Hausdorff volume of any Zermelo
        // metric over the Euclidean plane, and div(-x) = -n
        for n in [2, 3] {
            let z = funk(n);
            let vol = VolumeFormSpec::busemann_hausdorff(&z);
            let f = ScalarFieldSpec::norm(n);
            let mut p = Vector::zeros(n);
            p[0] = 0.5;
            let pi = nonlinear_mean_curvature(&z, &vol, &f, &p).unwrap();
            let expected = (n as f64 - 1.0) / 0.5 - n as f64;
            assert!((pi - expected).abs() < 1e-4, "{n}: {pi} vs {expected}");
            let report = zermelo_mean_residual(&z, &vol, &f, &p).unwrap();
            assert!(report.residual < 1e-4);
            let transfer = laplace_transfer_residual(&z, &vol, &f, &p).unwrap();
            assert!(transfer.residual < 1e-4, "{transfer:?}");
        }
    }

    #[test]
    fn circle_in_radial_wind() {
        let a = 0.5;
        let r = 0.8;
        let z = wind_plane(VectorFieldSpec::radial(2, a), ChartDomain::ball(2, 1.5));
        let imm = ImmersionSpec::circle(v(&[0.0, 0.0]), r);
        let e = MetricSpec::euclidean(ChartDomain::ball(2, 10.0));
        for u in [0.3, 2.0] {
            let uu = v(&[u]);
            let n = hypersurface_normal(&e, &imm, &uu).unwrap();
            assert!((n - v(&[u.cos(), u.sin()])).norm() < 1e-10);
            let h = linear_mean_curvature(&z, &imm, &uu, &v(&[u.cos(), u.sin()])).unwrap();
            let expected = 1.0 / r + a * a * r / (1.0 - a * a * r * r);
            assert!((h.total - expected).abs() < 1e-6, "{h:?} vs {expected}");
            let normal = |w: &Vector| Ok(v(&[w[0].cos(), w[0].sin()]));
            let var = linear_mean_curvature_variational(&z, &imm, &normal, &uu).unwrap();
            assert!((var - expected).abs() < 1e-5, "{var} vs {expected}");
        }
    }

    #[test]
    fn rejects_non_unit_normal() {
        let z = wind_plane(VectorFieldSpec::radial(2, 0.3), ChartDomain::ball(2, 1.5));
        let imm = ImmersionSpec::circle(v(&[0.0, 0.0]), 0.5);
        let err = linear_mean_curvature(&z, &imm, &v(&[0.0]), &v(&[1.01, 0.0])).unwrap_err();
        assert!(matches!(err, GeomError::NotUnitNormal(_)));
    }

    #[test]
    fn minimal_sphere_wind_is_minimal() {
        for (n, offset) in [(2, 1.0), (3, 0.5)] {
            let w = minimal_sphere_wind(n, 1.0, offset);
            let base = MetricSpec::euclidean(ChartDomain::ball(n, 10.0));
            let z = MetricSpec::zermelo_on(ChartDomain::annulus(n, 0.6, 1.2), base.clone(), w, 64).unwrap();
            if n == 2 {
                let imm = ImmersionSpec::circle(v(&[0.0, 0.0]), 1.0);
                let u = v(&[0.7]);
                let h = linear_mean_curvature(&z, &imm, &u, &v(&[0.7f64.cos(), 0.7f64.sin()])).unwrap();
                assert!(h.total.abs() < 1e-6, "{h:?}");
            } else {
                let imm = ImmersionSpec::new("sphere", v(&[0.3, -3.0]), v(&[2.8, 3.0]), 3, |u: &Vector| {
                    v(&[u[0].sin() * u[1].cos(), u[0].sin() * u[1].sin(), u[0].cos()])
                });
                let u = v(&[1.1, 0.4]);
                let x = imm.eval(&u).unwrap();
                let h = linear_mean_curvature(&z, &imm, &u, &x).unwrap();
                assert!(h.total.abs() < 1e-6, "{h:?}");
            }
        }
    }

    #[test]
    fn literal_profile_is_not_minimal() {
        let w = literal_sphere_wind(2, 1.0, 0.1);
        let z = wind_plane(w, ChartDomain::annulus(2, 0.85, 1.09));
        let imm = ImmersionSpec::circle(v(&[0.0, 0.0]), 1.0);
        let h = linear_mean_curvature(&z, &imm, &v(&[0.0]), &v(&[1.0, 0.0])).unwrap();
        assert!(h.total.abs() > 1.0, "{h:?}");
    }

    #[test]
    fn profile_changes_sign_in_funk() {
        let z = funk(3);
        let vol = VolumeFormSpec::busemann_hausdorff(&z);
        let radii: Vec<f64> = (1..=16).map(|i| 0.05 * i as f64).collect();
        let prof = curvature_profile(&z, &vol, &ScalarFieldSpec::norm(3), &v(&[1.0, 1.0, 0.0]), &radii).unwrap();
        let r0 = zero_crossing(&prof).unwrap();
        assert!((r0 - 2.0 / 3.0).abs() < 1e-2, "{r0}");
    }

    #[test]
    fn verdicts() {
        let e = MetricSpec::euclidean(ChartDomain::ball(2, 2.0));
        let vol = VolumeFormSpec::euclidean(e.domain().clone());
        let iso = isoparametric_report(&e, &vol, &ScalarFieldSpec::norm(2), &[0.5, 1.0], 8, 3, 1e-3).unwrap();
        assert_eq!(iso.verdict, Verdict::Isoparametric);
        assert!(iso.curvature_agreement);
        let wavy = ScalarFieldSpec::new("x + y^2", |p: &Point| p[0] + p[1] * p[1]);
        let neither = isoparametric_report(&e, &vol, &wavy, &[0.2, 0.5], 8, 3, 1e-3).unwrap();
        assert_eq!(neither.verdict, Verdict::Neither);
        let law = hessian_law_residual(&e, &ScalarFieldSpec::norm(2), &[0.4, 0.8, 1.2], 6, 1).unwrap();
        assert!(law < 1e-5, "{law}");
    }

    #[test]
    fn navigated_distance_laplacian() {
        let z = funk(2);
        // the base flow leaves the Funk chart, so the volume must cover the base
        let vol = VolumeFormSpec::busemann_hausdorff(z.navigation_data().unwrap().0);
        let report =
            navigation_isoparametric_check(&z, &vol, &ScalarFieldSpec::norm(2), 0.3, &[0.2, 0.5], 4, 7, 1e-3).unwrap();
        assert!((report.sigma - 1.0).abs() < 1e-6);
        assert!((report.tau + 2.0).abs() < 1e-6);
        assert!(report.rescaled_residual < 1e-3, "{report:?}");
        assert!(report.stated_residual > 0.1);
        assert!(report.spreads_agree);
    }
}
