//! Geodesics: Christoffel symbols and the Riemannian geodesic equation, the
//! Euler-Lagrange spray of `F^2 / 2` for general metrics, and the navigation
//! representation of Zermelo geodesics through the flow of the wind.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::fd;
use crate::fields::{flow, homothety_estimate, sample_fiber, gradient_field, ScalarFieldSpec};
use crate::metric::{fundamental_tensor, in_conic_domain, MetricKind, MetricSpec};
use crate::{Point, Vector};

/// Below this `|sigma|` the series branch of `s(t)` is used.
pub const SIGMA_SERIES_CUTOFF: f64 = 1e-8;
/// Residual accepted from the homothety fit when no sigma is declared.
pub const HOMOTHETY_TOL: f64 = 1e-6;

/// Christoffel symbols, `gamma[k][(i, j)] = Gamma^k_{ij}`.
pub type Christoffel = Vec<DMatrix<f64>>;

pub fn christoffel(h: &MetricSpec, p: &Point) -> Result<Christoffel> {
    h.domain().check(p)?;
    let coeff = match h.kind() {
        MetricKind::Riemannian(c) => c.clone(),
        _ => return Err(GeomError::Unsupported("Christoffel symbols need a Riemannian metric".into())),
    };
    let n = p.len();
    // dh[l] = d_l h
    let dh: Vec<DMatrix<f64>> = (0..n)
        .map(|l| {
            let step = fd::scaled(fd::STEP_FIRST, p[l]);
            let at = |t: f64| {
                let mut q = p.clone();
                q[l] += t;
                coeff(&q)
            };
            let coarse = (at(step) - at(-step)) / (2.0 * step);
            let fine = (at(step / 2.0) - at(-step / 2.0)) / step;
            (fine * 4.0 - coarse) / 3.0
        })
        .collect();
    let inv = coeff(p).try_inverse().ok_or_else(|| GeomError::NumericBreakdown("singular metric".into()))?;
    let mut gamma = vec![DMatrix::zeros(n, n); n];
    for i in 0..n {
        for j in i..n {
            // lowered symbol Gamma_{l, ij}
            let lowered: Vec<f64> =
                (0..n).map(|l| 0.5 * (dh[i][(j, l)] + dh[j][(i, l)] - dh[l][(i, j)])).collect();
            for k in 0..n {
                let v: f64 = (0..n).map(|l| inv[(k, l)] * lowered[l]).sum();
                gamma[k][(i, j)] = v;
                gamma[k][(j, i)] = v;
            }
        }
    }
    Ok(gamma)
}

/// `Gamma(u, v)^k = Gamma^k_{ij} u^i v^j`.
pub fn contract(gamma: &Christoffel, u: &Vector, v: &Vector) -> Vector {
    Vector::from_fn(gamma.len(), |k, _| u.dot(&(&gamma[k] * v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSample {
    pub t: f64,
    pub point: Vec<f64>,
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    pub samples: Vec<GeodesicSample>,
    pub integrator: String,
    pub step: f64,
}

impl GeodesicPath {
    pub fn end(&self) -> &GeodesicSample {
        self.samples.last().expect("paths are never empty")
    }

    /// Largest deviation of `F(point, velocity)` from its initial value.
    pub fn speed_drift(&self, metric: &MetricSpec) -> Result<f64> {
        let speeds: Result<Vec<f64>> = self
            .samples
            .iter()
            .map(|s| metric.eval(&Point::from_vec(s.point.clone()), &Vector::from_vec(s.velocity.clone())))
            .collect();
        let speeds = speeds?;
        Ok(speeds.iter().map(|s| (s - speeds[0]).abs()).fold(0.0, f64::max))
    }
}

/// Second derivative of a geodesic through `(x, y)`.
pub fn acceleration(metric: &MetricSpec, x: &Point, y: &Vector) -> Result<Vector> {
    if let MetricKind::Riemannian(_) = metric.kind() {
        return Ok(-contract(&christoffel(metric, x)?, y, y));
    }
    let lagrangian = |q: &Point, w: &Vector| -> Result<f64> {
        metric.domain().check(q)?;
        let f = metric.eval_unchecked(q, w)?;
        Ok(0.5 * f * f)
    };
    let g = fundamental_tensor(metric, x, y)?.g;
    let dldx = fd::try_gradient(|q| lagrangian(q, y), x, fd::STEP_FIRST)?;
    // (d^2 L / dy dx) y: derivative of the Legendre map along the flow direction
    let speed = y.norm();
    let h = fd::STEP_SECOND * x.norm().max(1.0) / speed;
    let coarse = (metric.legendre_map(&(x + y * h), y)? - metric.legendre_map(&(x - y * h), y)?) / (2.0 * h);
    let fine = (metric.legendre_map(&(x + y * (h / 2.0)), y)? - metric.legendre_map(&(x - y * (h / 2.0)), y)?) / h;
    let mixed = (fine * 4.0 - coarse) / 3.0;
    g.lu()
        .solve(&(dldx - mixed))
        .ok_or_else(|| GeomError::NumericBreakdown("singular fundamental tensor".into()))
}

fn classify_failure(e: GeomError, t: f64) -> GeomError {
    match e {
        GeomError::OutsideDomain(_) => GeomError::LeftDomain(t),
        GeomError::NotAdmissible(_) | GeomError::BranchViolation(_) => GeomError::LeftCone(t),
        other => other,
    }
}

/// Geodesic through `(p, v)` sampled at the increasing, nonnegative `times`;
/// RK4 with steps no longer than `step`, landing exactly on each time.
pub fn geodesic_at(metric: &MetricSpec, p: &Point, v: &Vector, times: &[f64], step: f64) -> Result<GeodesicPath> {
    metric.eval(p, v)?;
    let rhs = |x: &Point, y: &Vector, t: f64| -> Result<Vector> {
        if !metric.domain().contains(x) {
            return Err(GeomError::LeftDomain(t));
        }
        acceleration(metric, x, y).map_err(|e| classify_failure(e, t))
    };
    let mut samples = Vec::with_capacity(times.len());
    let (mut x, mut y, mut t) = (p.clone(), v.clone(), 0.0);
    for &target in times {
        if target < t {
            return Err(GeomError::Unsupported("sample times must be increasing and nonnegative".into()));
        }
        let span = target - t;
        let steps = (span / step - 1e-9).ceil().max(0.0) as usize;
        let dt = if steps == 0 { 0.0 } else { span / steps as f64 };
        for _ in 0..steps {
            let k1v = y.clone();
            let k1a = rhs(&x, &y, t)?;
            let k2v = &y + &k1a * (dt / 2.0);
            let k2a = rhs(&(&x + &k1v * (dt / 2.0)), &k2v, t)?;
            let k3v = &y + &k2a * (dt / 2.0);
            let k3a = rhs(&(&x + &k2v * (dt / 2.0)), &k3v, t)?;
            let k4v = &y + &k3a * dt;
            let k4a = rhs(&(&x + &k3v * dt), &k4v, t)?;
            x += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
            y += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0);
            t += dt;
            if !metric.domain().contains(&x) {
                return Err(GeomError::LeftDomain(t));
            }
        }
        t = target;
        samples.push(GeodesicSample { t, point: x.as_slice().to_vec(), velocity: y.as_slice().to_vec() });
    }
    let integrator = if metric.is_riemannian() { "rk4-christoffel" } else { "rk4-euler-lagrange" };
    Ok(GeodesicPath { samples, integrator: integrator.into(), step })
}

/// Geodesic on `[0, t_final]` sampled at every step.
pub fn geodesic(metric: &MetricSpec, p: &Point, v: &Vector, t_final: f64, step: f64) -> Result<GeodesicPath> {
    geodesic_at(metric, p, v, &uniform_times(t_final, step), step)
}

pub fn uniform_times(t_final: f64, step: f64) -> Vec<f64> {
    let n = (t_final / step - 1e-9).ceil().max(1.0) as usize;
    (0..=n).map(|k| t_final * k as f64 / n as f64).collect()
}

/// `s(t) = (e^{sigma t} - 1) / sigma`, with the series `t + sigma t^2 / 2`
/// for tiny `sigma`.
pub fn s_of_t(sigma: f64, t: f64) -> f64 {
    if sigma.abs() < SIGMA_SERIES_CUTOFF {
        t + sigma * t * t / 2.0
    } else {
        (sigma * t).exp_m1() / sigma
    }
}

pub fn s_prime(sigma: f64, t: f64) -> f64 {
    (sigma * t).exp()
}

pub fn s_second(sigma: f64, t: f64) -> f64 {
    sigma * (sigma * t).exp()
}

/// Homothety coefficient of the wind: the declared one, or a fitted one
/// whose residual is below [`HOMOTHETY_TOL`].
pub fn wind_sigma(metric: &MetricSpec, seed: u64) -> Result<f64> {
    let (base, wind) = metric
        .navigation_data()
        .ok_or_else(|| GeomError::Unsupported("navigation data needs a Zermelo metric".into()))?;
    match wind.declared_sigma() {
        Some(s) => Ok(s),
        None => homothety_estimate(base, wind, 16, seed)?.require(HOMOTHETY_TOL),
    }
}

/// Unit-speed Zermelo geodesic `phi^W_t(base_geodesic(s(t)))` with initial
/// velocity `v`, sampled at `times`.
pub fn navigation_geodesic_at(
    metric: &MetricSpec,
    p: &Point,
    v: &Vector,
    times: &[f64],
    step: f64,
) -> Result<GeodesicPath> {
    let sigma = wind_sigma(metric, 0)?;
    let (base, wind) = metric.navigation_data().expect("checked by wind_sigma");
    let speed = metric.eval(p, v)?;
    if (speed - 1.0).abs() > 1e-8 {
        return Err(GeomError::NotAdmissible(format!("initial velocity has Z-norm {speed}, expected 1")));
    }
    let base_v = v - wind.eval(p);
    let s_times: Vec<f64> = times.iter().map(|t| s_of_t(sigma, *t)).collect();
    let base_path = geodesic_at(base, p, &base_v, &s_times, step)?;
    let domain = base.domain();
    let samples: Result<Vec<GeodesicSample>> = times
        .par_iter()
        .zip(base_path.samples.par_iter())
        .map(|(&t, b)| {
            let q = Point::from_vec(b.point.clone());
            let x = flow(wind, domain, &q, t, step).map_err(|e| classify_failure(e, t))?;
            // d/dt phi_t(q(t)) = W(phi_t(q)) + d phi_t (q') s'(t)
            let dq = Vector::from_vec(b.velocity.clone()) * s_prime(sigma, t);
            let push = if t == 0.0 {
                dq
            } else {
                let h = fd::STEP_FIRST / dq.norm().max(1e-300);
                let jac_dir = |eps: f64| flow(wind, domain, &(&q + &dq * eps), t, step);
                let coarse = (jac_dir(h)? - jac_dir(-h)?) / (2.0 * h);
                let fine = (jac_dir(h / 2.0)? - jac_dir(-h / 2.0)?) / h;
                (fine * 4.0 - coarse) / 3.0
            };
            metric.domain().check(&x).map_err(|e| classify_failure(e, t))?;
            let vel = wind.eval(&x) + push;
            Ok(GeodesicSample { t, point: x.as_slice().to_vec(), velocity: vel.as_slice().to_vec() })
        })
        .collect();
    Ok(GeodesicPath { samples: samples?, integrator: format!("navigation({})", base_path.integrator), step })
}

pub fn navigation_geodesic(metric: &MetricSpec, p: &Point, v: &Vector, t_final: f64, step: f64) -> Result<GeodesicPath> {
    navigation_geodesic_at(metric, p, v, &uniform_times(t_final, step), step)
}

/// Like [`geodesic`], but stops at the last sample before the path leaves the
/// domain or the admissible cone instead of failing.
pub fn geodesic_until_exit(metric: &MetricSpec, p: &Point, v: &Vector, t_final: f64, step: f64) -> Result<GeodesicPath> {
    let first = geodesic_at(metric, p, v, &[0.0], step)?;
    let mut samples = first.samples;
    let (mut x, mut y) = (p.clone(), v.clone());
    for t in uniform_times(t_final, step).into_iter().skip(1) {
        let last = samples.last().expect("starts with t = 0").t;
        match geodesic_at(metric, &x, &y, &[t - last], step) {
            Ok(path) => {
                let end = path.end();
                x = Point::from_vec(end.point.clone());
                y = Vector::from_vec(end.velocity.clone());
                samples.push(GeodesicSample { t, point: end.point.clone(), velocity: end.velocity.clone() });
            }
            Err(GeomError::LeftDomain(_) | GeomError::LeftCone(_)) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(GeodesicPath { samples, integrator: first.integrator, step })
}

/// Unit-speed geodesics from `p` in `count` evenly spaced directions of the
/// first coordinate plane, each followed until it leaves the chart or
/// `t_final`. Directions outside the admissible cone are skipped.
pub fn geodesic_fan(metric: &MetricSpec, p: &Point, count: usize, t_final: f64, step: f64) -> Result<Vec<GeodesicPath>> {
    let n = metric.dimension();
    let mut directions = Vec::with_capacity(count);
    for k in 0..count {
        let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
        let mut v = Vector::zeros(n);
        v[0] = a.cos();
        v[1] = a.sin();
        if in_conic_domain(metric, p, &v)? {
            directions.push(v);
        }
    }
    directions
        .into_par_iter()
        .map(|v| {
            let v = &v / metric.eval(p, &v)?;
            geodesic_until_exit(metric, p, &v, t_final, step)
        })
        .collect()
}

/// One normal geodesic of a distance tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeRay {
    pub fiber_point: Vec<f64>,
    pub normal: Vec<f64>,
    /// `(t, gamma(t))`; truncated where the ray left the domain or cone.
    pub points: Vec<(f64, Vec<f64>)>,
    pub truncated: Option<String>,
}

/// Normal geodesics `t -> gamma_{xi(q)}(t)` from sampled points `q` of the
/// fiber `f = level`, with `xi = grad f / F(grad f)`. Along each ray the
/// distance function with `grad rho = xi` on the fiber equals `t`.
pub fn distance_tube(
    metric: &MetricSpec,
    f: &ScalarFieldSpec,
    level: f64,
    times: &[f64],
    fiber_samples: usize,
    seed: u64,
    step: f64,
) -> Result<Vec<TubeRay>> {
    let fiber = sample_fiber(f, metric.domain(), level, fiber_samples, seed)?;
    let rays: Vec<TubeRay> = fiber
        .par_iter()
        .filter_map(|q| {
            let g = gradient_field(metric, f, q).ok()?;
            let xi = &g / metric.eval(q, &g).ok()?;
            let mut points = Vec::new();
            let mut truncated = None;
            // integrate one time at a time so that a failure keeps the prefix
            let mut x = q.clone();
            let mut y = xi.clone();
            let mut last = 0.0;
            for &t in times {
                if t == 0.0 {
                    points.push((0.0, q.as_slice().to_vec()));
                    continue;
                }
                match geodesic_at(metric, &x, &y, &[t - last], step) {
                    Ok(path) => {
                        let s = path.end();
                        x = Point::from_vec(s.point.clone());
                        y = Vector::from_vec(s.velocity.clone());
                        last = t;
                        points.push((t, s.point.clone()));
                    }
                    Err(e) => {
                        truncated = Some(e.to_string());
                        break;
                    }
                }
            }
            Some(TubeRay { fiber_point: q.as_slice().to_vec(), normal: xi.as_slice().to_vec(), points, truncated })
        })
        .collect();
    if rays.is_empty() {
        return Err(GeomError::FiberNotFound(level));
    }
    Ok(rays)
}
