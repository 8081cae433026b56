//! Scalar fields, vector fields and volume forms on the chart, plus the
//! calculus built on them: gradients, divergence, the nonlinear Laplacian,
//! flows and fiber statistics.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::ChartDomain;
use crate::error::{GeomError, Result};
use crate::fd;
use crate::metric::{legendre_newton, legendre_solve, MetricKind, MetricSpec, WindKind};
use crate::{Point, Vector};

type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
type CovectorFn = Arc<dyn Fn(&Point) -> Vector + Send + Sync>;
type VectorFn = Arc<dyn Fn(&Point) -> Vector + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>;
type DensityFn = Arc<dyn Fn(&Point) -> Result<f64> + Send + Sync>;

/// Smooth function with an optional analytic differential.
#[derive(Clone)]
pub struct ScalarFieldSpec {
    name: String,
    value: ScalarFn,
    differential: Option<CovectorFn>,
}

impl fmt::Debug for ScalarFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFieldSpec({})", self.name)
    }
}

impl ScalarFieldSpec {
    pub fn new(name: impl Into<String>, value: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), value: Arc::new(value), differential: None }
    }

    pub fn with_differential(mut self, d: impl Fn(&Point) -> Vector + Send + Sync + 'static) -> Self {
        self.differential = Some(Arc::new(d));
        self
    }

    /// `|x - center|`.
    pub fn distance_from(center: Vector) -> Self {
        let c2 = center.clone();
        Self::new("norm", move |p| (p - &center).norm()).with_differential(move |p| {
            let d = p - &c2;
            let r = d.norm();
            if r == 0.0 {
                Vector::zeros(d.len())
            } else {
                d / r
            }
        })
    }

    pub fn norm(n: usize) -> Self {
        Self::distance_from(Vector::zeros(n))
    }

    /// `a . x + b`.
    pub fn affine(a: Vector, b: f64) -> Self {
        let a2 = a.clone();
        Self::new("affine", move |p| a.dot(p) + b).with_differential(move |_| a2.clone())
    }

    pub fn coordinate(n: usize, k: usize) -> Self {
        let mut f = Self::affine(Vector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 }), 0.0);
        f.name = format!("x{k}");
        f
    }

    pub fn polynomial(poly: Polynomial) -> Self {
        let p2 = poly.clone();
        let name = poly.to_string();
        Self::new(name, move |x| poly.eval(x)).with_differential(move |x| p2.gradient(x))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, p: &Point) -> f64 {
        (self.value)(p)
    }

    pub fn has_analytic_differential(&self) -> bool {
        self.differential.is_some()
    }

    pub fn differential(&self, p: &Point) -> Vector {
        match &self.differential {
            Some(d) => d(p),
            None => self.fd_differential(p),
        }
    }

    pub fn fd_differential(&self, p: &Point) -> Vector {
        fd::gradient(|x| self.value(x), p, fd::STEP_FIRST)
    }
}

/// Sparse polynomial: a list of `(coefficient, exponents)` terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn eval(&self, x: &Point) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| c * e.iter().enumerate().map(|(i, k)| x[i].powi(*k as i32)).product::<f64>())
            .sum()
    }

    pub fn gradient(&self, x: &Point) -> Vector {
        let n = x.len();
        let mut g = Vector::zeros(n);
        for (c, e) in &self.terms {
            for j in 0..n {
                let kj = e.get(j).copied().unwrap_or(0);
                if kj == 0 {
                    continue;
                }
                let mut prod = c * kj as f64;
                for (i, k) in e.iter().enumerate() {
                    let k = if i == j { k - 1 } else { *k };
                    prod *= x[i].powi(k as i32);
                }
                g[j] += prod;
            }
        }
        g
    }

    /// Random polynomial of total degree `<= degree` with coefficients in [-1, 1].
    pub fn random(n: usize, degree: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        let mut exps = vec![0u32; n];
        loop {
            let total: u32 = exps.iter().sum();
            if total >= 1 && total <= degree {
                let c: f64 = rng.random_range(-1.0..1.0);
                terms.push((c, exps.clone()));
            }
            let mut k = 0;
            loop {
                if k == n {
                    return Self { terms };
                }
                exps[k] += 1;
                if exps[k] <= degree {
                    break;
                }
                exps[k] = 0;
                k += 1;
            }
        }
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (c, e) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (i, k) in e.iter().enumerate() {
                if *k > 0 {
                    write!(f, "*x{i}^{k}")?;
                }
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Vector field with optional analytic Jacobian and declared homothety coefficient.
#[derive(Clone)]
pub struct VectorFieldSpec {
    name: String,
    value: VectorFn,
    jacobian: Option<MatrixFn>,
    declared_sigma: Option<f64>,
}

impl fmt::Debug for VectorFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorFieldSpec({}, sigma={:?})", self.name, self.declared_sigma)
    }
}

impl VectorFieldSpec {
    pub fn new(name: impl Into<String>, value: impl Fn(&Point) -> Vector + Send + Sync + 'static) -> Self {
        Self { name: name.into(), value: Arc::new(value), jacobian: None, declared_sigma: None }
    }

    pub fn with_jacobian(mut self, j: impl Fn(&Point) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(j));
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.declared_sigma = Some(sigma);
        self
    }

    pub fn zero(n: usize) -> Self {
        Self::constant(Vector::zeros(n))
    }

    pub fn constant(w: Vector) -> Self {
        let n = w.len();
        let name = format!("constant {:?}", w.as_slice());
        Self::new(name, move |_| w.clone()).with_jacobian(move |_| DMatrix::zeros(n, n)).with_sigma(0.0)
    }

    /// `W(x) = a x`; its flow scales any translation-invariant norm by `e^{a t}`.
    pub fn radial(n: usize, a: f64) -> Self {
        Self::new(format!("radial {a}"), move |p| p * a)
            .with_jacobian(move |_| DMatrix::identity(n, n) * a)
            .with_sigma(-a)
    }

    /// `W = a (-x1, x0, 0, ...)`, a rotation in the first coordinate plane.
    pub fn rotation(n: usize, a: f64) -> Self {
        Self::new(format!("rotation {a}"), move |p| {
            let mut w = Vector::zeros(n);
            w[0] = -a * p[1];
            w[1] = a * p[0];
            w
        })
        .with_jacobian(move |_| {
            let mut j = DMatrix::zeros(n, n);
            j[(0, 1)] = -a;
            j[(1, 0)] = a;
            j
        })
        .with_sigma(0.0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn declared_sigma(&self) -> Option<f64> {
        self.declared_sigma
    }

    pub fn eval(&self, p: &Point) -> Vector {
        (self.value)(p)
    }

    pub fn jacobian(&self, p: &Point) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(p),
            None => fd::try_jacobian::<std::convert::Infallible, _>(|x| Ok(self.eval(x)), p, fd::STEP_FIRST)
                .unwrap_or_else(|e| match e {}),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeOrigin {
    Riemannian,
    BusemannHausdorff,
    HolmesThompson,
    Custom,
}

/// Positive density `mu` against `dx^1 ... dx^n`.
#[derive(Clone)]
pub struct VolumeFormSpec {
    domain: ChartDomain,
    density: DensityFn,
    origin: VolumeOrigin,
}

impl fmt::Debug for VolumeFormSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VolumeFormSpec({:?})", self.origin)
    }
}

impl VolumeFormSpec {
    pub fn new(
        domain: ChartDomain,
        origin: VolumeOrigin,
        density: impl Fn(&Point) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { domain, density: Arc::new(density), origin }
    }

    pub fn euclidean(domain: ChartDomain) -> Self {
        Self::new(domain, VolumeOrigin::Riemannian, |_| Ok(1.0))
    }

    /// `sqrt(det h)`; fails for non-Riemannian metrics.
    pub fn riemannian(metric: &MetricSpec) -> Result<Self> {
        if !metric.is_riemannian() {
            return Err(GeomError::Unsupported("Riemannian volume needs a Riemannian metric".into()));
        }
        let m = metric.clone();
        Ok(Self::new(metric.domain().clone(), VolumeOrigin::Riemannian, move |p| {
            Ok(m.coefficients(p).expect("riemannian").determinant().sqrt())
        }))
    }

    pub fn busemann_hausdorff(metric: &MetricSpec) -> Self {
        let m = metric.clone();
        Self::new(metric.domain().clone(), VolumeOrigin::BusemannHausdorff, move |p| {
            crate::volume::bh_density(&m, p)
        })
    }

    /// Holmes-Thompson density estimated by Monte Carlo with common random
    /// numbers, so that nearby points see correlated estimates.
    pub fn holmes_thompson(metric: &MetricSpec, samples: usize, seed: u64) -> Self {
        let m = metric.clone();
        Self::new(metric.domain().clone(), VolumeOrigin::HolmesThompson, move |p| {
            Ok(crate::volume::ht_density_radial(&m, p, samples, seed)?.value)
        })
    }

    pub fn origin(&self) -> VolumeOrigin {
        self.origin
    }

    pub fn domain(&self) -> &ChartDomain {
        &self.domain
    }

    pub fn density(&self, p: &Point) -> Result<f64> {
        self.domain.check(p)?;
        let mu = (self.density)(p)?;
        if !(mu > 0.0) {
            return Err(GeomError::NumericBreakdown(format!("volume density {mu} is not positive")));
        }
        Ok(mu)
    }
}

/// How the gradient of a Zermelo metric is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientRoute {
    /// Riemannian inverse, navigation transfer for Zermelo, Newton for norm fields.
    #[default]
    Native,
    /// Newton on the finite-difference Legendre map of the metric itself.
    Legendre,
}

/// `grad f` at `p`; zero where `df` vanishes.
pub fn gradient_field(metric: &MetricSpec, f: &ScalarFieldSpec, p: &Point) -> Result<Vector> {
    gradient_field_via(metric, f, p, GradientRoute::Native)
}

pub fn gradient_field_via(
    metric: &MetricSpec,
    f: &ScalarFieldSpec,
    p: &Point,
    route: GradientRoute,
) -> Result<Vector> {
    metric.domain().check(p)?;
    let df = f.differential(p);
    if df.iter().all(|x| *x == 0.0) {
        return Ok(Vector::zeros(df.len()));
    }
    let res = match route {
        GradientRoute::Native => legendre_solve(metric, p, &df),
        GradientRoute::Legendre => legendre_newton(metric, p, &df),
    };
    res.map_err(|e| match e {
        GeomError::NotInImage(msg) => GeomError::NotAdmissible(format!("{} is not admissible: {msg}", f.name())),
        other => other,
    })
}

/// `(1/mu) sum_i d_i(mu X^i)` for a fallible vector field.
pub fn divergence_of(
    volume: &VolumeFormSpec,
    field: &(dyn Fn(&Point) -> Result<Vector> + Sync),
    p: &Point,
) -> Result<f64> {
    volume.domain().check(p)?;
    let mu0 = volume.density(p)?;
    let n = p.len();
    let mut acc = 0.0;
    for i in 0..n {
        let h = fd::scaled(fd::STEP_FIRST, p[i]);
        acc += fd::try_derivative(
            |t| {
                let mut q = p.clone();
                q[i] += t;
                Ok::<f64, GeomError>(volume.density(&q)? * field(&q)?[i])
            },
            0.0,
            h,
        )?;
    }
    Ok(acc / mu0)
}

pub fn divergence(volume: &VolumeFormSpec, x: &VectorFieldSpec, p: &Point) -> Result<f64> {
    divergence_of(volume, &|q| Ok(x.eval(q)), p)
}

/// Fixed-step RK4 integration of a fallible field over `[0, t]`, with a final
/// partial step.
pub fn integrate(
    field: &(dyn Fn(&Point) -> Result<Vector> + Sync),
    domain: &ChartDomain,
    p: &Point,
    t: f64,
    step: f64,
) -> Result<Point> {
    domain.check(p)?;
    if t == 0.0 {
        return Ok(p.clone());
    }
    let step = step.abs().max(1e-12) * t.signum();
    let full = (t / step).floor() as usize;
    let rest = t - full as f64 * step;
    let mut x = p.clone();
    let mut elapsed = 0.0;
    let rk4 = |x: &Point, h: f64, elapsed: f64| -> Result<Point> {
        let k1 = field(x)?;
        let k2 = field(&(x + &k1 * (h / 2.0)))?;
        let k3 = field(&(x + &k2 * (h / 2.0)))?;
        let k4 = field(&(x + &k3 * h))?;
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !domain.contains(&next) {
            return Err(GeomError::FlowLeftDomain(elapsed + h));
        }
        Ok(next)
    };
    for _ in 0..full {
        x = rk4(&x, step, elapsed)?;
        elapsed += step;
    }
    if rest.abs() > 1e-15 * t.abs() {
        x = rk4(&x, rest, elapsed)?;
    }
    Ok(x)
}

/// RK4 over `[0, t]` with a fixed number of equal steps, so the result is a
/// smooth function of `(p, t)`. No domain checks.
pub fn integrate_fixed(
    field: &(dyn Fn(&Point) -> Result<Vector> + Sync),
    p: &Point,
    t: f64,
    steps: usize,
) -> Result<Point> {
    let h = t / steps.max(1) as f64;
    let mut x = p.clone();
    for _ in 0..steps.max(1) {
        let k1 = field(&x)?;
        let k2 = field(&(&x + &k1 * (h / 2.0)))?;
        let k3 = field(&(&x + &k2 * (h / 2.0)))?;
        let k4 = field(&(&x + &k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(x)
}

/// `phi_t(p)` for the flow of `X`.
pub fn flow(x: &VectorFieldSpec, domain: &ChartDomain, p: &Point, t: f64, step: f64) -> Result<Point> {
    integrate(&|q| Ok(x.eval(q)), domain, p, t, step)
}

/// Jacobian of `q -> phi_t(q)` at `p`.
pub fn flow_jacobian(x: &VectorFieldSpec, domain: &ChartDomain, p: &Point, t: f64, step: f64) -> Result<DMatrix<f64>> {
    fd::try_jacobian(|q| flow(x, domain, q, t, step), p, 1e-4)
}

/// Time derivative at zero of `det(d phi_t) mu(phi_t p) / mu(p)`, an
/// independent estimate of the divergence.
pub fn divergence_flow_oracle(volume: &VolumeFormSpec, x: &VectorFieldSpec, p: &Point, dt: f64) -> Result<f64> {
    let domain = volume.domain();
    domain.check(p)?;
    let mu0 = volume.density(p)?;
    let step = dt.abs() / 4.0;
    let ratio = |t: f64| -> Result<f64> {
        let q = flow(x, domain, p, t, step)?;
        let j = flow_jacobian(x, domain, p, t, step)?;
        Ok(j.determinant() * volume.density(&q)? / mu0)
    };
    fd::try_derivative(ratio, 0.0, dt)
}

fn critical_check(f: &ScalarFieldSpec, p: &Point) -> Result<Vector> {
    let df = f.differential(p);
    if df.norm() < 1e-12 {
        return Err(GeomError::UndefinedAtCriticalPoint);
    }
    Ok(df)
}

/// Nonlinear Laplacian `div(grad f)`.
pub fn laplacian(metric: &MetricSpec, volume: &VolumeFormSpec, f: &ScalarFieldSpec, p: &Point) -> Result<f64> {
    laplacian_via(metric, volume, f, p, GradientRoute::Native)
}

pub fn laplacian_via(
    metric: &MetricSpec,
    volume: &VolumeFormSpec,
    f: &ScalarFieldSpec,
    p: &Point,
    route: GradientRoute,
) -> Result<f64> {
    critical_check(f, p)?;
    divergence_of(volume, &|q| gradient_field_via(metric, f, q, route), p)
}

/// `Hess f(grad f, grad f)` and its unit-normalized companion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianAlongGradient {
    pub value: f64,
    pub unit_value: f64,
    /// `F(grad f)` at the base point.
    pub grad_norm: f64,
}

/// `Hess f(grad f, grad f) = (1/2) (grad f) (F^2(grad f))`.
pub fn hessian_grad_grad(metric: &MetricSpec, f: &ScalarFieldSpec, p: &Point) -> Result<HessianAlongGradient> {
    hessian_grad_grad_via(metric, f, p, GradientRoute::Native)
}

pub fn hessian_grad_grad_via(
    metric: &MetricSpec,
    f: &ScalarFieldSpec,
    p: &Point,
    route: GradientRoute,
) -> Result<HessianAlongGradient> {
    critical_check(f, p)?;
    let grad = gradient_field_via(metric, f, p, route)?;
    let speed = grad.norm();
    let norm_sq = |q: &Point| -> Result<f64> {
        let g = gradient_field_via(metric, f, q, route)?;
        let v = metric.eval(q, &g)?;
        Ok(v * v)
    };
    let h = fd::STEP_FIRST * p.norm().max(1.0) / speed;
    let deriv = fd::try_derivative(|t| norm_sq(&(p + &grad * t)), 0.0, h)?;
    let value = 0.5 * deriv;
    let grad_norm = metric.eval(p, &grad)?;
    Ok(HessianAlongGradient { value, unit_value: value / (grad_norm * grad_norm), grad_norm })
}

/// Homothety coefficient fit for `(phi_t)^* F = e^{-sigma t} F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomothetyEstimate {
    pub sigma: f64,
    pub residual: f64,
    pub samples: usize,
}

impl HomothetyEstimate {
    pub fn require(&self, tol: f64) -> Result<f64> {
        if self.residual <= tol {
            Ok(self.sigma)
        } else {
            Err(GeomError::NotHomothetic { sigma: self.sigma, residual: self.residual })
        }
    }
}

pub const HOMOTHETY_TIMES: [f64; 2] = [1e-3, 2e-3];

/// Estimate `sigma` from `log F(d phi_t v) / F(v)` at two small times over
/// random `(p, v)`. The residual is the largest deviation of a per-sample
/// slope (or intercept) from the exponential law.
pub fn homothety_estimate(
    metric: &MetricSpec,
    w: &VectorFieldSpec,
    samples: usize,
    seed: u64,
) -> Result<HomothetyEstimate> {
    if let Some(c) = metric.wind_class() {
        if c.kind != WindKind::Mild {
            return Err(GeomError::NotRegular("homothety estimate needs a regular metric".into()));
        }
    }
    let domain = metric.domain();
    let n = metric.dimension();
    let (lo, hi) = domain.bounding_box();
    let [t1, t2] = HOMOTHETY_TIMES;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fits = Vec::new();
    let mut tries = 0;
    while fits.len() < samples.max(1) && tries < 100 * samples.max(1) {
        tries += 1;
        let p = Point::from_fn(n, |i, _| rng.random_range(lo[i]..hi[i]));
        // keep the flow well inside the chart
        let shrink = Point::from_fn(n, |i, _| {
            let c = 0.5 * (lo[i] + hi[i]);
            c + 0.9 * (p[i] - c)
        });
        if !domain.contains(&shrink) {
            continue;
        }
        let p = shrink;
        let v = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        if v.norm() < 1e-3 {
            continue;
        }
        let f0 = match metric.eval(&p, &v) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let mut logs = [0.0; 2];
        let mut ok = true;
        for (k, t) in [t1, t2].iter().enumerate() {
            let res = (|| -> Result<f64> {
                let q = flow(w, domain, &p, *t, *t)?;
                let j = flow_jacobian(w, domain, &p, *t, *t)?;
                Ok((metric.eval(&q, &(j * &v))? / f0).ln())
            })();
            match res {
                Ok(l) => logs[k] = l,
                Err(_) => ok = false,
            }
        }
        if !ok {
            continue;
        }
        let slope = -(logs[1] - logs[0]) / (t2 - t1);
        let intercept = logs[0] + slope * t1;
        fits.push((slope, intercept));
    }
    if fits.is_empty() {
        return Err(GeomError::NumericBreakdown("no admissible samples for the homothety fit".into()));
    }
    let sigma = fits.iter().map(|f| f.0).sum::<f64>() / fits.len() as f64;
    let residual = fits
        .iter()
        .map(|(s, i)| (s - sigma).abs().max(i.abs() / t1))
        .fold(0.0, f64::max);
    Ok(HomothetyEstimate { sigma, residual, samples: fits.len() })
}

/// Per-level statistics of a quantity sampled on a fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub level: f64,
    pub min: f64,
    pub max: f64,
    pub spread: f64,
    pub count: usize,
    /// Fiber points where the quantity itself failed to evaluate.
    pub failures: usize,
}

impl SpreadReport {
    pub fn from_values(level: f64, values: &[f64], failures: usize) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { level, min, max, spread: max - min, count: values.len(), failures }
    }
}

/// Points on the fiber `f = level`, found by Newton along the Euclidean
/// gradient from seeded random starts. Sample `i` uses its own RNG stream.
pub fn sample_fiber(
    f: &ScalarFieldSpec,
    domain: &ChartDomain,
    level: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<Point>> {
    let (lo, hi) = domain.bounding_box();
    let n = domain.dimension();
    let attempt = |i: usize| -> Option<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        for _ in 0..50 {
            let mut x = Point::from_fn(n, |k, _| rng.random_range(lo[k]..hi[k]));
            if !domain.contains(&x) {
                continue;
            }
            let mut landed = false;
            for _ in 0..60 {
                let r = f.value(&x) - level;
                if r.abs() <= 1e-13 * level.abs().max(1.0) {
                    landed = true;
                    break;
                }
                let g = f.differential(&x);
                let gg = g.norm_squared();
                if gg < 1e-16 {
                    break;
                }
                x -= g * (r / gg);
                if !domain.contains(&x) {
                    break;
                }
            }
            if landed && domain.contains(&x) && f.differential(&x).norm() >= 1e-8 {
                return Some(x);
            }
        }
        None
    };
    let points: Vec<Point> = (0..samples).into_par_iter().filter_map(attempt).collect();
    if points.is_empty() {
        return Err(GeomError::FiberNotFound(level));
    }
    Ok(points)
}

/// Spread of `q` on the fiber `f = level`.
pub fn projectability_spread(
    f: &ScalarFieldSpec,
    q: &(dyn Fn(&Point) -> Result<f64> + Sync),
    domain: &ChartDomain,
    level: f64,
    samples: usize,
    seed: u64,
) -> Result<SpreadReport> {
    let points = sample_fiber(f, domain, level, samples, seed)?;
    spread_on(&points, q, level)
}

pub fn spread_on(points: &[Point], q: &(dyn Fn(&Point) -> Result<f64> + Sync), level: f64) -> Result<SpreadReport> {
    let results: Vec<Result<f64>> = points.par_iter().map(|p| q(p)).collect();
    let values: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failures = results.len() - values.len();
    if values.is_empty() {
        return Err(results.into_iter().find_map(|r| r.err()).unwrap_or(GeomError::FiberNotFound(level)));
    }
    Ok(SpreadReport::from_values(level, &values, failures))
}

/// True when the metric is Zermelo with a Riemannian base.
pub fn is_randers(metric: &MetricSpec) -> bool {
    matches!(metric.kind(), MetricKind::Zermelo { base, .. } if base.is_riemannian())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn v(a: &[f64]) -> Vector {
        DVector::from_vec(a.to_vec())
    }

    fn plane() -> ChartDomain {
        ChartDomain::cube(2, 3.0)
    }

    fn randers(w: [f64; 2]) -> MetricSpec {
        MetricSpec::zermelo(MetricSpec::euclidean(plane()), VectorFieldSpec::constant(v(&w)), 64).unwrap()
    }

    #[test]
    fn zermelo_gradient_of_coordinate() {
        let z = randers([0.5, 0.0]);
        let f = ScalarFieldSpec::coordinate(2, 0);
        let p = v(&[0.2, -0.4]);
        let g = gradient_field(&z, &f, &p).unwrap();
        assert!((&g - v(&[2.25, 0.0])).norm() < 1e-12);
        assert!((z.eval(&p, &g).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_zero_at_critical_points() {
        let f = ScalarFieldSpec::norm(2);
        let g = gradient_field(&randers([0.3, 0.0]), &f, &v(&[0.0, 0.0])).unwrap();
        assert_eq!(g, v(&[0.0, 0.0]));
    }

    #[test]
    fn laplacian_undefined_at_critical_point() {
        let e = MetricSpec::euclidean(plane());
        let vol = VolumeFormSpec::euclidean(plane());
        let f = ScalarFieldSpec::norm(2);
        assert_eq!(laplacian(&e, &vol, &f, &v(&[0.0, 0.0])), Err(GeomError::UndefinedAtCriticalPoint));
    }

    #[test]
    fn divergence_of_contraction() {
        let vol = VolumeFormSpec::euclidean(ChartDomain::cube(3, 2.0));
        let w = VectorFieldSpec::radial(3, -1.0);
        let d = divergence(&vol, &w, &v(&[0.3, -0.2, 0.5])).unwrap();
        assert!((d + 3.0).abs() < 1e-10);
        let c = VectorFieldSpec::constant(v(&[1.0, 2.0, 3.0]));
        assert!(divergence(&vol, &c, &v(&[0.3, -0.2, 0.5])).unwrap().abs() < 1e-12);
    }

    #[test]
    fn flow_oracle_examples() {
        let vol = VolumeFormSpec::euclidean(plane());
        let p = v(&[0.4, 0.3]);
        let d = divergence_flow_oracle(&vol, &VectorFieldSpec::radial(2, -1.0), &p, 1e-3).unwrap();
        assert!((d + 2.0).abs() < 1e-5);
        let r = divergence_flow_oracle(&vol, &VectorFieldSpec::rotation(2, 1.0), &p, 1e-3).unwrap();
        assert!(r.abs() < 1e-5);
    }

    #[test]
    fn flow_examples() {
        let d = plane();
        let p = v(&[0.5, -0.25]);
        let q = flow(&VectorFieldSpec::radial(2, -1.0), &d, &p, 1.3, 1e-2).unwrap();
        assert!((q - &p * (-1.3f64).exp()).norm() < 1e-8);
        let c = flow(&VectorFieldSpec::constant(v(&[0.3, 0.1])), &d, &p, 0.77, 0.1).unwrap();
        assert!((c - (&p + v(&[0.3, 0.1]) * 0.77)).norm() < 1e-14);
        let r = flow(&VectorFieldSpec::rotation(2, 1.0), &d, &p, 2.0 * std::f64::consts::PI, 1e-3).unwrap();
        assert!((r - p).norm() < 1e-6);
    }

    #[test]
    fn flow_leaving_domain_is_reported() {
        let d = ChartDomain::ball(2, 1.0);
        let res = flow(&VectorFieldSpec::constant(v(&[1.0, 0.0])), &d, &v(&[0.5, 0.0]), 1.0, 0.1);
        assert!(matches!(res, Err(GeomError::FlowLeftDomain(_))));
    }

    #[test]
    fn homothety_examples() {
        let e = MetricSpec::euclidean(plane());
        let h = homothety_estimate(&e, &VectorFieldSpec::radial(2, -1.0), 16, 3).unwrap();
        assert!((h.sigma - 1.0).abs() < 1e-6 && h.residual < 1e-6, "{h:?}");
        let c = homothety_estimate(&e, &VectorFieldSpec::constant(v(&[0.3, 0.2])), 16, 3).unwrap();
        assert!(c.sigma.abs() < 1e-6);
        let r = homothety_estimate(&e, &VectorFieldSpec::rotation(2, 0.7), 16, 3).unwrap();
        assert!(r.sigma.abs() < 1e-6 && r.residual < 1e-6);
        let shear = VectorFieldSpec::new("shear", |p: &Point| v(&[p[1], 0.0]));
        let s = homothety_estimate(&e, &shear, 16, 3).unwrap();
        assert!(matches!(s.require(1e-6), Err(GeomError::NotHomothetic { .. })));
    }

    #[test]
    fn hessian_along_gradient_examples() {
        let e = MetricSpec::euclidean(plane());
        let p = v(&[0.6, -0.3]);
        let dist = hessian_grad_grad(&e, &ScalarFieldSpec::norm(2), &p).unwrap();
        assert!(dist.value.abs() < 1e-9);
        let x = hessian_grad_grad(&e, &ScalarFieldSpec::coordinate(2, 0), &p).unwrap();
        assert!(x.value.abs() < 1e-12);
        // f = |x|^2 / 2: |grad f|^2 = 2 f, so Hess(grad, grad) = b'(f) b(f) / 2 = 2 f
        let half_sq = ScalarFieldSpec::polynomial(Polynomial { terms: vec![(0.5, vec![2, 0]), (0.5, vec![0, 2])] });
        let hq = hessian_grad_grad(&e, &half_sq, &p).unwrap();
        assert!((hq.value - 2.0 * half_sq.value(&p)).abs() < 1e-9);
    }

    #[test]
    fn radial_laplacian() {
        let e = MetricSpec::euclidean(plane());
        let vol = VolumeFormSpec::euclidean(plane());
        let p = v(&[0.3, 0.4]);
        let l = laplacian(&e, &vol, &ScalarFieldSpec::norm(2), &p).unwrap();
        assert!((l - 1.0 / 0.5).abs() < 1e-8);
        let z = randers([0.5, 0.0]);
        assert!(laplacian(&z, &vol, &ScalarFieldSpec::coordinate(2, 0), &p).unwrap().abs() < 1e-10);
    }

    #[test]
    fn fiber_sampling_and_spread() {
        let d = ChartDomain::ball(2, 0.9);
        let f = ScalarFieldSpec::norm(2);
        let rep = projectability_spread(&f, &|p: &Point| Ok(p.norm_squared()), &d, 0.5, 40, 7).unwrap();
        assert!(rep.spread < 1e-9 && rep.count > 30);
        let x = ScalarFieldSpec::coordinate(2, 0);
        let rep = projectability_spread(&x, &|p: &Point| Ok(p[1]), &d, 0.1, 40, 7).unwrap();
        assert!(rep.spread > 1.0);
        assert!(matches!(sample_fiber(&f, &d, 5.0, 10, 1), Err(GeomError::FiberNotFound(_))));
    }

    #[test]
    fn fiber_sampling_is_deterministic() {
        let d = ChartDomain::ball(2, 0.9);
        let f = ScalarFieldSpec::norm(2);
        assert_eq!(sample_fiber(&f, &d, 0.4, 20, 11).unwrap(), sample_fiber(&f, &d, 0.4, 20, 11).unwrap());
    }

    #[test]
    fn polynomial_gradient_matches_fd() {
        let poly = Polynomial::random(3, 4, 9);
        let f = ScalarFieldSpec::polynomial(poly);
        let p = v(&[0.3, -0.1, 0.7]);
        assert!((f.differential(&p) - f.fd_differential(&p)).norm() < 1e-9);
    }
}
