//! Busemann-Hausdorff and Holmes-Thompson densities, and the navigation data
//! induced on immersed submanifolds of Randers spaces.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::fd;
use crate::metric::{fundamental_tensor, MetricKind, MetricSpec, WindKind};
use crate::{Point, Vector};

/// Angles used by the planar trapezoid rule.
pub const PLANAR_ANGLES: usize = 4096;
/// Gauss-Legendre nodes in `z` for the spherical product rule in dimension 3.
pub const SPHERE_Z_NODES: usize = 96;
/// Uniform azimuth nodes for the spherical product rule in dimension 3.
pub const SPHERE_PHI_NODES: usize = 192;
/// Direction samples for dimensions above 3.
pub const HIGH_DIM_DIRECTIONS: usize = 200_000;
pub const DEFAULT_MC_SAMPLES: usize = 200_000;
const CHUNK: usize = 4096;

/// Euclidean volume of the unit ball in dimension `n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// Nodes and weights of the `m`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        nodes[m - 1 - i] = -x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    loop {
        let v = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = v.norm();
        if r > 1e-12 {
            return v / r;
        }
    }
}

/// Mean of `phi` over the unit sphere `S^{n-1}`: exact-rule quadrature for
/// `n <= 3`, seeded Monte Carlo above.
pub fn sphere_mean(
    n: usize,
    seed: u64,
    phi: &(dyn Fn(&Vector) -> Result<f64> + Sync),
) -> Result<f64> {
    match n {
        1 => Ok(0.5 * (phi(&Vector::from_element(1, 1.0))? + phi(&Vector::from_element(1, -1.0))?)),
        2 => {
            let vals: Result<Vec<f64>> = (0..PLANAR_ANGLES)
                .into_par_iter()
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / PLANAR_ANGLES as f64;
                    phi(&Vector::from_vec(vec![a.cos(), a.sin()]))
                })
                .collect();
            Ok(vals?.iter().sum::<f64>() / PLANAR_ANGLES as f64)
        }
        3 => {
            let (z, w) = gauss_legendre(SPHERE_Z_NODES);
            let rows: Result<Vec<f64>> = (0..SPHERE_Z_NODES)
                .into_par_iter()
                .map(|i| {
                    let s = (1.0 - z[i] * z[i]).sqrt();
                    let mut acc = 0.0;
                    for k in 0..SPHERE_PHI_NODES {
                        let a = 2.0 * PI * (k as f64 + 0.5) / SPHERE_PHI_NODES as f64;
                        acc += phi(&Vector::from_vec(vec![s * a.cos(), s * a.sin(), z[i]]))?;
                    }
                    Ok(w[i] * acc / SPHERE_PHI_NODES as f64)
                })
                .collect();
            Ok(rows?.iter().sum::<f64>() / 2.0)
        }
        _ => {
            let chunks = HIGH_DIM_DIRECTIONS.div_ceil(CHUNK);
            let sums: Result<Vec<f64>> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(c as u64);
                    let count = CHUNK.min(HIGH_DIM_DIRECTIONS - c * CHUNK);
                    let mut acc = 0.0;
                    for _ in 0..count {
                        acc += phi(&random_direction(&mut rng, n))?;
                    }
                    Ok(acc)
                })
                .collect();
            Ok(sums?.iter().sum::<f64>() / HIGH_DIM_DIRECTIONS as f64)
        }
    }
}

/// Busemann-Hausdorff density of a norm on `R^n`: `vol(B^n) / vol({F < 1})`,
/// with `vol({F < 1}) = vol(B^n) * mean over the sphere of F^{-n}`.
pub fn bh_density_of_norm(n: usize, norm: &(dyn Fn(&Vector) -> Result<f64> + Sync)) -> Result<f64> {
    let mean = sphere_mean(n, 0x5eed, &|u| Ok(norm(u)?.powi(-(n as i32))))?;
    Ok(1.0 / mean)
}

/// Busemann-Hausdorff density at `p`. A Zermelo metric under critical or
/// strong wind is assigned the density of its base, and so is a mild-wind
/// Randers metric, whose unit ball is a translate of the base one; use
/// [`bh_density_quadrature`] to measure it instead.
pub fn bh_density(metric: &MetricSpec, p: &Point) -> Result<f64> {
    metric.domain().check(p)?;
    match metric.kind() {
        MetricKind::Riemannian(h) => Ok(h(p).determinant().sqrt()),
        MetricKind::Zermelo { base, class, .. } if class.kind != WindKind::Mild => bh_density(base, p),
        // a translated ellipsoid keeps its volume
        MetricKind::Zermelo { base, .. } if base.is_riemannian() => bh_density(base, p),
        _ => bh_density_of_norm(metric.dimension(), &|u| metric.eval_unchecked(p, u)),
    }
}

/// Busemann-Hausdorff density computed by quadrature even for Riemannian metrics.
pub fn bh_density_quadrature(metric: &MetricSpec, p: &Point) -> Result<f64> {
    metric.domain().check(p)?;
    bh_density_of_norm(metric.dimension(), &|u| metric.eval_unchecked(p, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HtEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

fn require_regular(metric: &MetricSpec) -> Result<()> {
    match metric.wind_class() {
        Some(c) if c.kind != WindKind::Mild => {
            Err(GeomError::NotRegular(format!("{:?} wind has no Holmes-Thompson density", c.kind)))
        }
        _ => Ok(()),
    }
}

fn det_g(metric: &MetricSpec, p: &Point, y: &Vector) -> Result<f64> {
    match metric.coefficients(p) {
        Some(h) => Ok(h.determinant()),
        None => Ok(fundamental_tensor(metric, p, y)?.g.determinant()),
    }
}

/// Holmes-Thompson density at `p` by rejection sampling: uniform points of a
/// ball enclosing the unit ball `{F_p < 1}`, weighted by `det g_y`.
pub fn ht_density(metric: &MetricSpec, p: &Point, samples: usize, seed: u64) -> Result<HtEstimate> {
    metric.domain().check(p)?;
    require_regular(metric)?;
    let n = metric.dimension();
    // enclosing ball from boundary points along a fixed direction set
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb0b);
    let probes: Vec<Vector> = (0..64 * n).map(|_| random_direction(&mut rng, n)).collect();
    let mut boundary = Vec::with_capacity(probes.len() + 2 * n);
    let axes = (0..n).flat_map(|i| {
        [1.0, -1.0].map(|s| Vector::from_fn(n, |k, _| if k == i { s } else { 0.0 }))
    });
    for u in probes.iter().cloned().chain(axes) {
        boundary.push(&u / metric.eval_unchecked(p, &u)?);
    }
    let center = boundary.iter().fold(Vector::zeros(n), |acc, b| acc + b) / boundary.len() as f64;
    let radius = 1.1 * boundary.iter().map(|b| (b - &center).norm()).fold(0.0, f64::max);
    let chunks = samples.max(1).div_ceil(CHUNK);
    let parts: Result<Vec<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let dir = random_direction(&mut rng, n);
                let rad: f64 = rng.random::<f64>().powf(1.0 / n as f64);
                let y = &center + dir * (radius * rad);
                if y.norm() == 0.0 || metric.eval_unchecked(p, &y)? >= 1.0 {
                    continue;
                }
                let d = det_g(metric, p, &y)?;
                s1 += d;
                s2 += d * d;
            }
            Ok((s1, s2))
        })
        .collect();
    let (s1, s2) = parts?.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nn = samples as f64;
    let mean = s1 / nn;
    let var = (s2 / nn - mean * mean).max(0.0);
    let scale = radius.powi(n as i32);
    Ok(HtEstimate { value: scale * mean, std_error: scale * (var / nn).sqrt(), samples })
}

/// Holmes-Thompson density at `p` by sampling directions: the integral of the
/// 0-homogeneous `det g` over `{F_p < 1}` is `vol(B^n)` times the sphere mean
/// of `F^{-n} det g`. With a fixed seed the same directions are used at every
/// `p`, so the estimate is smooth in `p`.
pub fn ht_density_radial(metric: &MetricSpec, p: &Point, samples: usize, seed: u64) -> Result<HtEstimate> {
    metric.domain().check(p)?;
    require_regular(metric)?;
    let n = metric.dimension();
    let chunks = samples.max(1).div_ceil(CHUNK);
    let parts: Result<Vec<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let u = random_direction(&mut rng, n);
                let y = metric.eval_unchecked(p, &u)?.powi(-(n as i32)) * det_g(metric, p, &u)?;
                s1 += y;
                s2 += y * y;
            }
            Ok((s1, s2))
        })
        .collect();
    let (s1, s2) = parts?.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nn = samples as f64;
    let mean = s1 / nn;
    let var = (s2 / nn - mean * mean).max(0.0);
    Ok(HtEstimate { value: mean, std_error: (var / nn).sqrt(), samples })
}

type ImmersionFn = Arc<dyn Fn(&Vector) -> Point + Send + Sync>;

/// Immersion of an open box of `R^m` into the chart.
#[derive(Clone)]
pub struct ImmersionSpec {
    name: String,
    param_lo: Vector,
    param_hi: Vector,
    ambient: usize,
    map: ImmersionFn,
}

impl fmt::Debug for ImmersionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImmersionSpec({}, {} -> {})", self.name, self.param_lo.len(), self.ambient)
    }
}

impl ImmersionSpec {
    pub fn new(
        name: impl Into<String>,
        param_lo: Vector,
        param_hi: Vector,
        ambient: usize,
        map: impl Fn(&Vector) -> Point + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), param_lo, param_hi, ambient, map: Arc::new(map) }
    }

    /// Circle of radius `r` about `center`, parametrized by angle.
    pub fn circle(center: Vector, r: f64) -> Self {
        let n = center.len();
        Self::new(format!("circle {r}"), Vector::from_element(1, -PI), Vector::from_element(1, PI), n, move |u| {
            let mut x = center.clone();
            x[0] += r * u[0].cos();
            x[1] += r * u[0].sin();
            x
        })
    }

    /// Line `p + s d`, `|s| < reach`.
    pub fn line(p: Point, d: Vector, reach: f64) -> Self {
        let n = p.len();
        Self::new("line", Vector::from_element(1, -reach), Vector::from_element(1, reach), n, move |u| &p + &d * u[0])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn param_lo(&self) -> &Vector {
        &self.param_lo
    }

    pub fn param_hi(&self) -> &Vector {
        &self.param_hi
    }

    pub fn param_dimension(&self) -> usize {
        self.param_lo.len()
    }

    pub fn ambient_dimension(&self) -> usize {
        self.ambient
    }

    pub fn contains_param(&self, u: &Vector) -> bool {
        u.len() == self.param_lo.len()
            && u.iter().zip(self.param_lo.iter().zip(self.param_hi.iter())).all(|(x, (a, b))| a < x && x < b)
    }

    fn check_param(&self, u: &Vector) -> Result<()> {
        if self.contains_param(u) {
            Ok(())
        } else {
            Err(GeomError::OutsideDomain(u.as_slice().to_vec()))
        }
    }

    pub fn eval(&self, u: &Vector) -> Result<Point> {
        self.check_param(u)?;
        Ok((self.map)(u))
    }

    /// `n x m` Jacobian whose columns span the tangent space.
    pub fn jacobian(&self, u: &Vector) -> Result<DMatrix<f64>> {
        self.check_param(u)?;
        let j = fd::try_jacobian::<GeomError, _>(|v| Ok((self.map)(v)), u, fd::STEP_FIRST)?;
        let smin = j.clone().svd(false, false).singular_values.min();
        if smin <= 1e-8 {
            return Err(GeomError::RankDeficient(smin));
        }
        Ok(j)
    }

    /// Second partials `d_a d_b i(u)`, indexed `[a][b]`.
    pub fn second_derivatives(&self, u: &Vector) -> Result<Vec<Vec<Vector>>> {
        self.check_param(u)?;
        let m = u.len();
        let h = fd::STEP_SECOND;
        let mut out = vec![vec![Vector::zeros(self.ambient); m]; m];
        for a in 0..m {
            for b in a..m {
                let d = Vector::from_fn(self.ambient, |k, _| {
                    let comp = |s: f64, t: f64| -> Result<f64> {
                        let mut v = u.clone();
                        v[a] += s;
                        v[b] += t;
                        Ok((self.map)(&v)[k])
                    };
                    if a == b {
                        fd::try_second_derivative(|s| comp(s, 0.0), 0.0, h).unwrap_or(f64::NAN)
                    } else {
                        fd::try_mixed(comp, h).unwrap_or(f64::NAN)
                    }
                });
                out[a][b] = d.clone();
                out[b][a] = d;
            }
        }
        Ok(out)
    }
}

/// Navigation data induced on an immersed submanifold of a Randers space.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedRanders {
    pub lambda: f64,
    /// `W^T` in the parameter frame.
    pub w_tan: Vector,
    /// `W^T` in chart coordinates.
    pub w_tan_ambient: Vector,
    pub w_perp: Vector,
    /// Gram matrix `J^T h J`.
    pub gram: DMatrix<f64>,
}

impl InducedRanders {
    /// The induced norm in the parameter frame, evaluated by the closed form
    /// of the Randers metric with data `(lambda * gram, w_tan)`.
    pub fn eval(&self, v: &Vector) -> Result<f64> {
        crate::metric::randers_closed_form(&(&self.gram * self.lambda), &self.w_tan, v)
    }
}

fn randers_parts(metric: &MetricSpec) -> Result<(&MetricSpec, &crate::fields::VectorFieldSpec)> {
    match metric.navigation_data() {
        Some((base, wind)) if base.is_riemannian() => {
            if metric.wind_class().map(|c| c.kind) != Some(WindKind::Mild) {
                return Err(GeomError::NotRegular("induced data needs mild wind".into()));
            }
            Ok((base, wind))
        }
        _ => Err(GeomError::Unsupported("induced data needs a Randers metric with Riemannian base".into())),
    }
}

pub fn induced_randers_data(metric: &MetricSpec, imm: &ImmersionSpec, u: &Vector) -> Result<InducedRanders> {
    let (base, wind) = randers_parts(metric)?;
    let x = imm.eval(u)?;
    metric.domain().check(&x)?;
    let h = base.coefficients(&x).expect("riemannian base");
    let j = imm.jacobian(u)?;
    let gram = j.transpose() * &h * &j;
    let w = wind.eval(&x);
    let rhs = j.transpose() * &h * &w;
    let w_tan = gram.clone().lu().solve(&rhs).ok_or(GeomError::RankDeficient(0.0))?;
    let w_tan_ambient = &j * &w_tan;
    let w_perp = &w - &w_tan_ambient;
    let lambda = 1.0 / (1.0 - w_perp.dot(&(&h * &w_perp)));
    Ok(InducedRanders { lambda, w_tan, w_tan_ambient, w_perp, gram })
}

/// `lambda^{m/2} sqrt(det(J^T h J))` in the parameter frame.
pub fn induced_bh_density(metric: &MetricSpec, imm: &ImmersionSpec, u: &Vector) -> Result<f64> {
    let d = induced_randers_data(metric, imm, u)?;
    let m = imm.param_dimension() as i32;
    Ok(d.lambda.powf(m as f64 / 2.0) * d.gram.determinant().sqrt())
}

/// Busemann-Hausdorff density of the pulled-back norm `v -> F(i(u), J v)`,
/// computed by quadrature; works for any metric.
pub fn induced_bh_quadrature(metric: &MetricSpec, imm: &ImmersionSpec, u: &Vector) -> Result<f64> {
    let x = imm.eval(u)?;
    metric.domain().check(&x)?;
    let j = imm.jacobian(u)?;
    bh_density_of_norm(imm.param_dimension(), &|v| metric.eval_unchecked(&x, &(&j * v)))
}

/// Busemann-Hausdorff density of a one-dimensional norm: the unit "ball" is
/// the interval `(-1/F(-e), 1/F(e))`.
pub fn bh_density_1d(forward: f64, backward: f64) -> f64 {
    2.0 / (1.0 / forward + 1.0 / backward)
}
