//! Metrics on a single chart: Riemannian coefficients, raw norm fields, and
//! Zermelo metrics built from navigation data `(F, W)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::ChartDomain;
use crate::error::{GeomError, Result};
use crate::fd;
use crate::fields::VectorFieldSpec;
use crate::{Point, Vector};

pub type CoeffFn = Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>;
pub type NormFn = Arc<dyn Fn(&Point, &Vector) -> f64 + Send + Sync>;

/// Half-width of the band around `F(-W) = 1` treated as critical wind.
pub const CRITICAL_BAND: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindKind {
    Mild,
    Critical,
    Strong,
}

/// Wind regime with the extremal witnesses `F(p, -W(p))` seen while sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindClass {
    pub kind: WindKind,
    pub witness_min: f64,
    pub witness_max: f64,
}

#[derive(Clone)]
pub enum MetricKind {
    Riemannian(CoeffFn),
    NormField(NormFn),
    Zermelo { base: Box<MetricSpec>, wind: VectorFieldSpec, class: WindClass },
}

#[derive(Clone)]
pub struct MetricSpec {
    name: String,
    domain: ChartDomain,
    kind: MetricKind,
}

impl fmt::Debug for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            MetricKind::Riemannian(_) => "Riemannian".to_string(),
            MetricKind::NormField(_) => "NormField".to_string(),
            MetricKind::Zermelo { base, wind, class } => {
                format!("Zermelo(base={}, wind={}, {:?})", base.name, wind.name(), class.kind)
            }
        };
        f.debug_struct("MetricSpec").field("name", &self.name).field("kind", &kind).finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalTensor {
    pub g: DMatrix<f64>,
    pub basepoint: Point,
    pub direction: Vector,
}

impl FundamentalTensor {
    pub fn apply(&self, u1: &Vector, u2: &Vector) -> f64 {
        u1.dot(&(&self.g * u2))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.g.clone().symmetric_eigen().eigenvalues.min()
    }
}

impl MetricSpec {
    pub fn riemannian(name: impl Into<String>, domain: ChartDomain, coeff: CoeffFn) -> Self {
        Self { name: name.into(), domain, kind: MetricKind::Riemannian(coeff) }
    }

    pub fn euclidean(domain: ChartDomain) -> Self {
        let n = domain.dimension();
        Self::riemannian("euclidean", domain, Arc::new(move |_| DMatrix::identity(n, n)))
    }

    pub fn norm_field(name: impl Into<String>, domain: ChartDomain, norm: NormFn) -> Self {
        Self { name: name.into(), domain, kind: MetricKind::NormField(norm) }
    }

    /// Zermelo metric with navigation data `(base, wind)`; the wind is
    /// classified on a lattice of `samples` points of the base domain.
    pub fn zermelo(base: MetricSpec, wind: VectorFieldSpec, samples: usize) -> Result<Self> {
        let domain = base.domain.clone();
        Self::zermelo_on(domain, base, wind, samples)
    }

    /// Zermelo metric restricted to `domain`, which should lie inside the
    /// base domain. The base keeps its own, possibly larger, domain so that
    /// base geodesics and wind flows may leave `domain`.
    pub fn zermelo_on(domain: ChartDomain, base: MetricSpec, wind: VectorFieldSpec, samples: usize) -> Result<Self> {
        if domain.dimension() != base.dimension() {
            return Err(GeomError::DimensionMismatch { expected: base.dimension(), got: domain.dimension() });
        }
        let class = classify_wind_on(&base, &wind, &domain, samples)?;
        let name = format!("zermelo({}, {})", base.name, wind.name());
        Ok(Self { name, domain, kind: MetricKind::Zermelo { base: Box::new(base), wind, class } })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &ChartDomain {
        &self.domain
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension()
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    pub fn is_riemannian(&self) -> bool {
        matches!(self.kind, MetricKind::Riemannian(_))
    }

    pub fn wind_class(&self) -> Option<WindClass> {
        match &self.kind {
            MetricKind::Zermelo { class, .. } => Some(*class),
            _ => None,
        }
    }

    /// Base metric and wind of a Zermelo metric.
    pub fn navigation_data(&self) -> Option<(&MetricSpec, &VectorFieldSpec)> {
        match &self.kind {
            MetricKind::Zermelo { base, wind, .. } => Some((base, wind)),
            _ => None,
        }
    }

    /// Riemannian coefficient matrix, if this metric is Riemannian.
    pub fn coefficients(&self, p: &Point) -> Option<DMatrix<f64>> {
        match &self.kind {
            MetricKind::Riemannian(h) => Some(h(p)),
            _ => None,
        }
    }

    /// `F(p, v)` with domain, zero-vector and cone checks.
    pub fn eval(&self, p: &Point, v: &Vector) -> Result<f64> {
        self.domain.check(p)?;
        if v.len() != self.dimension() {
            return Err(GeomError::DimensionMismatch { expected: self.dimension(), got: v.len() });
        }
        if v.iter().all(|x| *x == 0.0) {
            return Err(GeomError::ZeroVector);
        }
        self.eval_unchecked(p, v)
    }

    /// Evaluation without the domain check; `F(0) = 0`.
    pub(crate) fn eval_unchecked(&self, p: &Point, v: &Vector) -> Result<f64> {
        match &self.kind {
            MetricKind::Riemannian(h) => Ok(quad(&h(p), v).max(0.0).sqrt()),
            MetricKind::NormField(norm) => Ok(norm(p, v)),
            MetricKind::Zermelo { base, wind, .. } => {
                if v.iter().all(|x| *x == 0.0) {
                    return Ok(0.0);
                }
                zermelo_root(base, &wind.eval(p), p, v)
            }
        }
    }

    /// Covector `g_v(v, .) = (1/2) d(F^2)_v`.
    pub fn legendre_map(&self, p: &Point, v: &Vector) -> Result<Vector> {
        match &self.kind {
            MetricKind::Riemannian(h) => Ok(h(p) * v),
            _ => {
                let scale = v.norm();
                if scale == 0.0 {
                    return Err(GeomError::ZeroVector);
                }
                let unit = v / scale;
                let step = cone_safe_step(self, p, &unit, fd::STEP_FIRST)?;
                let n = v.len();
                let mut out = Vector::zeros(n);
                for i in 0..n {
                    let e = Vector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
                    out[i] = fd::try_directional(|w| half_sq(self, p, w), &unit, &e, step)?;
                }
                // degree-one homogeneity of g_v(v, .)
                Ok(out * scale)
            }
        }
    }
}

fn quad(h: &DMatrix<f64>, v: &Vector) -> f64 {
    v.dot(&(h * v))
}

fn half_sq(metric: &MetricSpec, p: &Point, v: &Vector) -> Result<f64> {
    let f = metric.eval_unchecked(p, v)?;
    Ok(0.5 * f * f)
}

/// Largest step `<= step` such that the symmetric stencil around `unit` of
/// radius `2 * step` stays inside the conic domain.
fn cone_safe_step(metric: &MetricSpec, p: &Point, unit: &Vector, step: f64) -> Result<f64> {
    if !matches!(metric.kind, MetricKind::Zermelo { .. }) {
        return Ok(step);
    }
    let n = unit.len();
    let mut h = step;
    while h > 1e-7 {
        let ok = (0..n).all(|i| {
            [-1.0, 1.0].iter().all(|s| {
                let mut w = unit.clone();
                w[i] += s * 2.0 * h;
                metric.eval_unchecked(p, &w).is_ok()
            })
        });
        if ok {
            return Ok(h);
        }
        h /= 4.0;
    }
    Err(GeomError::NumericBreakdown("finite-difference step underflow near the cone boundary".into()))
}

/// `F(p, -W(p))` over a lattice of the base domain.
pub fn classify_wind(base: &MetricSpec, wind: &VectorFieldSpec, samples: usize) -> Result<WindClass> {
    classify_wind_on(base, wind, &base.domain, samples)
}

/// `F(p, -W(p))` over a lattice of `domain`.
pub fn classify_wind_on(
    base: &MetricSpec,
    wind: &VectorFieldSpec,
    domain: &ChartDomain,
    samples: usize,
) -> Result<WindClass> {
    if matches!(base.kind, MetricKind::Zermelo { .. }) {
        return Err(GeomError::Unsupported("navigation base must be Riemannian or a norm field".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in domain.lattice(samples) {
        let w = -wind.eval(&p);
        let witness = base.eval_unchecked(&p, &w)?;
        lo = lo.min(witness);
        hi = hi.max(witness);
    }
    if !lo.is_finite() {
        return Err(GeomError::NumericBreakdown("no lattice points inside the domain".into()));
    }
    let kind = if hi < 1.0 - CRITICAL_BAND {
        WindKind::Mild
    } else if lo > 1.0 + CRITICAL_BAND {
        WindKind::Strong
    } else if (lo - 1.0).abs() < CRITICAL_BAND && (hi - 1.0).abs() < CRITICAL_BAND {
        WindKind::Critical
    } else {
        return Err(GeomError::MixedRegime { min: lo, max: hi });
    };
    Ok(WindClass { kind, witness_min: lo, witness_max: hi })
}

/// Positive-definite branch of `F(v/Z - W) = 1`.
///
/// With `s = 1/Z` along the base-unit ray, `phi(s) = F(s v - W) - 1` is
/// convex. The branch is the root where `phi` crosses zero increasing.
pub fn zermelo_root(base: &MetricSpec, w: &Vector, p: &Point, v: &Vector) -> Result<f64> {
    let fv = base.eval_unchecked(p, v)?;
    if !(fv > 0.0) {
        return Err(GeomError::ZeroVector);
    }
    let unit = v / fv;
    let phi = |s: f64| -> Result<f64> { Ok(base.eval_unchecked(p, &(&unit * s - w))? - 1.0) };
    let dphi = |s: f64| -> Result<f64> {
        let u = &unit * s - w;
        match &base.kind {
            MetricKind::Riemannian(h) => {
                let hm = h(p);
                let fu = quad(&hm, &u).sqrt();
                if fu == 0.0 {
                    return Ok(-1.0);
                }
                Ok(u.dot(&(&hm * &unit)) / fu)
            }
            _ => {
                let d = 1e-7 * s.max(1e-3);
                Ok((phi(s + d)? - phi(s - d)?) / (2.0 * d))
            }
        }
    };

    let phi0 = phi(0.0)?;
    let (lo, hi, flo, fhi);
    if phi0 < -CRITICAL_BAND {
        let mut s_hi = 1.0;
        let mut f_hi = phi(s_hi)?;
        let mut iters = 0;
        while f_hi <= 0.0 {
            s_hi *= 2.0;
            f_hi = phi(s_hi)?;
            iters += 1;
            if iters > 200 {
                return Err(GeomError::NumericBreakdown("cannot bracket Zermelo root".into()));
            }
        }
        lo = 0.0;
        flo = phi0;
        hi = s_hi;
        fhi = f_hi;
    } else {
        // critical or strong at p: locate the minimum of the convex phi first
        let mut s_hi = 1.0;
        let mut iters = 0;
        loop {
            let f_hi = phi(s_hi)?;
            if f_hi > 0.0 && f_hi > phi(0.5 * s_hi)? {
                break;
            }
            s_hi *= 2.0;
            iters += 1;
            if iters > 200 {
                return Err(GeomError::NumericBreakdown("cannot bracket Zermelo minimum".into()));
            }
        }
        let (mut a, mut b) = (0.0, s_hi);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = phi(c)?;
        let mut fd_ = phi(d)?;
        for _ in 0..120 {
            if fc < fd_ {
                b = d;
                d = c;
                fd_ = fc;
                c = b - g * (b - a);
                fc = phi(c)?;
            } else {
                a = c;
                c = d;
                fc = fd_;
                d = a + g * (b - a);
                fd_ = phi(d)?;
            }
            if (b - a) < 1e-15 * b.max(1e-300) {
                break;
            }
        }
        let s_min = 0.5 * (a + b);
        let f_min = phi(s_min)?;
        if f_min >= -1e-13 {
            return Err(GeomError::NotAdmissible("direction outside the conic domain".into()));
        }
        lo = s_min;
        flo = f_min;
        hi = s_hi;
        fhi = phi(s_hi)?;
    }
    let s = safeguarded_newton(&phi, &dphi, lo, hi, flo, fhi)?;
    if !(s > 0.0) {
        return Err(GeomError::NotAdmissible("no positive navigation time".into()));
    }
    Ok(fv / s)
}

fn safeguarded_newton(
    f: &dyn Fn(f64) -> Result<f64>,
    df: &dyn Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    flo: f64,
    fhi: f64,
) -> Result<f64> {
    debug_assert!(flo < 0.0 && fhi > 0.0);
    let _ = (flo, fhi);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = df(x)?;
        let mut next = if d > 0.0 { x - fx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || (hi - lo) <= 2e-16 * hi.abs() {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Closed-form Randers norm from Riemannian navigation data `(h, W)`:
/// the larger positive root `x = 1/Z` of `|v|^2 x^2 - 2 h(v,W) x + |W|^2 - 1 = 0`.
pub fn randers_closed_form(h: &DMatrix<f64>, w: &Vector, v: &Vector) -> Result<f64> {
    let vv = quad(h, v);
    let vw = v.dot(&(h * w));
    let ww = quad(h, w);
    let disc = vw * vw + vv * (1.0 - ww);
    if !(disc > 0.0) {
        return Err(GeomError::NotAdmissible("discriminant not positive".into()));
    }
    let denom = vw + disc.sqrt();
    if !(denom > 0.0) {
        return Err(GeomError::NotAdmissible("no positive navigation time".into()));
    }
    Ok(vv / denom)
}

/// Whether `v` lies in the open cone of the positive-definite branch at `p`.
pub fn in_conic_domain(metric: &MetricSpec, p: &Point, v: &Vector) -> Result<bool> {
    metric.domain.check(p)?;
    if v.iter().all(|x| *x == 0.0) {
        return Ok(false);
    }
    match &metric.kind {
        MetricKind::Zermelo { base, wind, .. } => {
            let z = match metric.eval_unchecked(p, v) {
                Ok(z) => z,
                Err(GeomError::NotAdmissible(_)) => return Ok(false),
                Err(e) => return Err(e),
            };
            let w = wind.eval(p);
            let u = v / z - &w;
            let gu = base.legendre_map(p, &u)?.dot(&(-&w));
            Ok(gu < 1.0)
        }
        _ => Ok(true),
    }
}

/// Half-angle, measured from the wind direction, of the admissible cone of a
/// strong wind at `p`; found by bisection in the plane of the first two axes
/// when the wind has no component outside it.
pub fn cone_half_angle(metric: &MetricSpec, p: &Point) -> Result<f64> {
    let (_, wind) = metric
        .navigation_data()
        .ok_or_else(|| GeomError::Unsupported("cone half-angle needs a Zermelo metric".into()))?;
    let w = wind.eval(p);
    let n = w.len();
    if w.rows(2, n - 2).norm() > 1e-12 * w.norm() || w.norm() == 0.0 {
        return Err(GeomError::Unsupported("wind must lie in the first coordinate plane".into()));
    }
    let base_angle = w[1].atan2(w[0]);
    let dir = |a: f64| Vector::from_fn(n, |i, _| match i {
        0 => (base_angle + a).cos(),
        1 => (base_angle + a).sin(),
        _ => 0.0,
    });
    if !in_conic_domain(metric, p, &dir(0.0))? {
        return Err(GeomError::NotAdmissible("wind direction is not admissible".into()));
    }
    if in_conic_domain(metric, p, &dir(std::f64::consts::PI))? {
        return Ok(std::f64::consts::PI);
    }
    let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if in_conic_domain(metric, p, &dir(mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fundamental tensor `g_v` at `(p, v)`.
pub fn fundamental_tensor(metric: &MetricSpec, p: &Point, v: &Vector) -> Result<FundamentalTensor> {
    metric.domain.check(p)?;
    let scale = v.norm();
    if scale == 0.0 {
        return Err(GeomError::ZeroVector);
    }
    let g = match &metric.kind {
        MetricKind::Riemannian(h) => h(p),
        _ => {
            metric.eval_unchecked(p, v)?;
            let unit = v / scale;
            let step = cone_safe_step(metric, p, &unit, fd::STEP_SECOND)?;
            let hess = fd::try_hessian(|w| half_sq(metric, p, w), &unit, step)?;
            (&hess + hess.transpose()) * 0.5
        }
    };
    Ok(FundamentalTensor { g, basepoint: p.clone(), direction: v.clone() })
}

/// Cartan tensor `C_v(u1, u2, u3)`; fully symmetric and zero for Riemannian metrics.
pub fn cartan_tensor(
    metric: &MetricSpec,
    p: &Point,
    v: &Vector,
    u1: &Vector,
    u2: &Vector,
    u3: &Vector,
) -> Result<f64> {
    metric.domain.check(p)?;
    let scale = v.norm();
    if scale == 0.0 {
        return Err(GeomError::ZeroVector);
    }
    if metric.is_riemannian() {
        return Ok(0.0);
    }
    metric.eval_unchecked(p, v)?;
    let unit = v / scale;
    let spread = u1.norm().max(u2.norm()).max(u3.norm()).max(1e-300);
    let step = cone_safe_step(metric, p, &unit, fd::STEP_THIRD * 2.0 / 3.0)?;
    let h = step / spread;
    let c = fd::try_mixed3(
        |a, b, c| {
            let w = &unit + u1 * a + u2 * b + u3 * c;
            let f = metric.eval_unchecked(p, &w)?;
            Ok(0.25 * f * f)
        },
        h,
    )?;
    // degree -1 homogeneity in v
    Ok(c / scale)
}

/// `k(v) = 1 / (1 - g^F_u(u, -W))` with `u = v/Z(v) - W`.
pub fn k_factor(metric: &MetricSpec, p: &Point, v: &Vector) -> Result<f64> {
    let (base, wind) = metric
        .navigation_data()
        .ok_or_else(|| GeomError::Unsupported("k-factor needs a Zermelo metric".into()))?;
    let z = metric.eval(p, v)?;
    let w = wind.eval(p);
    let u = v / z - &w;
    let gu = base.legendre_map(p, &u)?.dot(&(-&w));
    let denom = 1.0 - gu;
    if denom <= 0.0 {
        return Err(GeomError::BranchViolation(gu));
    }
    Ok(1.0 / denom)
}

/// Vector `v` with `g_v(v, .) = omega`.
///
/// Riemannian: `h^{-1} omega`. Zermelo: base solve followed by the
/// navigation transfer of gradients. Norm fields: damped Newton.
pub fn legendre_solve(metric: &MetricSpec, p: &Point, omega: &Vector) -> Result<Vector> {
    metric.domain.check(p)?;
    if omega.iter().all(|x| *x == 0.0) {
        return Err(GeomError::ZeroVector);
    }
    match &metric.kind {
        MetricKind::Riemannian(h) => h(p)
            .lu()
            .solve(omega)
            .ok_or_else(|| GeomError::NumericBreakdown("singular metric coefficients".into())),
        MetricKind::NormField(_) => legendre_newton(metric, p, omega),
        MetricKind::Zermelo { base, wind, .. } => {
            let base_grad = legendre_solve(base, p, omega)?;
            let fb = base.eval_unchecked(p, &base_grad)?;
            let w = wind.eval(p);
            let scale = fb + omega.dot(&w);
            if !(scale > 0.0) {
                return Err(GeomError::NotInImage(format!("navigation scale factor {scale} is not positive")));
            }
            let v = (&base_grad / fb + &w) * scale;
            match in_conic_domain(metric, p, &v)? {
                true => Ok(v),
                false => Err(GeomError::NotInImage("transferred gradient leaves the cone".into())),
            }
        }
    }
}

/// Newton iteration on `v -> g_v(v, .)` using finite-difference tensors.
/// Works for every metric variant.
pub fn legendre_newton(metric: &MetricSpec, p: &Point, omega: &Vector) -> Result<Vector> {
    metric.domain.check(p)?;
    let target = omega.norm();
    if target == 0.0 {
        return Err(GeomError::ZeroVector);
    }
    let n = omega.len();
    // seed: the tensor frozen at the covector's Euclidean direction, or any admissible axis
    let mut seeds = vec![omega / target];
    for i in 0..n {
        for s in [1.0, -1.0] {
            seeds.push(Vector::from_fn(n, |k, _| if k == i { s } else { 0.0 }));
        }
    }
    let mut v = None;
    for seed in seeds {
        if metric.eval_unchecked(p, &seed).is_err() {
            continue;
        }
        let g0 = fundamental_tensor(metric, p, &seed)?.g;
        if let Some(guess) = g0.lu().solve(omega) {
            if guess.norm() > 0.0 && metric.eval_unchecked(p, &guess).is_ok() {
                v = Some(guess);
                break;
            }
        }
    }
    let mut v = v.ok_or_else(|| GeomError::NotInImage("no admissible starting direction".into()))?;
    let residual = |v: &Vector| -> Result<Vector> { Ok(metric.legendre_map(p, v)? - omega) };
    let mut r = residual(&v)?;
    for _ in 0..60 {
        if r.norm() <= 1e-11 * target {
            return Ok(v);
        }
        let g = fundamental_tensor(metric, p, &v)?.g;
        let step = g
            .lu()
            .solve(&r)
            .ok_or_else(|| GeomError::NumericBreakdown("singular fundamental tensor".into()))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-6 {
            let cand = &v - &step * lambda;
            if cand.norm() > 0.0 && metric.eval_unchecked(p, &cand).is_ok() {
                if let Ok(rc) = residual(&cand) {
                    if rc.norm() < r.norm() {
                        v = cand;
                        r = rc;
                        accepted = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            if r.norm() <= 1e-9 * target {
                return Ok(v);
            }
            return Err(GeomError::NotInImage("Newton step cannot reduce the Legendre residual".into()));
        }
    }
    if r.norm() <= 1e-9 * target {
        Ok(v)
    } else {
        Err(GeomError::NoConvergence(format!("Legendre residual {}", r.norm())))
    }
}
