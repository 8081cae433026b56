//! Central finite differences with one level of Richardson extrapolation.
//!
//! Every stencil is evaluated at `h` and `h/2` and combined as
//! `(4 D(h/2) - D(h)) / 3`, which removes the `h^2` error term. The default
//! steps balance the remaining `h^4` truncation against rounding.

use nalgebra::{DMatrix, DVector};

/// Step for first derivatives, before scaling.
pub const STEP_FIRST: f64 = 7.4e-4; // eps^(1/5)
/// Step for second derivatives, before scaling.
pub const STEP_SECOND: f64 = 2.4e-3; // eps^(1/6)
/// Step for third derivatives, before scaling.
pub const STEP_THIRD: f64 = 5.8e-3; // eps^(1/7)

pub fn scaled(step: f64, x: f64) -> f64 {
    step * x.abs().max(1.0)
}

fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

/// First derivative of a scalar function of one variable.
pub fn derivative<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    let d = |f: &mut F, h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let coarse = d(&mut f, h);
    let fine = d(&mut f, h / 2.0);
    richardson(coarse, fine)
}

/// Fallible variant of [`derivative`].
pub fn try_derivative<E, F: FnMut(f64) -> Result<f64, E>>(mut f: F, x: f64, h: f64) -> Result<f64, E> {
    let coarse = (f(x + h)? - f(x - h)?) / (2.0 * h);
    let fine = (f(x + h / 2.0)? - f(x - h / 2.0)?) / h;
    Ok(richardson(coarse, fine))
}

/// Second derivative of a scalar function of one variable.
pub fn try_second_derivative<E, F: FnMut(f64) -> Result<f64, E>>(
    mut f: F,
    x: f64,
    h: f64,
) -> Result<f64, E> {
    let f0 = f(x)?;
    let coarse = (f(x + h)? - 2.0 * f0 + f(x - h)?) / (h * h);
    let hh = h / 2.0;
    let fine = (f(x + hh)? - 2.0 * f0 + f(x - hh)?) / (hh * hh);
    Ok(richardson(coarse, fine))
}

/// Mixed partial `d^2 f / ds dt` at `(0, 0)`.
pub fn try_mixed<E, F: FnMut(f64, f64) -> Result<f64, E>>(mut f: F, h: f64) -> Result<f64, E> {
    let mut d = |h: f64| -> Result<f64, E> {
        Ok((f(h, h)? - f(h, -h)? - f(-h, h)? + f(-h, -h)?) / (4.0 * h * h))
    };
    let coarse = d(h)?;
    let fine = d(h / 2.0)?;
    Ok(richardson(coarse, fine))
}

/// Third mixed partial `d^3 f / dr ds dt` at the origin.
pub fn try_mixed3<E, F: FnMut(f64, f64, f64) -> Result<f64, E>>(mut f: F, h: f64) -> Result<f64, E> {
    let mut d = |h: f64| -> Result<f64, E> {
        let mut acc = 0.0;
        for &a in &[1.0, -1.0] {
            for &b in &[1.0, -1.0] {
                for &c in &[1.0, -1.0] {
                    acc += a * b * c * f(a * h, b * h, c * h)?;
                }
            }
        }
        Ok(acc / (8.0 * h * h * h))
    };
    let coarse = d(h)?;
    let fine = d(h / 2.0)?;
    Ok(richardson(coarse, fine))
}

/// Directional derivative `d/dt f(x + t u)` at `t = 0`.
pub fn try_directional<E, F: FnMut(&DVector<f64>) -> Result<f64, E>>(
    mut f: F,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<f64, E> {
    try_derivative(|t| f(&(x + u * t)), 0.0, h)
}

/// Gradient by coordinate directional derivatives; `h` is scaled per axis.
pub fn try_gradient<E, F: FnMut(&DVector<f64>) -> Result<f64, E>>(
    mut f: F,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>, E> {
    let n = x.len();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let hi = scaled(h, x[i]);
        g[i] = try_derivative(
            |t| {
                let mut y = x.clone();
                y[i] += t;
                f(&y)
            },
            0.0,
            hi,
        )?;
    }
    Ok(g)
}

pub fn gradient<F: FnMut(&DVector<f64>) -> f64>(mut f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    try_gradient::<std::convert::Infallible, _>(|y| Ok(f(y)), x, h).unwrap_or_else(|e| match e {})
}

/// Jacobian of a vector map, column `j` is the derivative along axis `j`.
pub fn try_jacobian<E, F: FnMut(&DVector<f64>) -> Result<DVector<f64>, E>>(
    mut f: F,
    x: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>, E> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let hj = scaled(h, x[j]);
        let mut at = |t: f64| -> Result<DVector<f64>, E> {
            let mut y = x.clone();
            y[j] += t;
            f(&y)
        };
        let coarse = (at(hj)? - at(-hj)?) / (2.0 * hj);
        let fine = (at(hj / 2.0)? - at(-hj / 2.0)?) / hj;
        cols.push((fine * 4.0 - coarse) / 3.0);
    }
    let m = cols.first().map(|c| c.len()).unwrap_or(0);
    Ok(DMatrix::from_fn(m, n, |i, j| cols[j][i]))
}

/// Symmetric Hessian along the coordinate basis, with a common step `h`.
pub fn try_hessian<E, F: FnMut(&DVector<f64>) -> Result<f64, E>>(
    mut f: F,
    x: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>, E> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        hess[(i, i)] = try_second_derivative(
            |t| {
                let mut y = x.clone();
                y[i] += t;
                f(&y)
            },
            0.0,
            h,
        )?;
        for j in (i + 1)..n {
            let v = try_mixed(
                |s, t| {
                    let mut y = x.clone();
                    y[i] += s;
                    y[j] += t;
                    f(&y)
                },
                h,
            )?;
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}
