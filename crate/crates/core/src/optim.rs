//! Scalar (Brent) and multivariate (BFGS) maximizers.

use nalgebra::{DMatrix, DVector};

/// Result of a one-dimensional maximization.
#[derive(Debug, Clone, Copy)]
pub struct ScalarMax {
    pub x: f64,
    pub value: f64,
    pub evals: usize,
}

/// Brent's method (golden section with parabolic steps) for a maximum of `f`
/// on `[lo, hi]`.
pub fn brent_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> ScalarMax {
    const CGOLD: f64 = 0.381_966_011_250_105;
    let mut g = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let (mut a, mut b) = (lo, hi);
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut evals = 1;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = g(u);
        evals += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    ScalarMax { x, value: -fx, evals }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iters: usize,
    pub line_search_failed: bool,
}

/// Maximizes `f` by BFGS on the inverse Hessian of `-f`, starting from
/// `h0` (must be symmetric positive definite) with backtracking Armijo steps.
/// `fg` returns the value and gradient of the function being maximized.
pub fn bfgs_max<F>(mut fg: F, x0: DVector<f64>, h0: DMatrix<f64>, max_iter: usize) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut gx) = fg(&x);
    let mut h = h0;
    let mut line_search_failed = false;
    let mut iters = 0;
    if n == 0 || !fx.is_finite() {
        return BfgsResult {
            x,
            value: fx,
            iters,
            line_search_failed,
        };
    }
    for _ in 0..max_iter {
        iters += 1;
        // ascent direction for f
        let dir = &h * &gx;
        let slope = gx.dot(&dir);
        if !(slope > 1e-14 * (1.0 + fx.abs())) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            let (fc, gc) = fg(&cand);
            if fc.is_finite() && fc >= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            line_search_failed = true;
            break;
        };
        let s = &xn - &x;
        // y is the change in the gradient of -f
        let y = &gx - &gnew;
        let sy = s.dot(&y);
        let gain = fnew - fx;
        x = xn;
        fx = fnew;
        gx = gnew;
        if sy > 1e-14 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        if gain <= 1e-15 * (1.0 + fx.abs()) {
            break;
        }
    }
    BfgsResult {
        x,
        value: fx,
        iters,
        line_search_failed,
    }
}
