//! Bracketed scalar root finding.

use crate::error::{Error, Result};

/// Safeguarded Newton iteration inside a sign-change bracket.
///
/// `f` returns `(value, derivative)`.  A Newton step that leaves the current
/// bracket or fails to halve it is replaced by bisection, so convergence is
/// guaranteed once `f(a)` and `f(b)` differ in sign.
pub fn newton_bisect<F>(f: F, mut a: f64, mut b: f64, xtol: f64, ftol: f64) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let (mut fa, _) = f(a);
    let (fb, _) = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoRoot(format!("no sign change on [{a}, {b}]: f = {fa:e}, {fb:e}")));
    }
    let mut x = 0.5 * (a + b);
    let mut last_width = (b - a).abs();
    for it in 0..400 {
        let (fx, dfx) = f(x);
        if fx == 0.0 || fx.abs() <= ftol {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
        }
        let width = (b - a).abs();
        if width <= xtol || width <= 4.0 * f64::EPSILON * x.abs() {
            return Ok(x);
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let newton = x - fx / dfx;
        let stalled = it % 3 == 2 && width > 0.5 * last_width;
        x = if !stalled && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (a + b)
        };
        if it % 3 == 2 {
            last_width = width;
        }
    }
    Ok(x)
}

/// Illinois (modified regula falsi) root finder for derivative-free use.
pub fn illinois<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoRoot(format!("no sign change on [{a}, {b}]")));
    }
    let mut side = 0;
    for _ in 0..300 {
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c.is_finite() && c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
        let fc = f(c);
        if fc == 0.0 || (b - a).abs() < xtol {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() < xtol {
            return Ok(0.5 * (a + b));
        }
    }
    Ok(0.5 * (a + b))
}

/// Golden-section minimisation of a unimodal function on [a, b].
pub fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_bisect_finds_cube_root() {
        let r = newton_bisect(|x| (x * x * x - 2.0, 3.0 * x * x), 0.0, 3.0, 1e-15, 1e-15).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn illinois_and_golden() {
        let r = illinois(|x: f64| x.cos() - x, 0.0, 1.0, 1e-14).unwrap();
        assert!((r.cos() - r).abs() < 1e-12);
        let (x, _) = golden_min(|x| (x - 0.3) * (x - 0.3), -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
    }
}
