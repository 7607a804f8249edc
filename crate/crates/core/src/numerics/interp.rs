//! One-dimensional interpolation on uniform grids and not-a-knot cubic splines.

use super::banded::BandMatrix;

/// Symmetry used to extend samples past an end of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    /// Mirror image: f(x0 − s) = f(x0 + s).
    Even,
    /// Point reflection: f(x0 − s) = 2 f(x0) − f(x0 + s).
    Odd,
    /// No symmetry; stencils are shifted inward at the ends.
    None,
}

/// Four-point (cubic) Lagrange interpolation of uniformly spaced samples.
///
/// `vals[k]` sits at `x0 + k h`.  With `Parity::Even`/`Odd`, ghost values are
/// produced by reflecting across the two ends, which keeps the interpolant
/// compatible with Neumann/Dirichlet walls.
pub fn cubic_uniform(vals: &[f64], x0: f64, h: f64, x: f64, parity: Parity) -> f64 {
    let n = vals.len();
    if n == 1 {
        return vals[0];
    }
    let s = ((x - x0) / h).clamp(0.0, (n - 1) as f64);
    let mut i = (s.floor() as isize).min(n as isize - 2);
    if parity == Parity::None {
        if n < 4 {
            let i = i as usize;
            let t = s - i as f64;
            return vals[i] * (1.0 - t) + vals[i + 1] * t;
        }
        i = i.clamp(1, n as isize - 3);
    }
    let t = s - i as f64;
    let get = |k: isize| -> f64 {
        let last = n as isize - 1;
        if k < 0 {
            let v = vals[(-k) as usize];
            if parity == Parity::Odd { 2.0 * vals[0] - v } else { v }
        } else if k > last {
            let v = vals[(2 * last - k) as usize];
            if parity == Parity::Odd { 2.0 * vals[last as usize] - v } else { v }
        } else {
            vals[k as usize]
        }
    };
    let (fm, f0, f1, f2) = (get(i - 1), get(i), get(i + 1), get(i + 2));
    let c_m = -t * (t - 1.0) * (t - 2.0) / 6.0;
    let c_0 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    let c_1 = -(t + 1.0) * t * (t - 2.0) / 2.0;
    let c_2 = (t + 1.0) * t * (t - 1.0) / 6.0;
    c_m * fm + c_0 * f0 + c_1 * f1 + c_2 * f2
}

/// Not-a-knot cubic spline through `(x_k, y_k)`.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        assert!(n == y.len() && n >= 2);
        if n < 4 {
            // Too few points for not-a-knot; fall back to natural conditions.
            let mut m = vec![0.0; n];
            if n == 3 {
                let h0 = x[1] - x[0];
                let h1 = x[2] - x[1];
                let rhs = 6.0 * ((y[2] - y[1]) / h1 - (y[1] - y[0]) / h0);
                m[1] = rhs / (2.0 * (h0 + h1));
            }
            return Self { x: x.to_vec(), y: y.to_vec(), m };
        }
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let mut a = BandMatrix::zeros(n, 2, 2);
        let mut b = vec![0.0; n];
        a.add(0, 0, h[1]);
        a.add(0, 1, -(h[0] + h[1]));
        a.add(0, 2, h[0]);
        for i in 1..n - 1 {
            a.add(i, i - 1, h[i - 1]);
            a.add(i, i, 2.0 * (h[i - 1] + h[i]));
            a.add(i, i + 1, h[i]);
            b[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        let (p, q) = (h[n - 3], h[n - 2]);
        a.add(n - 1, n - 3, q);
        a.add(n - 1, n - 2, -(p + q));
        a.add(n - 1, n - 1, p);
        let lu = a.factor().expect("spline system is nonsingular for distinct knots");
        lu.solve(&mut b);
        Self { x: x.to_vec(), y: y.to_vec(), m: b }
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h
            + (-(3.0 * a * a - 1.0) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }

    pub fn deriv2(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.m[i] + b * self.m[i + 1]
    }

    /// Piecewise-constant third derivative.
    pub fn deriv3(&self, t: f64) -> f64 {
        let i = self.interval(t);
        (self.m[i + 1] - self.m[i]) / (self.x[i + 1] - self.x[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_reproduces_cubics() {
        let h = 0.1;
        let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x * x;
        let v: Vec<f64> = (0..11).map(|k| f(k as f64 * h)).collect();
        for &x in &[0.0, 0.03, 0.47, 0.951, 1.0] {
            assert!((cubic_uniform(&v, 0.0, h, x, Parity::None) - f(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn spline_not_a_knot_reproduces_cubics() {
        let x: Vec<f64> = (0..9).map(|k| (k as f64 * 0.37).sin() + k as f64).collect();
        let f = |t: f64| t * t * t - t + 2.0;
        let y: Vec<f64> = x.iter().map(|&t| f(t)).collect();
        let s = CubicSpline::new(&x, &y);
        for &t in &[0.1, 1.3, 4.4, 7.9] {
            assert!((s.eval(t) - f(t)).abs() < 1e-10);
            assert!((s.deriv(t) - (3.0 * t * t - 1.0)).abs() < 1e-9);
        }
    }
}
