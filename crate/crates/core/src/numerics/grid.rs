//! Tensor grids, sampled fields and finite-difference operators.

use super::interp::{cubic_uniform, Parity};

/// Uniform tensor grid on [0, R] × [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    pub r: f64,
    pub nx1: usize,
    pub nx2: usize,
}

impl Grid2 {
    pub fn new(r: f64, nx1: usize, nx2: usize) -> Self {
        assert!(nx1 >= 2 && nx2 >= 2 && r > 0.0);
        Self { r, nx1, nx2 }
    }
    pub fn h1(&self) -> f64 {
        self.r / (self.nx1 - 1) as f64
    }
    pub fn h2(&self) -> f64 {
        2.0 / (self.nx2 - 1) as f64
    }
    pub fn x1(&self, i: usize) -> f64 {
        if i + 1 == self.nx1 { self.r } else { i as f64 * self.h1() }
    }
    pub fn x2(&self, j: usize) -> f64 {
        if j + 1 == self.nx2 { 1.0 } else { -1.0 + j as f64 * self.h2() }
    }
    pub fn x1_nodes(&self) -> Vec<f64> {
        (0..self.nx1).map(|i| self.x1(i)).collect()
    }
    pub fn x2_nodes(&self) -> Vec<f64> {
        (0..self.nx2).map(|j| self.x2(j)).collect()
    }
    pub fn len(&self) -> usize {
        self.nx1 * self.nx2
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scalar field sampled on a [`Grid2`], stored with x₂ fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2 {
    pub grid: Grid2,
    pub data: Vec<f64>,
}

impl Field2 {
    pub fn zeros(grid: &Grid2) -> Self {
        Self { grid: grid.clone(), data: vec![0.0; grid.len()] }
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: &Grid2, f: F) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for i in 0..grid.nx1 {
            let x1 = grid.x1(i);
            for j in 0..grid.nx2 {
                data.push(f(x1, grid.x2(j)));
            }
        }
        Self { grid: grid.clone(), data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.grid.nx2 + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n2 = self.grid.nx2;
        self.data[i * n2 + j] = v;
    }

    /// Values along x₂ at fixed x₁ node `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let n2 = self.grid.nx2;
        &self.data[i * n2..(i + 1) * n2]
    }

    /// Values along x₁ at fixed x₂ node `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.grid.nx1).map(|i| self.at(i, j)).collect()
    }

    /// The field on the first `nx1` x₁-nodes.
    pub fn restrict_x1(&self, nx1: usize) -> Field2 {
        let g = Grid2::new(self.grid.x1(nx1 - 1), nx1, self.grid.nx2);
        Field2 { data: self.data[..nx1 * self.grid.nx2].to_vec(), grid: g }
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self { grid: self.grid.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &Field2, f: F) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Field2) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field2) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Tensor-product cubic evaluation with the given x₂ wall parity.
    pub fn eval(&self, x1: f64, x2: f64, parity2: Parity) -> f64 {
        let g = &self.grid;
        let h1 = g.h1();
        let s = (x1 / h1).clamp(0.0, (g.nx1 - 1) as f64);
        let i0 = (s.floor() as isize - 1).clamp(0, (g.nx1 as isize - 4).max(0)) as usize;
        let i1 = (i0 + 4).min(g.nx1);
        let mut col = Vec::with_capacity(4);
        for i in i0..i1 {
            col.push(cubic_uniform(self.row(i), -1.0, g.h2(), x2, parity2));
        }
        cubic_uniform(&col, i0 as f64 * h1, h1, x1, Parity::None)
    }

    /// Evaluates every x₁ node at the given x₂ positions.
    pub fn eval_rows_at(&self, x2s: &[f64], parity2: Parity) -> Vec<Vec<f64>> {
        let g = &self.grid;
        (0..g.nx1)
            .map(|i| {
                let r = self.row(i);
                x2s.iter().map(|&y| cubic_uniform(r, -1.0, g.h2(), y, parity2)).collect()
            })
            .collect()
    }

    pub fn d1(&self) -> Field2 {
        self.apply_x1(|v, h, out| diff1(v, h, Parity::None, out))
    }
    pub fn d11(&self) -> Field2 {
        self.apply_x1(|v, h, out| diff2(v, h, Parity::None, out))
    }
    pub fn d1_4th(&self) -> Field2 {
        self.apply_x1(diff1_4th)
    }
    pub fn d2(&self, parity: Parity) -> Field2 {
        self.apply_x2(|v, h, out| diff1(v, h, parity, out))
    }
    pub fn d22(&self, parity: Parity) -> Field2 {
        self.apply_x2(|v, h, out| diff2(v, h, parity, out))
    }
    pub fn d2_4th(&self) -> Field2 {
        self.apply_x2(diff1_4th)
    }

    fn apply_x1<F: Fn(&[f64], f64, &mut [f64])>(&self, op: F) -> Field2 {
        let g = &self.grid;
        let mut out = Field2::zeros(g);
        let mut buf = vec![0.0; g.nx1];
        for j in 0..g.nx2 {
            let col = self.column(j);
            op(&col, g.h1(), &mut buf);
            for i in 0..g.nx1 {
                out.set(i, j, buf[i]);
            }
        }
        out
    }

    fn apply_x2<F: Fn(&[f64], f64, &mut [f64])>(&self, op: F) -> Field2 {
        let g = &self.grid;
        let mut out = Field2::zeros(g);
        let n2 = g.nx2;
        for i in 0..g.nx1 {
            op(self.row(i), g.h2(), &mut out.data[i * n2..(i + 1) * n2]);
        }
        out
    }

    /// Trapezoid-rule integral over the rectangle.
    pub fn integral(&self) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for i in 0..g.nx1 {
            let wi = if i == 0 || i + 1 == g.nx1 { 0.5 } else { 1.0 };
            for j in 0..g.nx2 {
                let wj = if j == 0 || j + 1 == g.nx2 { 0.5 } else { 1.0 };
                s += wi * wj * self.at(i, j);
            }
        }
        s * g.h1() * g.h2()
    }

    /// Simpson's rule in x₁ (trapezoid on the last panel when nx₁ is even),
    /// trapezoid in x₂.  The trapezoid rule is high order in x₂ for integrands
    /// whose odd x₂-derivatives vanish on the walls.
    pub fn integral_simpson_x1(&self) -> f64 {
        let g = &self.grid;
        let n = g.nx1;
        let mut wi = vec![0.0; n];
        let simpson_end = if n % 2 == 1 { n - 1 } else { n - 2 };
        for p in (0..simpson_end).step_by(2) {
            wi[p] += 1.0 / 3.0;
            wi[p + 1] += 4.0 / 3.0;
            wi[p + 2] += 1.0 / 3.0;
        }
        if simpson_end < n - 1 {
            wi[n - 2] += 0.5;
            wi[n - 1] += 0.5;
        }
        let mut s = 0.0;
        for (i, w) in wi.iter().enumerate() {
            for j in 0..g.nx2 {
                let wj = if j == 0 || j + 1 == g.nx2 { 0.5 } else { 1.0 };
                s += w * wj * self.at(i, j);
            }
        }
        s * g.h1() * g.h2()
    }

    pub fn l2(&self) -> f64 {
        self.map(|v| v * v).integral().sqrt()
    }

    /// Discrete H¹ norm: trapezoid rule for the value and its FD gradient.
    pub fn h1_norm(&self, parity2: Parity) -> f64 {
        let a = self.map(|v| v * v).integral();
        let b = self.d1().map(|v| v * v).integral();
        let c = self.d2(parity2).map(|v| v * v).integral();
        (a + b + c).sqrt()
    }
}

/// Second-order first derivative of uniformly spaced samples.
pub fn diff1(v: &[f64], h: f64, parity: Parity, out: &mut [f64]) {
    let n = v.len();
    if n < 3 {
        let d = (v[n - 1] - v[0]) / (h * (n - 1) as f64);
        out.iter_mut().for_each(|o| *o = d);
        return;
    }
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    }
    match parity {
        Parity::Even => {
            out[0] = 0.0;
            out[n - 1] = 0.0;
        }
        Parity::Odd => {
            out[0] = (v[1] - v[0]) / h;
            out[n - 1] = (v[n - 1] - v[n - 2]) / h;
        }
        Parity::None => {
            out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
            out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
        }
    }
}

/// Second-order second derivative of uniformly spaced samples.
pub fn diff2(v: &[f64], h: f64, parity: Parity, out: &mut [f64]) {
    let n = v.len();
    let h2 = h * h;
    if n < 4 && parity == Parity::None {
        let d = if n == 3 { (v[0] - 2.0 * v[1] + v[2]) / h2 } else { 0.0 };
        out.iter_mut().for_each(|o| *o = d);
        return;
    }
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2;
    }
    match parity {
        Parity::Even => {
            out[0] = 2.0 * (v[1] - v[0]) / h2;
            out[n - 1] = 2.0 * (v[n - 2] - v[n - 1]) / h2;
        }
        Parity::Odd => {
            out[0] = 0.0;
            out[n - 1] = 0.0;
        }
        Parity::None => {
            out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2;
            out[n - 1] = (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2;
        }
    }
}

/// Fourth-order first derivative with one-sided closures at both ends.
pub fn diff1_4th(v: &[f64], h: f64, out: &mut [f64]) {
    let n = v.len();
    if n < 5 {
        diff1(v, h, Parity::None, out);
        return;
    }
    let d = 12.0 * h;
    for i in 2..n - 2 {
        out[i] = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / d;
    }
    out[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / d;
    out[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / d;
    let m = n - 1;
    out[m] = (25.0 * v[m] - 48.0 * v[m - 1] + 36.0 * v[m - 2] - 16.0 * v[m - 3] + 3.0 * v[m - 4]) / d;
    out[m - 1] = (3.0 * v[m] + 10.0 * v[m - 1] - 18.0 * v[m - 2] + 6.0 * v[m - 3] - v[m - 4]) / d;
}
