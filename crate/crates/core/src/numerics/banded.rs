//! Banded LU factorisation with partial pivoting (LAPACK `gbtrf` layout).

use crate::error::{Error, Result};

/// A square banded matrix with `kl` sub- and `ku` super-diagonals.
///
/// Storage keeps `kl` extra rows above the band for pivoting fill-in, so the
/// factorisation can run in place.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<f64>,
    norm1: f64,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self { n, kl, ku, ld, ab: vec![0.0; ld * n], norm1: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ld + (self.kl + self.ku + i - j)
    }

    /// Adds `v` to entry (i, j).  Panics if (i, j) lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j <= i + self.ku && i <= j + self.kl,
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i + self.ku || i > j + self.kl {
            0.0
        } else {
            self.ab[self.idx(i, j)]
        }
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.ab[self.idx(i, j)] * x[j];
            }
        }
        y
    }

    /// Factorises in place; returns the LU factors.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        self.norm1 = (0..n)
            .map(|j| {
                let lo = j.saturating_sub(ku);
                let hi = (j + kl).min(n - 1);
                (lo..=hi).map(|i| self.get(i, j).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max);
        let kv = ku + kl;
        let mut piv = vec![0usize; n];
        let mut min_piv = f64::INFINITY;
        let mut max_piv = 0.0f64;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = j;
            let mut best = self.ab[self.idx(j, j)].abs();
            for i in j + 1..=j + km {
                let v = self.ab[self.idx(i, j)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[j] = p;
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular { row: j, pivot: best, cond: f64::INFINITY });
            }
            min_piv = min_piv.min(best);
            max_piv = max_piv.max(best);
            let jmax = (j + kv).min(n - 1);
            if p != j {
                for c in j..=jmax {
                    let a = self.idx(j, c);
                    let b = self.idx(p, c);
                    self.ab.swap(a, b);
                }
            }
            let d = self.ab[self.idx(j, j)];
            for i in j + 1..=j + km {
                let k = self.idx(i, j);
                self.ab[k] /= d;
            }
            for c in j + 1..=jmax {
                let u = self.ab[self.idx(j, c)];
                if u != 0.0 {
                    for i in j + 1..=j + km {
                        let l = self.ab[self.idx(i, j)];
                        let k = self.idx(i, c);
                        self.ab[k] -= l * u;
                    }
                }
            }
        }
        let growth = max_piv / min_piv;
        if growth > 1e15 {
            return Err(Error::Singular { row: n, pivot: min_piv, cond: growth });
        }
        Ok(BandLu { m: self, piv, pivot_ratio: growth })
    }
}

/// LU factors of a [`BandMatrix`].
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
    /// Ratio of largest to smallest pivot, a cheap conditioning indicator.
    pub pivot_ratio: f64,
}

impl BandLu {
    pub fn solve(&self, b: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        let kv = m.kl + m.ku;
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = m.kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for i in j + 1..=j + km {
                    b[i] -= m.ab[m.idx(i, j)] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= m.ab[m.idx(j, j)];
            let bj = b[j];
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                b[i] -= m.ab[m.idx(i, j)] * bj;
            }
        }
    }

    pub fn norm1(&self) -> f64 {
        self.m.norm1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_needing_pivots() {
        let n = 6;
        let mut a = BandMatrix::zeros(n, 1, 2);
        for i in 0..n {
            a.add(i, i, if i % 2 == 0 { 1e-3 } else { 2.0 });
            if i > 0 {
                a.add(i, i - 1, 3.0);
            }
            if i + 1 < n {
                a.add(i, i + 1, -1.0);
            }
            if i + 2 < n {
                a.add(i, i + 2, 0.5);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let mut b = a.matvec(&x);
        let lu = a.factor().unwrap();
        lu.solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-12);
        }
    }
}
