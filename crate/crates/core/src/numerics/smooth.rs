//! Smooth (C^∞) step and bump profiles with exact derivatives up to order 3.
//!
//! Derivatives are propagated with truncated Taylor arithmetic, so cut-off
//! functions built from these profiles can be differentiated without finite
//! differences.

/// Truncated Taylor series c₀ + c₁ s + c₂ s² + c₃ s³ about a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet(pub [f64; 4]);

impl Jet {
    pub fn var(t: f64) -> Self {
        Jet([t, 1.0, 0.0, 0.0])
    }
    pub fn constant(c: f64) -> Self {
        Jet([c, 0.0, 0.0, 0.0])
    }
    pub fn add(self, o: Jet) -> Jet {
        let mut r = [0.0; 4];
        for (k, v) in r.iter_mut().enumerate() {
            *v = self.0[k] + o.0[k];
        }
        Jet(r)
    }
    pub fn scale(self, s: f64) -> Jet {
        Jet(self.0.map(|c| c * s))
    }
    pub fn mul(self, o: Jet) -> Jet {
        let mut r = [0.0; 4];
        for (k, v) in r.iter_mut().enumerate() {
            for j in 0..=k {
                *v += self.0[j] * o.0[k - j];
            }
        }
        Jet(r)
    }
    pub fn recip(self) -> Jet {
        let f = self.0;
        let mut g = [0.0; 4];
        g[0] = 1.0 / f[0];
        for k in 1..4 {
            let s: f64 = (1..=k).map(|j| f[j] * g[k - j]).sum();
            g[k] = -s * g[0];
        }
        Jet(g)
    }
    pub fn exp(self) -> Jet {
        let f = self.0;
        let mut g = [0.0; 4];
        g[0] = f[0].exp();
        for k in 1..4 {
            let s: f64 = (1..=k).map(|j| j as f64 * f[j] * g[k - j]).sum();
            g[k] = s / k as f64;
        }
        Jet(g)
    }
    /// Value and derivatives (f, f′, f″, f‴).
    pub fn derivs(self) -> [f64; 4] {
        [self.0[0], self.0[1], 2.0 * self.0[2], 6.0 * self.0[3]]
    }
}

/// exp(−1/t) for t > 0, zero otherwise.
fn psi(t: Jet) -> Jet {
    if t.0[0] <= 0.0 {
        Jet::constant(0.0)
    } else {
        t.recip().scale(-1.0).exp()
    }
}

/// Smooth step: 0 for t ≤ 0, 1 for t ≥ 1, monotone in between.
pub fn step_jet(t: Jet) -> Jet {
    let x = t.0[0];
    if x <= 0.0 {
        return Jet::constant(0.0);
    }
    if x >= 1.0 {
        return Jet::constant(1.0);
    }
    let a = psi(t);
    let b = psi(Jet::constant(1.0).add(t.scale(-1.0)));
    a.mul(a.add(b).recip())
}

/// Smooth step and its first three derivatives at `t`.
pub fn smooth_step(t: f64) -> [f64; 4] {
    step_jet(Jet::var(t)).derivs()
}

/// Unnormalised bump exp(−1/(1−t²)) on (−1, 1).
pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}
