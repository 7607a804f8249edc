//! Dormand–Prince 5(4) integrator with step-size control.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince stepper.  The step size carries over between calls
/// so that sampling a trajectory node by node costs little more than one
/// uninterrupted integration.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h: f64,
    pub max_steps: usize,
}

impl Dopri5 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, h: 0.0, max_steps: 200_000 }
    }

    /// Integrate `y' = f(t, y)` from `t0` to `t1`, updating `y` in place.
    pub fn integrate<F>(&mut self, mut f: F, t0: f64, y: &mut [f64], t1: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(());
        }
        let dir = span.signum();
        let mut k = vec![vec![0.0; n]; 7];
        let mut tmp = vec![0.0; n];
        let mut ynew = vec![0.0; n];
        let mut t = t0;
        if self.h <= 0.0 {
            self.h = (span.abs() * 1e-3).max(1e-12);
        }
        let mut h = self.h.min(span.abs());
        f(t, y, &mut k[0]);
        for _ in 0..self.max_steps {
            let remaining = (t1 - t) * dir;
            if remaining <= 1e-15 * span.abs().max(t1.abs()) {
                return Ok(());
            }
            let last = h >= remaining;
            let hs = if last { remaining } else { h };
            let hd = hs * dir;
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[i];
                    }
                    tmp[i] = y[i] + hd * acc;
                }
                f(t + C[s] * hd, &tmp, &mut k[s]);
            }
            let mut err = 0.0f64;
            for i in 0..n {
                ynew[i] = tmp[i];
                let mut e = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    e += E[j] * kj[i];
                }
                let sc = self.atol + self.rtol * y[i].abs().max(ynew[i].abs());
                err = err.max((hd * e / sc).abs());
            }
            if !err.is_finite() {
                h *= 0.2;
                continue;
            }
            if err <= 1.0 {
                t = if last { t1 } else { t + hd };
                y.copy_from_slice(&ynew);
                let k6 = k[6].clone();
                k[0].copy_from_slice(&k6);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                let hn = hs * fac;
                if !last {
                    h = hn;
                    self.h = hn;
                } else {
                    self.h = self.h.max(hn.min(h));
                }
            } else {
                h = hs * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
            if h < 1e-15 * t.abs().max(1.0) {
                return Err(Error::Domain(format!("step size underflow at t = {t}")));
            }
        }
        Err(Error::Domain("Dormand-Prince step limit reached".into()))
    }
}
