//! One-dimensional smooth accelerating transonic Euler–Poisson flow.
//!
//! The background velocity solves `ū′ = F(ū)` on the accelerating branch of
//! the critical trajectory `E²/2 = H(u)`, with the electric field recovered
//! as `Ē = sgn(ū − u_s)·√(2H(ū))` and the potential from `Φ̄′ = Ē`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::io::{write_columns_csv, Metadata};
use crate::numerics::ode::Dopri5;
use crate::numerics::quad::integrate;
use crate::numerics::roots::newton_bisect;

/// Relative half-width of the window around the sonic speed where `F` is
/// evaluated from its series representation.
pub const F_SWITCH: f64 = 1e-4;
/// Below this magnitude, relative to the scale `max(1, J u_s^2)` of `H`, a
/// negative `H` is treated as rounding noise.
pub const H_NEG_TOL: f64 = 1e-12;
const SERIES_RADIUS: f64 = 0.05;
const SERIES_TERMS: usize = 48;

/// Physical constants of the background flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub gamma: f64,
    pub zeta0: f64,
    pub j: f64,
    pub s0: f64,
    pub e0: f64,
}

impl PhysicalParams {
    pub fn new(gamma: f64, zeta0: f64, j: f64, s0: f64, e0: f64) -> Result<Self> {
        let finite = [gamma, zeta0, j, s0, e0].iter().all(|v| v.is_finite());
        if !finite || gamma <= 1.0 || zeta0 <= 1.0 || j <= 0.0 || s0 <= 0.0 {
            return Err(Error::Domain(format!(
                "require gamma > 1, zeta0 > 1, J > 0, S0 > 0 (got {gamma}, {zeta0}, {j}, {s0})"
            )));
        }
        if e0 > 0.0 {
            return Err(Error::Domain("accelerating branch requires E0 <= 0".into()));
        }
        let p = Self { gamma, zeta0, j, s0, e0 };
        let u0 = p.u0()?;
        if !(u0 > 0.0 && u0 <= p.u_s()) {
            return Err(Error::Domain(format!("implied u0 = {u0} not in (0, u_s]")));
        }
        Ok(p)
    }

    /// γ = 2, ζ₀ = 2, S₀ = 1, J = 1 with the given inlet field.
    pub fn canonical(e0: f64) -> Result<Self> {
        Self::new(2.0, 2.0, 1.0, 1.0, e0)
    }

    pub fn u_s(&self) -> f64 {
        (self.gamma * self.s0 * self.j.powf(self.gamma - 1.0)).powf(1.0 / (self.gamma + 1.0))
    }
    pub fn u_inf(&self) -> f64 {
        self.zeta0 * self.u_s()
    }
    pub fn rho_inf(&self) -> f64 {
        self.j / self.u_inf()
    }
    pub fn h0(&self) -> f64 {
        (self.gamma * self.s0).powf(1.0 / (self.gamma + 1.0))
    }

    /// Integrand of H: g(t) = (J/(ū∞ t^{γ+1}))(t^{γ+1} − u_s^{γ+1})(ū∞ − t).
    pub fn h_integrand(&self, t: f64) -> f64 {
        let g = self.gamma;
        let us = self.u_s();
        let ui = self.u_inf();
        // 1 − (u_s/t)^{γ+1} without cancellation near t = u_s.
        let one_minus_r = -(-(g + 1.0) * ((t - us) / us).ln_1p()).exp_m1();
        (self.j / ui) * one_minus_r * (ui - t)
    }

    /// Inlet velocity on the accelerating branch: H(u₀) = E₀²/2, u₀ ≤ u_s.
    pub fn u0(&self) -> Result<f64> {
        let us = self.u_s();
        if self.e0 == 0.0 {
            return Ok(us);
        }
        let target = 0.5 * self.e0 * self.e0;
        let mut lo = 0.5 * us;
        let mut k = 0;
        while eval_h(self, lo)? < target {
            lo *= 0.5;
            k += 1;
            if k > 200 {
                return Err(Error::NoRoot("inlet velocity bracket".into()));
            }
        }
        newton_bisect(
            |u| {
                let h = eval_h(self, u).unwrap_or(f64::NAN);
                (h - target, self.h_integrand(u))
            },
            lo,
            us,
            1e-15 * us,
            1e-15 * target.max(1e-300),
        )
    }
}

/// H(u) = ∫_{u_s}^{u} g(t) dt by adaptive quadrature.
pub fn eval_h(p: &PhysicalParams, u: f64) -> Result<f64> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::Domain(format!("H requires u > 0 (got {u})")));
    }
    integrate(|t| p.h_integrand(t), p.u_s(), u, 1e-300, 1e-14)
}

/// 𝔥(u, E) = E²/2 − H(u).
pub fn hamiltonian(p: &PhysicalParams, u: f64, e: f64) -> Result<f64> {
    Ok(0.5 * e * e - eval_h(p, u)?)
}

/// Taylor coefficients of ℱ about κ = 1: ℱ(1+d) = Σ_{k≥2} c_k d^k.
fn calf_series(p: &PhysicalParams) -> [f64; SERIES_TERMS] {
    let g = p.gamma;
    let a1 = 1.0 - 1.0 / p.zeta0;
    let da = -1.0 / p.zeta0;
    // q(s) = 1 − s^{−(γ+1)};  Q_j = q^{(j)}(1)/j! = (−1)^{j+1} C(γ+j, j).
    let mut qj = [0.0; SERIES_TERMS];
    let mut binom = 1.0;
    for j in 1..SERIES_TERMS {
        binom *= (g + j as f64) / j as f64;
        qj[j] = if j % 2 == 1 { binom } else { -binom };
    }
    let mut c = [0.0; SERIES_TERMS];
    for k in 2..SERIES_TERMS {
        let j = k - 1;
        let hj = a1 * qj[j] + da * qj[j - 1];
        c[k] = hj / k as f64;
    }
    c
}

fn calf_closed(p: &PhysicalParams, kappa: f64) -> f64 {
    let g = p.gamma;
    let z = p.zeta0;
    let d = kappa - 1.0;
    let l = d.ln_1p();
    (d - (2.0 * d + d * d) / (2.0 * z)) + (-g * l).exp_m1() / g
        + ((1.0 - g) * l).exp_m1() / (z * (1.0 - g))
}

/// ℱ(κ) = ∫₁^κ (1 − t/ζ₀)(1 − t^{−(γ+1)}) dt and ℋ(κ) = κ^{γ−1}√ℱ/|κ^{γ+1} − 1|.
pub fn kappa_functions(p: &PhysicalParams, kappa: f64) -> Result<(f64, f64)> {
    KappaFns::new(p).eval(kappa)
}

/// Precomputed series data for repeated ℱ/ℋ evaluation.
#[derive(Debug, Clone)]
pub struct KappaFns {
    pub params: PhysicalParams,
    coef: [f64; SERIES_TERMS],
}

impl KappaFns {
    pub fn new(p: &PhysicalParams) -> Self {
        Self { params: *p, coef: calf_series(p) }
    }

    /// ℱ(κ)/(κ−1)², finite at κ = 1.
    fn calf_over_d2(&self, d: f64) -> f64 {
        if d.abs() < SERIES_RADIUS {
            let mut s = 0.0;
            for k in (2..SERIES_TERMS).rev() {
                s = s * d + self.coef[k];
            }
            s
        } else {
            calf_closed(&self.params, 1.0 + d) / (d * d)
        }
    }

    pub fn calf(&self, kappa: f64) -> f64 {
        let d = kappa - 1.0;
        self.calf_over_d2(d) * d * d
    }

    pub fn eval(&self, kappa: f64) -> Result<(f64, f64)> {
        if !(kappa > 0.0) {
            return Err(Error::Domain(format!("kappa must be positive (got {kappa})")));
        }
        let g = self.params.gamma;
        let d = kappa - 1.0;
        let n = self.calf_over_d2(d);
        let f = n * d * d;
        if n < 0.0 {
            if f > -H_NEG_TOL {
                return Ok((0.0, 0.0));
            }
            return Err(Error::OutsideTrajectory(format!("F(kappa) = {f:e} < 0 at kappa = {kappa}")));
        }
        let den = if d.abs() > 1e-8 {
            ((g + 1.0) * d.ln_1p()).exp_m1() / d
        } else {
            (g + 1.0) * (1.0 + 0.5 * g * d)
        };
        let h = kappa.powf(g - 1.0) * n.sqrt() / den.abs();
        Ok((f, h))
    }

    pub fn calh(&self, kappa: f64) -> f64 {
        self.eval(kappa).map(|v| v.1).unwrap_or(f64::NAN)
    }

    /// ℋ(1) = √(1 − 1/ζ₀)/√(2(γ+1)).
    pub fn calh_at_one(&self) -> f64 {
        let p = &self.params;
        (1.0 - 1.0 / p.zeta0).sqrt() / (2.0 * (p.gamma + 1.0)).sqrt()
    }
}

/// Background model: parameters plus cached u_max and series data.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: PhysicalParams,
    pub kappa: KappaFns,
    pub u_max: f64,
}

impl Model {
    pub fn new(p: &PhysicalParams) -> Result<Self> {
        let u_max = find_umax(p)?;
        Ok(Self { params: *p, kappa: KappaFns::new(p), u_max })
    }

    /// H(u), accurate in the relative sense near both u_s and u_max.
    pub fn h(&self, u: f64) -> Result<f64> {
        let p = &self.params;
        if u > p.u_inf() {
            if u >= self.u_max {
                return integrate(|t| p.h_integrand(t), self.u_max, u, 1e-300, 1e-14);
            }
            return Ok(-integrate(|t| p.h_integrand(t), u, self.u_max, 1e-300, 1e-14)?);
        }
        eval_h(p, u)
    }

    /// F(t) = t^γ √(2H(t)) / |t^{γ+1} − u_s^{γ+1}|, regularised near u_s.
    pub fn f(&self, t: f64) -> Result<f64> {
        let p = &self.params;
        let us = p.u_s();
        if !(t > 0.0) {
            return Err(Error::Domain(format!("F requires t > 0 (got {t})")));
        }
        if (t - us).abs() < F_SWITCH * us {
            let k = t / us;
            let h = self.kappa.eval(k)?.1;
            return Ok((2.0 * p.j * us).sqrt() / us * k * h);
        }
        let h = self.h(t)?;
        if h < -H_NEG_TOL * (p.j * us * us).max(1.0) {
            return Err(Error::OutsideTrajectory(format!("H({t}) = {h:e} < 0")));
        }
        let g = p.gamma;
        Ok(t.powf(g) * (2.0 * h.max(0.0)).sqrt() / (t.powf(g + 1.0) - us.powf(g + 1.0)).abs())
    }

    /// F(u_max − s²) with H integrated over the offset r = u_max − t ∈ [0, s²],
    /// so H keeps full relative accuracy when u_max − s² rounds to u_max.
    fn f_below_max(&self, s: f64) -> Result<f64> {
        let p = &self.params;
        let r = s * s;
        let t = self.u_max - r;
        if t < p.u_inf() {
            return self.f(t);
        }
        let h = integrate(|q| -p.h_integrand(self.u_max - q), 0.0, r, 1e-300, 1e-14)?;
        let g = p.gamma;
        Ok(t.powf(g) * (2.0 * h.max(0.0)).sqrt() / (t.powf(g + 1.0) - p.u_s().powf(g + 1.0)).abs())
    }

    /// Ē on the accelerating branch.
    pub fn e_of_u(&self, u: f64) -> Result<f64> {
        let us = self.params.u_s();
        if u == us {
            return Ok(0.0);
        }
        let h = self.h(u)?.max(0.0);
        Ok((u - us).signum() * (2.0 * h).sqrt())
    }

    /// Φ̄(0) = u₀²/2 + γS₀/(γ−1)·(J/u₀)^{γ−1}.
    pub fn phi0(&self, u0: f64) -> f64 {
        let p = &self.params;
        0.5 * u0 * u0 + p.gamma * p.s0 / (p.gamma - 1.0) * (p.j / u0).powf(p.gamma - 1.0)
    }

    /// ∫_{a}^{b} dt/F(t), the x₁-distance between velocities a < b.
    pub fn distance(&self, a: f64, b: f64) -> Result<f64> {
        if !(a < b) {
            return Ok(0.0);
        }
        let p = &self.params;
        let us = p.u_s();
        let split = p.u_inf().min(0.5 * (us + self.u_max));
        let mut total = 0.0;
        let lo_end = b.min(split);
        if a < lo_end {
            let mut pts = vec![a];
            if a < us && us < lo_end {
                pts.push(us);
            }
            pts.push(lo_end);
            for w in pts.windows(2) {
                total += integrate(|t| 1.0 / self.f(t).unwrap_or(f64::NAN), w[0], w[1], 1e-300, 1e-13)?;
            }
        }
        if b > split {
            let a2 = a.max(split);
            // t = u_max − s² removes the inverse-square-root endpoint singularity.
            let s_hi = (self.u_max - a2).max(0.0).sqrt();
            let s_lo = (self.u_max - b).max(0.0).sqrt();
            total += integrate(
                |s| 2.0 * s / self.f_below_max(s.max(1e-150)).unwrap_or(f64::NAN),
                s_lo,
                s_hi,
                1e-300,
                1e-13,
            )?;
        }
        if !total.is_finite() {
            return Err(Error::Quadrature("distance integral not finite".into()));
        }
        Ok(total)
    }
}

/// F(t) as a free function.
pub fn eval_f(p: &PhysicalParams, t: f64) -> Result<f64> {
    Model::new(p)?.f(t)
}

/// The unique root of H on (ū∞, ∞).
pub fn find_umax(p: &PhysicalParams) -> Result<f64> {
    let ui = p.u_inf();
    let mut lo = ui;
    let mut hi = 2.0 * ui;
    let mut h_hi = eval_h(p, hi)?;
    while h_hi > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 * ui {
            return Err(Error::NoRoot("H has no root below 1e6 * u_inf".into()));
        }
        h_hi = eval_h(p, hi)?;
    }
    let scale = eval_h(p, ui)?.max(1e-300);
    newton_bisect(
        |u| (eval_h(p, u).unwrap_or(f64::NAN), p.h_integrand(u)),
        lo,
        hi,
        1e-15 * ui,
        1e-15 * scale.min(1.0),
    )
}

/// Sampled background trajectory on a uniform grid of [0, x1_max].
#[derive(Debug, Clone)]
pub struct BackgroundState {
    pub model: Model,
    pub u0: f64,
    pub x1_grid: Vec<f64>,
    pub u1: Vec<f64>,
    pub e: Vec<f64>,
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
    pub ell_s: f64,
    pub l_max: f64,
    pub u_max: f64,
}

/// Pointwise background data.
#[derive(Debug, Clone, Copy)]
pub struct BgPoint {
    pub u: f64,
    pub du: f64,
    pub e: f64,
    pub rho: f64,
    pub phi: f64,
}

const RTOL: f64 = 1e-13;
const ATOL: f64 = 1e-15;

impl BackgroundState {
    pub fn params(&self) -> &PhysicalParams {
        &self.model.params
    }

    pub fn length(&self) -> f64 {
        *self.x1_grid.last().unwrap()
    }

    /// Writes `x1,u1,E,rho,Phi`, one row per node.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_columns_csv(w, &["x1", "u1", "E", "rho", "Phi"], &[&self.x1_grid, &self.u1, &self.e, &self.rho, &self.phi])
    }

    /// Parameters, ℓ_s, l_max and integrator tolerances for the sidecar file.
    pub fn metadata(&self) -> Metadata {
        let p = self.params();
        let mut m = Metadata::new();
        m.set_f64("gamma", p.gamma)
            .set_f64("zeta0", p.zeta0)
            .set_f64("J", p.j)
            .set_f64("S0", p.s0)
            .set_f64("u0", self.u0)
            .set_f64("u_s", p.u_s())
            .set_f64("ell_s", self.ell_s)
            .set_f64("l_max", self.l_max)
            .set_f64("u_max", self.u_max)
            .set_f64("length", self.length())
            .set("nodes", self.x1_grid.len())
            .set_f64("ode_rtol", RTOL)
            .set_f64("ode_atol", ATOL)
            .set_f64("f_switch", F_SWITCH);
        m
    }

    /// Background data at an arbitrary x₁ by integrating from the nearest node.
    pub fn eval_at(&self, x: f64) -> Result<BgPoint> {
        let n = self.x1_grid.len();
        let h = self.length() / (n - 1) as f64;
        let i = ((x / h).round() as isize).clamp(0, n as isize - 1) as usize;
        let mut y = [self.u1[i], self.phi[i]];
        let xi = self.x1_grid[i];
        if x != xi {
            let mut ode = Dopri5::new(RTOL, ATOL);
            ode.h = (x - xi).abs() * 0.5;
            let m = &self.model;
            let umax = self.u_max;
            ode.integrate(
                |_, y, dy| {
                    let u = y[0].min(umax);
                    dy[0] = m.f(u).unwrap_or(0.0);
                    dy[1] = m.e_of_u(u).unwrap_or(0.0);
                },
                xi,
                &mut y,
                x,
            )?;
        }
        self.point(y[0].min(self.u_max), Some(y[1]))
    }

    fn point(&self, u: f64, phi: Option<f64>) -> Result<BgPoint> {
        let m = &self.model;
        let p = m.params;
        let e = m.e_of_u(u)?;
        let phi = match phi {
            Some(v) => v,
            None => 0.5 * u * u + p.gamma * p.s0 / (p.gamma - 1.0) * (p.j / u).powf(p.gamma - 1.0),
        };
        Ok(BgPoint { u, du: m.f(u)?, e, rho: p.j / u, phi })
    }

    /// ū′ at node i.
    pub fn du_at(&self, i: usize) -> f64 {
        self.model.f(self.u1[i]).unwrap_or(0.0)
    }
}

/// Integrates the background from `u0` over `[0, x1_max]` with `nx` nodes.
pub fn integrate_background(p: &PhysicalParams, u0: f64, x1_max: f64, nx: usize) -> Result<BackgroundState> {
    let model = Model::new(p)?;
    integrate_background_with(&model, u0, x1_max, nx)
}

pub fn integrate_background_with(model: &Model, u0: f64, x1_max: f64, nx: usize) -> Result<BackgroundState> {
    let p = model.params;
    let us = p.u_s();
    if !(u0 > 0.0 && u0 < model.u_max) {
        return Err(Error::Domain(format!("u0 = {u0} outside (0, u_max = {})", model.u_max)));
    }
    if nx < 2 || !(x1_max > 0.0) {
        return Err(Error::Domain("need nx >= 2 and x1_max > 0".into()));
    }
    let l_max = model.distance(u0, model.u_max)?;
    if x1_max > l_max * (1.0 + 1e-12) {
        return Err(Error::Extent { requested: x1_max, l_max });
    }
    let ell_s = if u0 < us { model.distance(u0, us)? } else { 0.0 };
    let h = x1_max / (nx - 1) as f64;
    let mut x1_grid = Vec::with_capacity(nx);
    let mut u1 = Vec::with_capacity(nx);
    let mut phi = Vec::with_capacity(nx);
    let mut y = [u0, model.phi0(u0)];
    let mut ode = Dopri5::new(RTOL, ATOL);
    let umax = model.u_max;
    let stop = 1e-10 * us;
    for i in 0..nx {
        let x = if i + 1 == nx { x1_max } else { i as f64 * h };
        if i > 0 {
            let x_prev = x1_grid[i - 1];
            if umax - y[0] < stop {
                // Terminal parabola u_max − u ≈ (c(l_max − x)/2)².
                y[0] = umax;
            } else {
                ode.integrate(
                    |_, y, dy| {
                        let u = y[0].min(umax);
                        dy[0] = model.f(u).unwrap_or(0.0);
                        dy[1] = model.e_of_u(u).unwrap_or(0.0);
                    },
                    x_prev,
                    &mut y,
                    x,
                )?;
                y[0] = y[0].min(umax);
            }
        }
        x1_grid.push(x);
        u1.push(y[0]);
        phi.push(y[1]);
    }
    let mut e = Vec::with_capacity(nx);
    for &u in &u1 {
        e.push(model.e_of_u(u)?);
    }
    let rho = u1.iter().map(|&u| p.j / u).collect();
    Ok(BackgroundState { model: model.clone(), u0, x1_grid, u1, e, rho, phi, ell_s, l_max, u_max: umax })
}

/// Nozzle length √(h₀³/2)·J^{(γ−2)/(γ+1)}·∫_{κ₀}^{κ_L} dκ/(κℋ(κ)).
pub fn nozzle_length(p: &PhysicalParams, kappa0: f64, kappa_l: f64) -> Result<f64> {
    let g = p.gamma;
    let i = kappa_integral(p, kappa0, kappa_l)?;
    Ok((p.h0().powi(3) / 2.0).sqrt() * p.j.powf((g - 2.0) / (g + 1.0)) * i)
}

/// λ(κ₀, κ_L) = (∫ dκ/(κℋ))².
pub fn lambda_kappa(p: &PhysicalParams, kappa0: f64, kappa_l: f64) -> Result<f64> {
    Ok(kappa_integral(p, kappa0, kappa_l)?.powi(2))
}

fn kappa_integral(p: &PhysicalParams, k0: f64, kl: f64) -> Result<f64> {
    if !(k0 > 0.0) || kl < k0 {
        return Err(Error::Domain(format!("need 0 < kappa0 <= kappaL (got {k0}, {kl})")));
    }
    if k0 == kl {
        return Ok(0.0);
    }
    let kf = KappaFns::new(p);
    let kmax = find_umax(p)? / p.u_s();
    if kl > kmax * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("kappaL = {kl} beyond trajectory end {kmax}")));
    }
    let f = |k: f64| 1.0 / (k * kf.calh(k));
    let split = (1.0 + p.zeta0) * 0.5;
    if kl <= split {
        return integrate(f, k0, kl, 1e-300, 1e-13);
    }
    // Near κ_max, ℋ vanishes like a square root; substitute κ = κ_max − s².
    let mut total = 0.0;
    if k0 < split {
        total += integrate(f, k0, split, 1e-300, 1e-13)?;
    }
    let a = k0.max(split);
    let s_hi = (kmax - a).max(0.0).sqrt();
    let s_lo = (kmax - kl).max(0.0).sqrt();
    total += integrate(|s| 2.0 * s * f(kmax - s * s), s_lo, s_hi, 1e-300, 1e-13)?;
    Ok(total)
}
