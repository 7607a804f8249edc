//! Linearised Euler–Poisson problem about the background flow.
//!
//! For a perturbation state P = (φ, ψ, Ψ) and entropy perturbation T the
//! velocity is v = ∇φ̄ + ∇ψ + ∇⊥φ with ∇⊥φ = (∂₂φ, −∂₁φ), and the
//! Bernoulli quantity is B = Φ̄ + Ψ − |v|²/2.  With
//!
//!   A_ij = (γ−1)B δ_ij − v_i v_j
//!
//! the coupled system for (v, w) reads
//!
//!   𝔏₁(v, w) = a₁₁ ∂₁₁v + 2a₁₂ ∂₁₂v + ∂₂₂v + a ∂₁v + b₁ ∂₁w + b₀ w = f₁,
//!   𝔏₂(v, w) = Δw − c₀ w − c₁ ∂₁v = f₂,
//!
//! with a_ij = A_ij/A₂₂, v = 0 and ∂₁w = 0 at the inlet, w = 0 at the exit
//! and homogeneous Neumann data on the walls.  The first equation is of
//! Keldysh type: a₁₁ − a₁₂² changes sign across the sonic interface.

use std::io::Write;

use crate::background::{lambda_kappa, BackgroundState, KappaFns, PhysicalParams};
use crate::error::{Error, Result};
use crate::galerkin::{continuation_solve, solve_on_field, Schedule, SpectralBasis};
use crate::io::{write_columns_csv, write_grid_csv};
use crate::keldysh::KeldyshField;
use crate::numerics::banded::BandMatrix;
use crate::numerics::grid::{Field2, Grid2};
use crate::numerics::interp::{cubic_uniform, Parity};
use crate::numerics::roots::{golden_min, illinois};

/// Default bound on |Ψ|, |∇ψ| and |∇φ|.
pub const DEFAULT_D0: f64 = 0.05;

/// Background quantities at the x₁ nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundColumns {
    pub x1: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub e: Vec<f64>,
    pub rho: Vec<f64>,
}

impl BackgroundColumns {
    /// Reads the background at the x₁ nodes of `grid`, reusing the stored
    /// trajectory when the nodes coincide.
    pub fn sample(bg: &BackgroundState, grid: &Grid2) -> Result<Self> {
        let len = bg.length();
        if grid.r > len * (1.0 + 1e-12) {
            return Err(Error::Domain(format!("grid length {} exceeds the background length {len}", grid.r)));
        }
        let x1 = grid.x1_nodes();
        if bg.x1_grid.len() == grid.nx1 && (grid.r - len).abs() <= 1e-12 * len {
            let du = (0..grid.nx1).map(|i| bg.du_at(i)).collect();
            return Ok(Self { x1, u: bg.u1.clone(), du, e: bg.e.clone(), rho: bg.rho.clone() });
        }
        let mut out = Self { x1: x1.clone(), u: vec![], du: vec![], e: vec![], rho: vec![] };
        for &x in &x1 {
            let p = bg.eval_at(x)?;
            out.u.push(p.u);
            out.du.push(p.du);
            out.e.push(p.e);
            out.rho.push(p.rho);
        }
        Ok(out)
    }
}

/// Perturbation state P = (φ, ψ, Ψ) on Ω_L.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub phi: Field2,
    pub psi: Field2,
    pub big_psi: Field2,
}

impl Perturbation {
    pub fn zeros(grid: &Grid2) -> Self {
        Self { phi: Field2::zeros(grid), psi: Field2::zeros(grid), big_psi: Field2::zeros(grid) }
    }

    pub fn grid(&self) -> &Grid2 {
        &self.phi.grid
    }
}

/// Coefficients and sources of the linearised problem for a given (P, T).
#[derive(Debug, Clone)]
pub struct LinearizedCoefficients {
    pub grid: Grid2,
    pub params: PhysicalParams,
    pub a11: Field2,
    pub a12: Field2,
    pub a: Field2,
    pub b1: Field2,
    pub b0: Field2,
    pub c0: Field2,
    pub c1: Field2,
    /// A₂₂ before normalisation.
    pub big_a22: Field2,
    pub f0: Field2,
    pub f1: Field2,
    pub f2: Field2,
    pub f3: Field2,
    pub state: Perturbation,
    pub t: Field2,
    pub ell_s: f64,
    /// ā₁₁(5ℓ_s/8).
    pub lambda0: f64,
    /// Lower bound γS₀J^{γ−1}/(2u_max^{γ−1}) for A₂₂.
    pub a22_floor: f64,
}

fn field_max(f: &Field2) -> f64 {
    f.max_abs()
}

/// Builds the coefficient and source fields for the perturbation `state` and
/// entropy perturbation `t`, after checking the smallness conditions with bound `d0`.
pub fn build_coefficients(bg: &BackgroundState, state: &Perturbation, t: &Field2, d0: f64) -> Result<LinearizedCoefficients> {
    let grid = state.grid().clone();
    if state.psi.grid != grid || state.big_psi.grid != grid || t.grid != grid {
        return Err(Error::Domain("perturbation fields live on different grids".into()));
    }
    let p = *bg.params();
    let (g, s0, j) = (p.gamma, p.s0, p.j);
    let cols = BackgroundColumns::sample(bg, &grid)?;

    let phi1 = state.phi.d1();
    let phi2 = state.phi.d2(Parity::Odd);
    let phi11 = state.phi.d11();
    let phi12 = phi2.d1();
    let phi22 = state.phi.d22(Parity::Odd);
    let p1 = state.psi.d1();
    let p2 = state.psi.d2(Parity::Even);
    let r1 = state.big_psi.d1();
    let r2 = state.big_psi.d2(Parity::Even);
    let t2 = t.d2(Parity::None);

    let zmax = field_max(&state.big_psi);
    if zmax > d0 {
        return Err(Error::Admissibility(format!("|Psi| = {zmax:e} exceeds d0 = {d0}")));
    }
    let dpsi = p1.zip_map(&p2, f64::hypot).max_abs();
    if dpsi > d0 {
        return Err(Error::Admissibility(format!("|grad psi| = {dpsi:e} exceeds d0 = {d0}")));
    }
    let dphi = phi1.zip_map(&phi2, f64::hypot).max_abs();
    if dphi > d0 {
        return Err(Error::Admissibility(format!("|grad phi| = {dphi:e} exceeds d0 = {d0}")));
    }
    let tmax = field_max(t);
    if tmax > 0.5 * s0 {
        return Err(Error::Admissibility(format!("|T| = {tmax:e} exceeds S0/2 = {}", 0.5 * s0)));
    }

    let a22_floor = g * s0 * j.powf(g - 1.0) / (2.0 * bg.u_max.powf(g - 1.0));
    let mut out = LinearizedCoefficients {
        grid: grid.clone(),
        params: p,
        a11: Field2::zeros(&grid),
        a12: Field2::zeros(&grid),
        a: Field2::zeros(&grid),
        b1: Field2::zeros(&grid),
        b0: Field2::zeros(&grid),
        c0: Field2::zeros(&grid),
        c1: Field2::zeros(&grid),
        big_a22: Field2::zeros(&grid),
        f0: Field2::zeros(&grid),
        f1: Field2::zeros(&grid),
        f2: Field2::zeros(&grid),
        f3: Field2::zeros(&grid),
        state: state.clone(),
        t: t.clone(),
        ell_s: bg.ell_s,
        lambda0: 0.0,
        a22_floor,
    };
    let rho_tilde = |s: f64, b: f64| ((g - 1.0) * b / (g * (s0 + s))).powf(1.0 / (g - 1.0));
    let u0_half = 0.5 * bg.u0;

    for i in 0..grid.nx1 {
        let (u, du, e, rho) = (cols.u[i], cols.du[i], cols.e[i], cols.rho[i]);
        let bbar = g * s0 / (g - 1.0) * rho.powf(g - 1.0);
        let c0 = rho.powf(2.0 - g) / (g * s0);
        let c1 = -u * c0;
        let e_shift = e - (g + 1.0) * du * u;
        for jx in 0..grid.nx2 {
            let q1 = phi2.at(i, jx);
            let q2 = -phi1.at(i, jx);
            let s1 = p1.at(i, jx) + q1;
            let s2 = p2.at(i, jx) + q2;
            let z = state.big_psi.at(i, jx);
            let v1 = u + s1;
            let v2 = s2;
            if v1 < u0_half {
                return Err(Error::Admissibility(format!(
                    "v1 = {v1:e} below u0/2 = {u0_half:e} at node ({i}, {jx})"
                )));
            }
            let b = bbar + z - (u * s1 + 0.5 * (s1 * s1 + s2 * s2));
            let a11 = (g - 1.0) * b - v1 * v1;
            let a12 = -v1 * v2;
            let a22 = (g - 1.0) * b - v2 * v2;
            if !(a22 >= a22_floor) {
                return Err(Error::Admissibility(format!(
                    "A22 = {a22:e} below the positivity floor {a22_floor:e} at node ({i}, {jx})"
                )));
            }
            let (m11, m12, m22) = (phi12.at(i, jx), phi11.at(i, jx), phi22.at(i, jx));
            // vᵀ𝕄v with 𝕄 = [[φ₁₂, −φ₁₁], [φ₂₂, −φ₁₂]].
            let vmv = m11 * (v1 * v1 - v2 * v2) + (m22 - m12) * v1 * v2;
            let q_1 = 0.5 * (g + 1.0) * du * s1 * s1 + 0.5 * (g - 1.0) * du * s2 * s2
                - (r1.at(i, jx) * s1 + r2.at(i, jx) * s2);
            let r_1 = vmv - e_shift * q1;
            let tt = t.at(i, jx);
            let f3 = b * t2.at(i, jx) / (g * (s0 + tt) * v1);
            let f2 = rho_tilde(tt, b) - rho_tilde(0.0, bbar) - c0 * z - c1 * p1.at(i, jx);

            out.a11.set(i, jx, a11 / a22);
            out.a12.set(i, jx, a12 / a22);
            out.a.set(i, jx, e_shift / a22);
            out.b1.set(i, jx, u / a22);
            out.b0.set(i, jx, (g - 1.0) * du / a22);
            out.c0.set(i, jx, c0);
            out.c1.set(i, jx, c1);
            out.big_a22.set(i, jx, a22);
            out.f1.set(i, jx, (q_1 + r_1) / a22);
            out.f2.set(i, jx, f2);
            out.f3.set(i, jx, f3);
            out.f0.set(i, jx, f3);
        }
    }
    if bg.ell_s > 0.0 {
        let us = p.u_s();
        let ub = bg.eval_at(0.625 * bg.ell_s)?.u;
        out.lambda0 = 1.0 - (ub / us).powf(g + 1.0);
    }
    Ok(out)
}

impl LinearizedCoefficients {
    /// (a₁₁, a₁₂, a) as a Keldysh coefficient field of regularity order 4.
    pub fn keldysh_field(&self) -> Result<KeldyshField> {
        KeldyshField::new(self.a11.clone(), self.a12.clone(), self.a.clone(), 4)
    }

    /// 𝔏₁(v, w) by second-order differences.
    pub fn apply_l1(&self, v: &Field2, w: &Field2) -> Field2 {
        let v1 = v.d1();
        let v11 = v.d11();
        let v12 = v.d2(Parity::Even).d1();
        let v22 = v.d22(Parity::Even);
        let w1 = w.d1();
        let mut out = Field2::zeros(&self.grid);
        for k in 0..out.data.len() {
            out.data[k] = self.a11.data[k] * v11.data[k]
                + 2.0 * self.a12.data[k] * v12.data[k]
                + v22.data[k]
                + self.a.data[k] * v1.data[k]
                + self.b1.data[k] * w1.data[k]
                + self.b0.data[k] * w.data[k];
        }
        out
    }

    /// 𝔏₂(v, w) by second-order differences.
    pub fn apply_l2(&self, v: &Field2, w: &Field2) -> Field2 {
        let lap = w.d11().add(&w.d22(Parity::Even));
        let v1 = v.d1();
        let mut out = lap;
        for k in 0..out.data.len() {
            out.data[k] -= self.c0.data[k] * w.data[k] + self.c1.data[k] * v1.data[k];
        }
        out
    }

    /// a₁₁ − a₁₂².
    pub fn det(&self) -> Field2 {
        self.a11.zip_map(&self.a12, |a, b| a - b * b)
    }

    /// Smallest eigenvalue of [[a₁₁, a₁₂], [a₁₂, 1]] over x₁ ≤ `x1_max`.
    pub fn ellipticity_min(&self, x1_max: f64) -> f64 {
        let cut = x1_max;
        let mut m = f64::INFINITY;
        for i in (0..self.grid.nx1).filter(|&i| self.grid.x1(i) <= cut) {
            for jx in 0..self.grid.nx2 {
                let (a, b) = (self.a11.at(i, jx), self.a12.at(i, jx));
                let lam = 0.5 * (a + 1.0) - (0.25 * (a - 1.0) * (a - 1.0) + b * b).sqrt();
                m = m.min(lam);
            }
        }
        m
    }

    /// True when the ellipticity bound λ₀/2 holds on x₁ ≤ 5ℓ_s/8.
    ///
    /// Beyond 5ℓ_s/8 the background ā₁₁ itself drops below λ₀ and, for a
    /// nearly linear profile, reaches λ₀/3 at 7ℓ_s/8.
    pub fn is_elliptic_near_inlet(&self) -> bool {
        self.ellipticity_min(0.625 * self.ell_s) >= 0.5 * self.lambda0
    }

    /// λ₁ = −max a₁₁ over x₁ ≥ L − (L − ℓ_s)/10; positive when the exit is hyperbolic.
    pub fn exit_hyperbolicity(&self) -> f64 {
        let len = self.grid.r;
        let cut = len - (len - self.ell_s) / 10.0;
        let mut m = f64::NEG_INFINITY;
        for i in (0..self.grid.nx1).filter(|&i| self.grid.x1(i) >= cut) {
            m = self.a11.row(i).iter().fold(m, |acc, &v| acc.max(v));
        }
        -m
    }
}

/// Sonic interface x₁ = g_s(x₂) where a₁₁ − a₁₂² vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct SonicInterface {
    pub x2: Vec<f64>,
    pub g_s: Vec<f64>,
    /// Grid nodes (x₁ᵢ, x₁ᵢ₊₁) with opposite signs of the determinant.
    pub brackets: Vec<(f64, f64)>,
    /// |det| of the interpolant at the root.
    pub det_residual: Vec<f64>,
    pub ell_s: f64,
    pub length: f64,
    pub deviation_max: f64,
    pub deviation_l2: f64,
}

impl SonicInterface {
    /// (15/16)ℓ_s ≤ g_s ≤ ℓ_s + min(ℓ_s, L − ℓ_s)/16 at every sample.
    pub fn within_bounds(&self) -> bool {
        let lo = 15.0 / 16.0 * self.ell_s;
        let hi = self.ell_s + self.ell_s.min(self.length - self.ell_s) / 16.0;
        self.g_s.iter().all(|&g| g >= lo && g <= hi)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_columns_csv(w, &["x2", "g_s"], &[&self.x2, &self.g_s])
    }
}

/// Locates the sign change of a₁₁ − a₁₂² on every x₁-line.
pub fn sonic_interface(coeffs: &LinearizedCoefficients) -> Result<SonicInterface> {
    let grid = &coeffs.grid;
    let det = coeffs.det();
    let h = grid.h1();
    let mut out = SonicInterface {
        x2: grid.x2_nodes(),
        g_s: Vec::with_capacity(grid.nx2),
        brackets: Vec::with_capacity(grid.nx2),
        det_residual: Vec::with_capacity(grid.nx2),
        ell_s: coeffs.ell_s,
        length: grid.r,
        deviation_max: 0.0,
        deviation_l2: 0.0,
    };
    for jx in 0..grid.nx2 {
        let col = det.column(jx);
        let n = col.len();
        if !(col[0] > 0.0 && col[n - 1] < 0.0) {
            return Err(Error::Topology(format!(
                "det must be positive at the inlet and negative at the exit on line {jx} (got {:e}, {:e})",
                col[0],
                col[n - 1]
            )));
        }
        let changes: Vec<usize> = (0..n - 1).filter(|&i| col[i] > 0.0 && col[i + 1] <= 0.0 || col[i] <= 0.0 && col[i + 1] > 0.0).collect();
        if changes.len() != 1 {
            return Err(Error::Topology(format!("det changes sign {} times on line {jx}", changes.len())));
        }
        let i = changes[0];
        let f = |x: f64| cubic_uniform(&col, 0.0, h, x, Parity::None);
        let (a, b) = (grid.x1(i), grid.x1(i + 1));
        let x = if col[i + 1] == 0.0 { b } else { illinois(f, a, b, 1e-15 * grid.r)? };
        let res = f(x).abs();
        if res > 1e-10 {
            return Err(Error::NoRoot(format!("interface root on line {jx} leaves |det| = {res:e}")));
        }
        out.g_s.push(x);
        out.brackets.push((a, b));
        out.det_residual.push(res);
    }
    let dev: Vec<f64> = out.g_s.iter().map(|g| g - coeffs.ell_s).collect();
    out.deviation_max = dev.iter().fold(0.0, |m, d| m.max(d.abs()));
    let h2 = grid.h2();
    let n2 = dev.len();
    let s: f64 = dev.iter().enumerate().map(|(k, d)| if k == 0 || k + 1 == n2 { 0.5 * d * d } else { d * d }).sum();
    out.deviation_l2 = (s * h2).sqrt();
    Ok(out)
}

/// Multiplier quantities at one κ, with α from ω₁G_* − ω₂.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerPoint {
    pub kappa: f64,
    pub g: f64,
    pub g_star: f64,
    pub beta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha: f64,
    pub omega1: f64,
    pub omega2: f64,
}

/// Multiplier ledger for G = ρ̄^η on the trajectory segment [κ₀, κ_L].
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    pub params: PhysicalParams,
    pub eta: f64,
    pub kappa0: f64,
    pub kappa_l: f64,
    /// λ(κ₀, κ_L).
    pub lambda: f64,
    /// Nozzle length implied by λ.
    pub length: f64,
    pub samples: Vec<LedgerPoint>,
    /// min α over [κ₀, κ_L].
    pub margin: f64,
    pub argmin: f64,
    kf: KappaFns,
}

/// Number of κ samples used before local refinement of the minimum.
pub const LEDGER_SAMPLES: usize = 2048;

impl EnergyLedger {
    /// Ledger quantities at `kappa` (κ-form).
    pub fn at(&self, kappa: f64) -> Result<LedgerPoint> {
        let p = &self.params;
        let (g, j, eta) = (p.gamma, p.j, self.eta);
        let h0 = p.h0();
        let us = p.u_s();
        let (_, hk) = self.kf.eval(kappa)?;
        let s2 = std::f64::consts::SQRT_2;
        let rr = -s2 * h0.powf(-1.5) * j.powf((2.0 - g) / (g + 1.0)) * hk;
        let gg = kappa.powf(-eta) * h0.powf(-eta) * j.powf(2.0 * eta / (g + 1.0));
        let g_star = j.powf((2.0 - g) / (g + 1.0)) * gg;
        let kk = kappa.powf(g + 1.0);
        let alpha1 = rr * gg / 2.0 * ((g - 1.0 + eta) * kk + 2.0 - eta);
        let u = kappa * us;
        let c2 = us * us * kappa.powf(1.0 - g);
        let beta = (g - 1.0) * u / c2 * rr * gg - j / c2;
        let l2 = self.length * self.length;
        let alpha2 = 2.0 * ((gg * u / c2).powi(2) + l2 * beta * beta);
        let omega1 = s2 / 2.0 * h0.powf(-1.5) * hk * ((g - 1.0) * kk + eta * (kk - 1.0) + 2.0)
            - 2.0 / h0.powf(2.0 + eta) * kappa.powf(2.0 * g - eta) * j.powf((2.0 * eta - g) / (g + 1.0));
        let inner = s2 * (g - 1.0) * h0.powf(-0.5 - eta) * kappa.powf(1.0 - eta) * hk * j.powf((2.0 * eta - g) / (g + 1.0)) + 1.0;
        let omega2 = kappa.powf(2.0 * (g - 1.0)) * self.lambda * j.powf(2.0 / (g + 1.0)) * inner * inner / h0;
        Ok(LedgerPoint { kappa, g: gg, g_star, beta, alpha1, alpha2, alpha: omega1 * g_star - omega2, omega1, omega2 })
    }

    /// Closed form of α(1) in the limit κ₀ → 1⁻, κ_L → 1⁺.
    pub fn alpha_limit(p: &PhysicalParams, eta: f64) -> f64 {
        let (g, j, z) = (p.gamma, p.j, p.zeta0);
        let h0 = p.h0();
        h0.powf(-eta)
            * j.powf((2.0 - g + 2.0 * eta) / (g + 1.0))
            * (0.5 * h0.powf(-1.5) * (1.0 - 1.0 / z).sqrt() * (g + 1.0).sqrt()
                - 2.0 / h0.powf(2.0 + eta) * j.powf((2.0 * eta - g) / (g + 1.0)))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let col = |f: fn(&LedgerPoint) -> f64| self.samples.iter().map(f).collect::<Vec<f64>>();
        let k = col(|s| s.kappa);
        let a = col(|s| s.alpha);
        let a1 = col(|s| s.alpha1);
        let a2 = col(|s| s.alpha2);
        let o1 = col(|s| s.omega1);
        let o2 = col(|s| s.omega2);
        write_columns_csv(w, &["kappa", "alpha", "alpha1", "alpha2", "omega1", "omega2"], &[&k, &a, &a1, &a2, &o1, &o2])
    }
}

/// Evaluates the multiplier ledger on [κ₀, κ_L] and its admissibility margin
/// min α (dense sampling, then golden-section refinement to width 1e−10).
pub fn multiplier_ledger(p: &PhysicalParams, eta: f64, kappa0: f64, kappa_l: f64) -> Result<EnergyLedger> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("multiplier exponent must be positive (got {eta})")));
    }
    if !(kappa0 > 0.0 && kappa0 < kappa_l) {
        return Err(Error::Domain(format!("need 0 < kappa0 < kappaL (got {kappa0}, {kappa_l})")));
    }
    let g = p.gamma;
    let lambda = lambda_kappa(p, kappa0, kappa_l)?;
    let length = (p.h0().powi(3) / 2.0 * p.j.powf(2.0 * (g - 2.0) / (g + 1.0)) * lambda).sqrt();
    let mut ledger = EnergyLedger {
        params: *p,
        eta,
        kappa0,
        kappa_l,
        lambda,
        length,
        samples: Vec::with_capacity(LEDGER_SAMPLES),
        margin: f64::INFINITY,
        argmin: kappa0,
        kf: KappaFns::new(p),
    };
    let dk = (kappa_l - kappa0) / (LEDGER_SAMPLES - 1) as f64;
    let mut samples = Vec::with_capacity(LEDGER_SAMPLES);
    for s in 0..LEDGER_SAMPLES {
        let k = if s + 1 == LEDGER_SAMPLES { kappa_l } else { kappa0 + s as f64 * dk };
        samples.push(ledger.at(k)?);
    }
    let imin = (0..samples.len()).min_by(|&a, &b| samples[a].alpha.total_cmp(&samples[b].alpha)).unwrap();
    let lo = samples[imin.saturating_sub(1)].kappa;
    let hi = samples[(imin + 1).min(samples.len() - 1)].kappa;
    let (km, am) = golden_min(|k| ledger.at(k).map(|q| q.alpha).unwrap_or(f64::INFINITY), lo, hi, 1e-10);
    let (km, am) = if am < samples[imin].alpha { (km, am) } else { (samples[imin].kappa, samples[imin].alpha) };
    ledger.samples = samples;
    ledger.margin = am;
    ledger.argmin = km;
    Ok(ledger)
}

/// The ledger evaluated directly in x₁ on background nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct X1Ledger {
    pub x1: Vec<f64>,
    pub kappa: Vec<f64>,
    pub g: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// α₁ = −½(ā₁₁G)′ + āG, β and α₂ from the sampled background, with L the
/// background length.
pub fn ledger_x1_form(bg: &BackgroundState, eta: f64) -> X1Ledger {
    let p = bg.params();
    let (g, s0, j) = (p.gamma, p.s0, p.j);
    let us = p.u_s();
    let len = bg.length();
    let n = bg.x1_grid.len();
    let mut out = X1Ledger {
        x1: bg.x1_grid.clone(),
        kappa: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        beta: Vec::with_capacity(n),
        alpha1: Vec::with_capacity(n),
        alpha2: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (u, du, e) = (bg.u1[i], bg.du_at(i), bg.e[i]);
        let rho = j / u;
        let drho = -j * du / (u * u);
        let c2 = g * s0 * rho.powf(g - 1.0);
        let a11 = 1.0 - (u / us).powf(g + 1.0);
        let da11 = -(g + 1.0) * (u / us).powf(g) * du / us;
        let abar = (e - (g + 1.0) * du * u) / c2;
        let gg = rho.powf(eta);
        let dg = eta * rho.powf(eta - 1.0) * drho;
        let alpha1 = -0.5 * (da11 * gg + a11 * dg) + abar * gg;
        let beta = (g - 1.0) * u / c2 * (drho / rho) * gg - j / c2;
        let alpha2 = 2.0 * ((gg * u / c2).powi(2) + len * len * beta * beta);
        out.kappa.push(u / us);
        out.g.push(gg);
        out.beta.push(beta);
        out.alpha1.push(alpha1);
        out.alpha2.push(alpha2);
        out.alpha.push(-alpha1 - alpha2);
    }
    out
}

/// Components of the multiplier energy identity −(I₁ + I₂) = T_bd + T_coer + T_mix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyComponents {
    pub i1: f64,
    pub i2: f64,
    pub t_bd: f64,
    pub t_coer: f64,
    pub t_mix: f64,
    /// −(I₁ + I₂) − (T_bd + T_coer + T_mix).
    pub defect: f64,
    /// Richardson estimate of the discretisation error of the defect.
    pub estimate: f64,
}

fn components(cols: &BackgroundColumns, p: &PhysicalParams, eta: f64, v: &Field2, w: &Field2) -> EnergyComponents {
    let grid = &v.grid;
    let (g, s0, j) = (p.gamma, p.s0, p.j);
    let us = p.u_s();
    let v1 = v.d1();
    let v2 = v.d2(Parity::Even);
    let v11 = v.d11();
    let v22 = v.d22(Parity::Even);
    let w1 = w.d1();
    let w2 = w.d2(Parity::Even);
    let lap_w = w.d11().add(&w.d22(Parity::Even));
    let mut i1 = Field2::zeros(grid);
    let mut i2 = Field2::zeros(grid);
    let mut coer = Field2::zeros(grid);
    let mut mix = Field2::zeros(grid);
    let mut gv = Vec::with_capacity(grid.nx1);
    let mut a11v = Vec::with_capacity(grid.nx1);
    for i in 0..grid.nx1 {
        let (u, du, e) = (cols.u[i], cols.du[i], cols.e[i]);
        let rho = j / u;
        let rr = -du / u;
        let c2 = g * s0 * rho.powf(g - 1.0);
        let a11 = 1.0 - (u / us).powf(g + 1.0);
        let abar = (e - (g + 1.0) * du * u) / c2;
        let b1 = u / c2;
        let b0 = (g - 1.0) * du / c2;
        let c0 = rho / c2;
        let c1 = -u * rho / c2;
        let gg = rho.powf(eta);
        let alpha1 = rr * gg / 2.0 * ((g - 1.0 + eta) * (u / us).powf(g + 1.0) + 2.0 - eta);
        gv.push(gg);
        a11v.push(a11);
        for jx in 0..grid.nx2 {
            let (a1, a2, a11d, a22d) = (v1.at(i, jx), v2.at(i, jx), v11.at(i, jx), v22.at(i, jx));
            let (ww, ww1, ww2) = (w.at(i, jx), w1.at(i, jx), w2.at(i, jx));
            let l1 = a11 * a11d + a22d + abar * a1 + b1 * ww1 + b0 * ww;
            i1.set(i, jx, gg * a1 * l1);
            i2.set(i, jx, ww * (lap_w.at(i, jx) - c0 * ww - c1 * a1));
            coer.set(
                i,
                jx,
                -(alpha1 * a1 * a1 + eta * rr * gg * a2 * a2 / 2.0) + ww1 * ww1 + ww2 * ww2 + c0 * ww * ww,
            );
            mix.set(
                i,
                jx,
                (g - 1.0) * u / c2 * rr * gg * ww * a1 - gg * u / c2 * ww1 * a1 - j / c2 * a1 * ww,
            );
        }
    }
    let line = |f: &dyn Fn(usize) -> f64| -> f64 {
        let n = grid.nx2;
        let s: f64 = (0..n).map(|k| if k == 0 || k + 1 == n { 0.5 * f(k) } else { f(k) }).sum();
        s * grid.h2()
    };
    let last = grid.nx1 - 1;
    let t_bd = gv[0] / 2.0 * line(&|k| a11v[0] * v1.at(0, k).powi(2))
        - gv[last] / 2.0 * line(&|k| a11v[last] * v1.at(last, k).powi(2) - v2.at(last, k).powi(2));
    let i1 = i1.integral_simpson_x1();
    let i2 = i2.integral_simpson_x1();
    let t_coer = coer.integral_simpson_x1();
    let t_mix = mix.integral_simpson_x1();
    let defect = -(i1 + i2) - (t_bd + t_coer + t_mix);
    EnergyComponents { i1, i2, t_bd, t_coer, t_mix, defect, estimate: 0.0 }
}

fn coarsen(f: &Field2) -> Option<Field2> {
    let g = &f.grid;
    if g.nx1 % 2 == 0 || g.nx2 % 2 == 0 || g.nx1 < 9 || g.nx2 < 5 {
        return None;
    }
    let cg = Grid2::new(g.r, g.nx1 / 2 + 1, g.nx2 / 2 + 1);
    let mut out = Field2::zeros(&cg);
    for i in 0..cg.nx1 {
        for jx in 0..cg.nx2 {
            out.set(i, jx, f.at(2 * i, 2 * jx));
        }
    }
    Some(out)
}

/// Evaluates the energy identity components for (v, w) with multiplier G = ρ̄^η.
///
/// The defect is compared with a Richardson estimate from the grid with every
/// other node removed; grids with an even node count skip that check.
pub fn energy_decomposition(bg: &BackgroundState, eta: f64, v: &Field2, w: &Field2) -> Result<EnergyComponents> {
    if v.grid != w.grid {
        return Err(Error::Domain("v and w live on different grids".into()));
    }
    let p = bg.params();
    let cols = BackgroundColumns::sample(bg, &v.grid)?;
    let mut c = components(&cols, p, eta, v, w);
    let scale = c.i1.abs() + c.i2.abs() + c.t_bd.abs() + c.t_coer.abs() + c.t_mix.abs();
    if let (Some(vc), Some(wc)) = (coarsen(v), coarsen(w)) {
        let ccols = BackgroundColumns {
            x1: cols.x1.iter().step_by(2).copied().collect(),
            u: cols.u.iter().step_by(2).copied().collect(),
            du: cols.du.iter().step_by(2).copied().collect(),
            e: cols.e.iter().step_by(2).copied().collect(),
            rho: cols.rho.iter().step_by(2).copied().collect(),
        };
        let cc = components(&ccols, p, eta, &vc, &wc);
        c.estimate = (cc.defect - c.defect).abs() / 3.0;
        let bound = 100.0 * c.estimate + 1e-12 * scale;
        if c.defect.abs() > bound {
            return Err(Error::QuadratureInconsistency { defect: c.defect.abs(), bound });
        }
    }
    if c.t_bd < -1e-12 * scale {
        return Err(Error::Admissibility(format!("boundary term T_bd = {:e} is negative", c.t_bd)));
    }
    Ok(c)
}

/// How the Keldysh half of the coupled system is solved.
#[derive(Debug, Clone, PartialEq)]
pub enum VSolver {
    /// One Galerkin solve on Ω_L with the given viscosity (0 allowed).
    Direct { eps: f64 },
    /// Vanishing-viscosity continuation on the extended domain.
    Continuation(Schedule),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOptions {
    pub n_modes: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub v_solver: VSolver,
}

impl Default for CoupledOptions {
    fn default() -> Self {
        Self { n_modes: 12, tol: 1e-6, max_sweeps: 200, v_solver: VSolver::Direct { eps: 0.0 } }
    }
}

#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub v: Field2,
    pub w: Field2,
    pub sweeps: usize,
    /// Relative H¹ change of (v, w) per sweep.
    pub residuals: Vec<f64>,
}

impl CoupledSolution {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_grid_csv(w, &self.v.grid, &["v", "w"], &[&self.v, &self.w])
    }
}

/// Solves Δw − c₀w = g with ∂₁w = 0 at x₁ = 0, w = 0 at x₁ = L and
/// ∂₂w = 0 on the walls, mode by mode in the cosine basis.
pub fn solve_elliptic_w(c0: &Field2, g: &Field2, n_modes: usize) -> Result<Field2> {
    let grid = &g.grid;
    let basis = SpectralBasis::for_grid(n_modes, grid.nx2)?;
    let rows = g.eval_rows_at(basis.quad_nodes(), Parity::Even);
    let proj: Vec<Vec<f64>> = rows.iter().map(|r| basis.project(r)).collect();
    let nx = grid.nx1;
    let h = grid.h1();
    let ih2 = 1.0 / (h * h);
    let mut amp = vec![0.0; nx * n_modes];
    for k in 0..n_modes {
        let lam = basis.lambda(k);
        let mut m = BandMatrix::zeros(nx, 1, 1);
        let mut rhs = vec![0.0; nx];
        for i in 0..nx - 1 {
            let c = c0.at(i, 0);
            if i == 0 {
                m.add(0, 0, -2.0 * ih2 - lam - c);
                m.add(0, 1, 2.0 * ih2);
            } else {
                m.add(i, i - 1, ih2);
                m.add(i, i, -2.0 * ih2 - lam - c);
                m.add(i, i + 1, ih2);
            }
            rhs[i] = proj[i][k];
        }
        m.add(nx - 1, nx - 1, 1.0);
        let lu = m.factor()?;
        lu.solve(&mut rhs);
        rhs[nx - 1] = 0.0;
        for i in 0..nx {
            amp[i * n_modes + k] = rhs[i];
        }
    }
    let x2 = grid.x2_nodes();
    let mut out = Field2::zeros(grid);
    for i in 0..nx {
        for (jx, &y) in x2.iter().enumerate() {
            let s: f64 = (0..n_modes).map(|k| amp[i * n_modes + k] * SpectralBasis::eta_at(k, y)).sum();
            out.set(i, jx, s);
        }
    }
    Ok(out)
}

fn solve_v(field: &KeldyshField, rhs: &Field2, opts: &CoupledOptions) -> Result<Field2> {
    match &opts.v_solver {
        VSolver::Direct { eps } => Ok(solve_on_field(field, rhs, *eps, opts.n_modes)?.synthesize(field.grid.nx2)),
        VSolver::Continuation(s) => Ok(continuation_solve(field, rhs, s)?.v),
    }
}

/// Block Gauss–Seidel solve of 𝔏₁(v, w) = f₁, 𝔏₂(v, w) = f₂.
pub fn solve_coupled(coeffs: &LinearizedCoefficients, f1: &Field2, f2: &Field2, opts: &CoupledOptions) -> Result<CoupledSolution> {
    let grid = &coeffs.grid;
    if f1.grid != *grid || f2.grid != *grid {
        return Err(Error::Domain("data and coefficients live on different grids".into()));
    }
    if !(opts.tol > 0.0) || opts.n_modes == 0 {
        return Err(Error::Domain("coupled solve needs tol > 0 and at least one mode".into()));
    }
    let mut v = Field2::zeros(grid);
    let mut w = Field2::zeros(grid);
    if f1.max_abs() == 0.0 && f2.max_abs() == 0.0 {
        return Ok(CoupledSolution { v, w, sweeps: 0, residuals: vec![] });
    }
    let field = coeffs.keldysh_field()?;
    let mut residuals = Vec::new();
    let mut growth = 0usize;
    for sweep in 1..=opts.max_sweeps {
        let g = f2.add(&coeffs.c1.zip_map(&v.d1(), |a, b| a * b));
        let w_new = solve_elliptic_w(&coeffs.c0, &g, opts.n_modes)?;
        let w1 = w_new.d1();
        let mut rhs = f1.clone();
        for k in 0..rhs.data.len() {
            rhs.data[k] -= coeffs.b1.data[k] * w1.data[k] + coeffs.b0.data[k] * w_new.data[k];
        }
        let v_new = solve_v(&field, &rhs, opts)?;
        let dv = v_new.sub(&v).h1_norm(Parity::Even);
        let dw = w_new.sub(&w).h1_norm(Parity::Even);
        let size = v_new.h1_norm(Parity::Even) + w_new.h1_norm(Parity::Even);
        let res = (dv + dw) / size.max(f64::MIN_POSITIVE);
        v = v_new;
        w = w_new;
        if let Some(&prev) = residuals.last() {
            growth = if res > prev { growth + 1 } else { 0 };
        }
        residuals.push(res);
        if res <= opts.tol {
            return Ok(CoupledSolution { v, w, sweeps: sweep, residuals });
        }
        if growth >= 5 {
            break;
        }
    }
    Err(Error::CouplingDivergence(format!(
        "residuals {:?}; max|b1| = {:e}, max|b0| = {:e}, max|c0| = {:e}, max|c1| = {:e}",
        residuals.iter().rev().take(6).rev().collect::<Vec<_>>(),
        coeffs.b1.max_abs(),
        coeffs.b0.max_abs(),
        coeffs.c0.max_abs(),
        coeffs.c1.max_abs()
    )))
}
