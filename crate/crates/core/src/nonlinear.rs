//! Outer fixed-point iteration for the two-dimensional transonic flow,
//! assembly of the physical fields, Euler–Poisson residuals and the Mach
//! number interface.
//!
//! The unknowns are perturbations of the background: ψ of the velocity
//! potential, Ψ of the electric potential, the vorticity potential φ and
//! T = S − S₀.  Each sweep freezes the current iterate (φ, ψ, Ψ, T) in the
//! coefficients and then
//!
//! 1. solves −Δφ = f₀ with ∂₁φ = 0 at the inlet and φ = 0 on the rest of the boundary,
//! 2. solves the coupled Keldysh–elliptic system for (ψ, Ψ) after lifting
//!    ψ(0, x₂) = ∫_{−1}^{x₂} w_en and ∂₁Ψ(0, x₂) = E_en − E₀,
//! 3. transports S_en − S₀ along the pseudo momentum field of the new (φ, ψ, Ψ).
//!
//! The physical state is u = ∇φ̄ + ∇ψ + ∇⊥φ, Φ = Φ̄ + Ψ, S = S₀ + T and
//! ρ = ((γ−1)(Φ − |u|²/2)/(γS))^{1/(γ−1)}, so Bernoulli's law holds by construction.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::background::BackgroundState;
use crate::error::{Error, Result};
use crate::galerkin::SpectralBasis;
use crate::io::{write_columns_csv, write_grid_csv};
use crate::linearized::{
    build_coefficients, solve_coupled, sonic_interface, BackgroundColumns, CoupledOptions, LinearizedCoefficients, Perturbation,
    SonicInterface, DEFAULT_D0,
};
use crate::numerics::banded::BandMatrix;
use crate::numerics::grid::{Field2, Grid2};
use crate::numerics::interp::{cubic_uniform, CubicSpline, Parity};
use crate::numerics::quad::integrate;
use crate::numerics::roots::illinois;
use crate::transport::{build_stream_function, default_flux_tol, lagrangian_map, momentum_field, transport_entropy};

/// Regularity index used for the boundary data norms and compatibility.
pub const REGULARITY: usize = 4;

/// A boundary profile on [−1, 1].
#[derive(Debug, Clone)]
pub enum Profile {
    Constant(f64),
    /// base + Σ a cos(kπ(x₂+1)/2).
    Cosine { base: f64, terms: Vec<(u32, f64)> },
    /// Σ a sin(kπ(x₂+1)/2).
    Sine { terms: Vec<(u32, f64)> },
    /// Not-a-knot spline through tabulated samples.
    Table { x: Vec<f64>, y: Vec<f64>, spline: CubicSpline },
}

impl Profile {
    pub fn table(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 4 {
            return Err(Error::Domain(format!("tabulated profile needs at least 4 (x, y) pairs (got {}, {})", x.len(), y.len())));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("tabulated profile abscissae must increase".into()));
        }
        if (x[0] + 1.0).abs() > 1e-12 || (x[x.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("tabulated profile must span [-1, 1] (got [{}, {}])", x[0], x[x.len() - 1])));
        }
        let spline = CubicSpline::new(&x, &y);
        Ok(Profile::Table { x, y, spline })
    }

    pub fn eval(&self, x2: f64) -> f64 {
        self.deriv(x2, 0)
    }

    /// n-th derivative; tabulated profiles have zero derivatives beyond the third.
    pub fn deriv(&self, x2: f64, n: usize) -> f64 {
        let trig = |terms: &[(u32, f64)], shift: f64| -> f64 {
            terms
                .iter()
                .map(|&(k, a)| {
                    let c = k as f64 * std::f64::consts::FRAC_PI_2;
                    a * c.powi(n as i32) * (c * (x2 + 1.0) + shift + n as f64 * std::f64::consts::FRAC_PI_2).cos()
                })
                .sum()
        };
        match self {
            Profile::Constant(c) => {
                if n == 0 {
                    *c
                } else {
                    0.0
                }
            }
            Profile::Cosine { base, terms } => trig(terms, 0.0) + if n == 0 { *base } else { 0.0 },
            Profile::Sine { terms } => trig(terms, -std::f64::consts::FRAC_PI_2),
            Profile::Table { spline, .. } => match n {
                0 => spline.eval(x2),
                1 => spline.deriv(x2),
                2 => spline.deriv2(x2),
                3 => spline.deriv3(x2),
                _ => 0.0,
            },
        }
    }

    /// ∫_{−1}^{x₂} of the profile.
    pub fn primitive(&self, x2: f64) -> Result<f64> {
        match self {
            Profile::Constant(c) => Ok(c * (x2 + 1.0)),
            Profile::Sine { terms } => Ok(terms
                .iter()
                .map(|&(k, a)| {
                    if k == 0 {
                        0.0
                    } else {
                        let c = k as f64 * std::f64::consts::FRAC_PI_2;
                        a * (1.0 - (c * (x2 + 1.0)).cos()) / c
                    }
                })
                .sum()),
            Profile::Cosine { base, terms } => Ok(base * (x2 + 1.0)
                + terms
                    .iter()
                    .map(|&(k, a)| {
                        if k == 0 {
                            a * (x2 + 1.0)
                        } else {
                            let c = k as f64 * std::f64::consts::FRAC_PI_2;
                            a * (c * (x2 + 1.0)).sin() / c
                        }
                    })
                    .sum::<f64>()),
            Profile::Table { .. } => integrate(|t| self.eval(t), -1.0, x2, 1e-14, 1e-12),
        }
    }

    /// Σ_{k ≤ m} sup |f^{(k)} − shift δ_{k0}| over a fine sample of [−1, 1].
    pub fn cm_norm(&self, m: usize, shift: f64) -> f64 {
        let n = 2001;
        (0..=m)
            .map(|k| {
                (0..n)
                    .map(|s| {
                        let x = -1.0 + 2.0 * s as f64 / (n - 1) as f64;
                        let v = self.deriv(x, k) - if k == 0 { shift } else { 0.0 };
                        v.abs()
                    })
                    .fold(0.0, f64::max)
            })
            .sum()
    }
}

/// Inlet data (S_en, E_en, w_en).
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub s_en: Profile,
    pub e_en: Profile,
    pub w_en: Profile,
}

impl BoundaryData {
    /// The background data (S₀, E₀, 0).
    pub fn background(bg: &BackgroundState) -> Self {
        Self { s_en: Profile::Constant(bg.params().s0), e_en: Profile::Constant(bg.e[0]), w_en: Profile::Constant(0.0) }
    }

    /// 𝔓 = ‖S_en − S₀‖_{C⁴} + ‖E_en − E₀‖_{C⁴} + ‖w_en‖_{C⁵}.
    pub fn perturbation_size(&self, s0: f64, e0: f64) -> f64 {
        self.s_en.cm_norm(REGULARITY, s0) + self.e_en.cm_norm(REGULARITY, e0) + self.w_en.cm_norm(REGULARITY + 1, 0.0)
    }

    /// Wall compatibility: odd derivatives below order 4 of S_en and E_en,
    /// and even derivatives up to order 4 of w_en, vanish at x₂ = ±1.
    pub fn check_compatibility(&self, tol: f64) -> Result<()> {
        for wall in [-1.0, 1.0] {
            for k in (1..REGULARITY).step_by(2) {
                for (name, p) in [("S_en", &self.s_en), ("E_en", &self.e_en)] {
                    let d = p.deriv(wall, k);
                    if d.abs() > tol {
                        return Err(Error::Admissibility(format!("{name} derivative of order {k} is {d:e} at x2 = {wall}")));
                    }
                }
            }
            for k in (0..=REGULARITY).step_by(2) {
                let d = self.w_en.deriv(wall, k);
                if d.abs() > tol {
                    return Err(Error::Admissibility(format!("w_en derivative of order {k} is {d:e} at x2 = {wall}")));
                }
            }
        }
        Ok(())
    }
}

/// Starting point of the iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    /// φ = ψ = Ψ = 0, with T transported along the background flow.
    Zero,
    /// Smooth wall-compatible fields with random mode weights of size `amplitude`.
    Random { seed: u64, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointOptions {
    pub nx2: usize,
    pub n_modes: usize,
    /// Stop when the update norm falls below this value.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Sweeps in a row without contraction before giving up.
    pub stall_sweeps: usize,
    /// 1 is plain Picard; smaller values under-relax the (φ, ψ, Ψ) update.
    pub relaxation: f64,
    pub d0: f64,
    /// Upper bound on 𝔓.
    pub p_max: f64,
    pub compat_tol: f64,
    pub inner: CoupledOptions,
    pub initial: InitialGuess,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            nx2: 33,
            n_modes: 12,
            tol: 1e-8,
            max_sweeps: 60,
            stall_sweeps: 10,
            relaxation: 1.0,
            d0: DEFAULT_D0,
            p_max: 5.0,
            compat_tol: 1e-8,
            inner: CoupledOptions { tol: 1e-10, ..CoupledOptions::default() },
            initial: InitialGuess::Zero,
        }
    }
}

/// Update norms of one sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    /// ‖Δφ‖_{H²} + ‖Δψ‖_{H¹} + ‖ΔΨ‖_{H¹}.
    pub d1: f64,
    /// ‖ΔT‖_{L²}.
    pub d2: f64,
    /// (d₁ + d₂) divided by the previous sweep's value.
    pub ratio: f64,
    /// Monitored radii ‖T‖_{H¹}, ‖φ‖_{H²}, ‖(ψ, Ψ)‖_{H¹}.
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub inner_sweeps: usize,
    pub flux_drift: f64,
}

impl SweepRecord {
    pub fn total(&self) -> f64 {
        self.d1 + self.d2
    }
}

/// Assembled physical fields.
#[derive(Debug, Clone)]
pub struct PhysicalFields {
    pub grid: Grid2,
    pub rho: Field2,
    pub u1: Field2,
    pub u2: Field2,
    pub s: Field2,
    pub big_phi: Field2,
    pub mach: Field2,
}

/// Sonic interface x₁ = f_sn(x₂) where M = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MachInterface {
    pub x2: Vec<f64>,
    pub f_sn: Vec<f64>,
}

impl MachInterface {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_columns_csv(w, &["x2", "f_sn"], &[&self.x2, &self.f_sn])
    }

    /// max |f_sn − ℓ_s|.
    pub fn deviation(&self, ell_s: f64) -> f64 {
        self.f_sn.iter().fold(0.0, |m, f| m.max((f - ell_s).abs()))
    }
}

/// Converged perturbation, physical fields, interfaces and iteration history.
#[derive(Debug, Clone)]
pub struct SolutionBundle {
    pub state: Perturbation,
    pub t: Field2,
    pub fields: PhysicalFields,
    pub interface: MachInterface,
    /// Degeneracy set of the converged coefficients.
    pub det_interface: SonicInterface,
    /// max |f_sn − g_s|.
    pub interface_gap: f64,
    pub history: Vec<SweepRecord>,
    pub perturbation_size: f64,
    /// True when the monitored radii satisfied max(r₁, r₂ + r₃) ≤ d₀ on every sweep.
    pub radii_ok: bool,
}

impl SolutionBundle {
    pub fn sweeps(&self) -> usize {
        self.history.len()
    }

    /// Writes `x1,x2,phi,psi,Psi,T,rho,u1,u2,S,Phi,M`.
    pub fn write_fields_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let f = &self.fields;
        write_grid_csv(
            w,
            &f.grid,
            &["phi", "psi", "Psi", "T", "rho", "u1", "u2", "S", "Phi", "M"],
            &[&self.state.phi, &self.state.psi, &self.state.big_psi, &self.t, &f.rho, &f.u1, &f.u2, &f.s, &f.big_phi, &f.mach],
        )
    }

    /// Writes `sweep,d1,d2,ratio,r1,r2,r3,inner_sweeps,flux_drift`.
    pub fn write_history_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let h = &self.history;
        let col = |f: &dyn Fn(&SweepRecord) -> f64| h.iter().map(f).collect::<Vec<f64>>();
        let sweep: Vec<f64> = (1..=h.len()).map(|k| k as f64).collect();
        write_columns_csv(
            w,
            &["sweep", "d1", "d2", "ratio", "r1", "r2", "r3", "inner_sweeps", "flux_drift"],
            &[
                &sweep,
                &col(&|r| r.d1),
                &col(&|r| r.d2),
                &col(&|r| r.ratio),
                &col(&|r| r.r1),
                &col(&|r| r.r2),
                &col(&|r| r.r3),
                &col(&|r| r.inner_sweeps as f64),
                &col(&|r| r.flux_drift),
            ],
        )
    }
}

/// Discrete H² norm from second-order differences and the trapezoid rule.
pub fn h2_norm(f: &Field2, parity2: Parity) -> f64 {
    let d1 = f.d1();
    let d2 = f.d2(parity2);
    let parts = [f.clone(), d1.clone(), d2.clone(), f.d11(), d2.d1(), f.d22(parity2)];
    parts.iter().map(|p| p.map(|v| v * v).integral()).sum::<f64>().sqrt()
}

/// Solves −Δφ = f with ∂₁φ = 0 at x₁ = 0 and φ = 0 on the walls and at the
/// exit, mode by mode in the sine basis sin(kπ(x₂+1)/2), k = 1..n.
pub fn solve_vorticity_potential(f: &Field2, n_modes: usize) -> Result<Field2> {
    let grid = &f.grid;
    let quad = SpectralBasis::for_grid(1, grid.nx2)?;
    let (xq, wq) = (quad.quad_nodes(), quad.quad_weights());
    let sines: Vec<Vec<f64>> = (1..=n_modes)
        .map(|k| {
            let c = k as f64 * std::f64::consts::FRAC_PI_2;
            xq.iter().map(|&y| (c * (y + 1.0)).sin()).collect()
        })
        .collect();
    let rows = f.eval_rows_at(xq, Parity::Odd);
    let nx = grid.nx1;
    let h = grid.h1();
    let ih2 = 1.0 / (h * h);
    let x2 = grid.x2_nodes();
    let mut out = Field2::zeros(grid);
    for (m, s) in sines.iter().enumerate() {
        let c = (m + 1) as f64 * std::f64::consts::FRAC_PI_2;
        let lam = c * c;
        let mut a = BandMatrix::zeros(nx, 1, 1);
        let mut rhs: Vec<f64> = rows.iter().map(|r| -r.iter().zip(s).zip(wq).map(|((g, e), w)| g * e * w).sum::<f64>()).collect();
        a.add(0, 0, -2.0 * ih2 - lam);
        a.add(0, 1, 2.0 * ih2);
        for i in 1..nx - 1 {
            a.add(i, i - 1, ih2);
            a.add(i, i, -2.0 * ih2 - lam);
            a.add(i, i + 1, ih2);
        }
        a.add(nx - 1, nx - 1, 1.0);
        rhs[nx - 1] = 0.0;
        a.factor()?.solve(&mut rhs);
        rhs[nx - 1] = 0.0;
        for (i, amp) in rhs.iter().enumerate() {
            for (jx, &y) in x2.iter().enumerate() {
                let v = out.at(i, jx) + amp * (c * (y + 1.0)).sin();
                out.set(i, jx, v);
            }
        }
    }
    for i in 0..nx {
        out.set(i, 0, 0.0);
        out.set(i, grid.nx2 - 1, 0.0);
    }
    Ok(out)
}

/// Lifts of the inlet data: ψ_L = ∫_{−1}^{x₂} w_en and Ψ_L = (x₁ − L)(E_en − E₀).
struct Lifts {
    psi: Field2,
    big_psi: Field2,
    /// w_en′(x₂), E_en − E₀ and (E_en − E₀)″ on the x₂ nodes.
    dw: Vec<f64>,
    de: Vec<f64>,
    de2: Vec<f64>,
}

fn lifts(grid: &Grid2, data: &BoundaryData, e0: f64) -> Result<Lifts> {
    let x2 = grid.x2_nodes();
    let prim = x2.iter().map(|&y| data.w_en.primitive(y)).collect::<Result<Vec<f64>>>()?;
    let dw: Vec<f64> = x2.iter().map(|&y| data.w_en.deriv(y, 1)).collect();
    let de: Vec<f64> = x2.iter().map(|&y| data.e_en.eval(y) - e0).collect();
    let de2: Vec<f64> = x2.iter().map(|&y| data.e_en.deriv(y, 2)).collect();
    let mut psi = Field2::zeros(grid);
    let mut big_psi = Field2::zeros(grid);
    for i in 0..grid.nx1 {
        let s = grid.x1(i) - grid.r;
        for jx in 0..grid.nx2 {
            psi.set(i, jx, prim[jx]);
            big_psi.set(i, jx, s * de[jx]);
        }
    }
    Ok(Lifts { psi, big_psi, dw, de, de2 })
}

/// Sources for the homogeneous unknowns v = ψ − ψ_L, w = Ψ − Ψ_L.
fn lifted_sources(c: &LinearizedCoefficients, l: &Lifts) -> (Field2, Field2) {
    let grid = &c.grid;
    let mut f1 = c.f1.clone();
    let mut f2 = c.f2.clone();
    for i in 0..grid.nx1 {
        let s = grid.x1(i) - grid.r;
        for jx in 0..grid.nx2 {
            let l1 = l.dw[jx] + c.b1.at(i, jx) * l.de[jx] + c.b0.at(i, jx) * s * l.de[jx];
            let l2 = s * l.de2[jx] - c.c0.at(i, jx) * s * l.de[jx];
            f1.set(i, jx, f1.at(i, jx) - l1);
            f2.set(i, jx, f2.at(i, jx) - l2);
        }
    }
    (f1, f2)
}

fn initial_state(grid: &Grid2, guess: &InitialGuess, s_en: impl Fn(f64) -> f64) -> (Perturbation, Field2) {
    match guess {
        InitialGuess::Zero => (Perturbation::zeros(grid), Field2::from_fn(grid, |_, y| s_en(y))),
        InitialGuess::Random { seed, amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut weights = |n: usize| -> Vec<f64> { (0..n).map(|_| amplitude * rng.gen_range(-1.0..1.0)).collect() };
            let (wp, wpsi, wz, wt) = (weights(3), weights(3), weights(3), weights(3));
            let l = grid.r;
            let half_pi = std::f64::consts::FRAC_PI_2;
            let cosines = |w: &[f64], y: f64| -> f64 { w.iter().enumerate().map(|(k, a)| a * (k as f64 * half_pi * (y + 1.0)).cos()).sum() };
            let sines = |w: &[f64], y: f64| -> f64 { w.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * half_pi * (y + 1.0)).sin()).sum() };
            let phi = Field2::from_fn(grid, |x, y| sines(&wp, y) * (half_pi * x / l).cos());
            let psi = Field2::from_fn(grid, |x, y| cosines(&wpsi, y) * x / l);
            let big_psi = Field2::from_fn(grid, |x, y| cosines(&wz, y) * (1.0 - x / l));
            let t = Field2::from_fn(grid, |_, y| cosines(&wt, y));
            (Perturbation { phi, psi, big_psi }, t)
        }
    }
}

/// Runs the fixed-point iteration on the background grid in x₁ and `opts.nx2` nodes in x₂.
pub fn fixed_point_solve(bg: &BackgroundState, data: &BoundaryData, opts: &FixedPointOptions) -> Result<SolutionBundle> {
    let p = *bg.params();
    if opts.nx2 < 5 || !(opts.tol > 0.0) || opts.n_modes == 0 || !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(Error::Domain("fixed-point options need nx2 >= 5, tol > 0, n_modes > 0 and relaxation in (0, 1]".into()));
    }
    data.check_compatibility(opts.compat_tol)?;
    let e0 = bg.e[0];
    let size = data.perturbation_size(p.s0, e0);
    if size > opts.p_max {
        return Err(Error::Admissibility(format!("boundary perturbation size {size:e} exceeds {:e}", opts.p_max)));
    }
    let grid = Grid2::new(bg.length(), bg.x1_grid.len(), opts.nx2);
    let lift = lifts(&grid, data, e0)?;
    let s_dev: Vec<f64> = grid.x2_nodes().iter().map(|&y| data.s_en.eval(y)).collect();
    let (mut state, mut t) = initial_state(&grid, &opts.initial, |y| data.s_en.eval(y) - p.s0);
    let mut inner = opts.inner.clone();
    inner.n_modes = opts.n_modes;
    let omega = opts.relaxation;
    let mut history: Vec<SweepRecord> = Vec::new();
    let mut stall = 0usize;
    let mut radii_ok = true;

    for _ in 0..opts.max_sweeps {
        let coeffs = build_coefficients(bg, &state, &t, opts.d0)?;
        let phi = solve_vorticity_potential(&coeffs.f0, opts.n_modes)?;
        let (f1, f2) = lifted_sources(&coeffs, &lift);
        let sol = solve_coupled(&coeffs, &f1, &f2, &inner)?;
        let relax = |old: &Field2, new: &Field2| if omega == 1.0 { new.clone() } else { old.scale(1.0 - omega).add(&new.scale(omega)) };
        let next = Perturbation {
            phi: relax(&state.phi, &phi),
            psi: relax(&state.psi, &sol.v.add(&lift.psi)),
            big_psi: relax(&state.big_psi, &sol.w.add(&lift.big_psi)),
        };
        let (m1, m2) = momentum_field(bg, &next)?;
        let theta_bar = 2.0 * p.j;
        let flux_tol = default_flux_tol(&grid, theta_bar);
        let field = build_stream_function(&m1, &m2, p.j, flux_tol)?;
        let map = lagrangian_map(&field, flux_tol)?;
        let t_next = transport_entropy(&map, &s_dev, p.s0)?;

        let d1 = h2_norm(&next.phi.sub(&state.phi), Parity::Odd)
            + next.psi.sub(&state.psi).h1_norm(Parity::Even)
            + next.big_psi.sub(&state.big_psi).h1_norm(Parity::Even);
        let d2 = t_next.sub(&t).l2();
        let total = d1 + d2;
        let ratio = history.last().map_or(f64::NAN, |r| total / r.total().max(f64::MIN_POSITIVE));
        let r1 = t_next.h1_norm(Parity::Even);
        let r2 = h2_norm(&next.phi, Parity::Odd);
        let r3 = next.psi.h1_norm(Parity::Even) + next.big_psi.h1_norm(Parity::Even);
        radii_ok &= r1.max(r2 + r3) <= opts.d0;
        history.push(SweepRecord { d1, d2, ratio, r1, r2, r3, inner_sweeps: sol.sweeps, flux_drift: field.flux_drift });
        state = next;
        t = t_next;

        if total < opts.tol {
            return finish(bg, state, t, history, size, radii_ok, opts.d0);
        }
        stall = if ratio >= 1.0 { stall + 1 } else { 0 };
        if stall >= opts.stall_sweeps {
            break;
        }
    }
    Err(Error::Divergence(history.iter().map(|r| r.ratio).collect()))
}

fn finish(
    bg: &BackgroundState,
    state: Perturbation,
    t: Field2,
    history: Vec<SweepRecord>,
    size: f64,
    radii_ok: bool,
    d0: f64,
) -> Result<SolutionBundle> {
    let fields = assemble_physical(bg, &state, &t)?;
    let interface = mach_interface(&fields)?;
    let coeffs = build_coefficients(bg, &state, &t, d0)?;
    let det_interface = sonic_interface(&coeffs)?;
    let interface_gap = interface.f_sn.iter().zip(&det_interface.g_s).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(SolutionBundle { state, t, fields, interface, det_interface, interface_gap, history, perturbation_size: size, radii_ok })
}

/// Pointwise assembly of (ρ, u, S, Φ) and the Mach number.
pub fn assemble_physical(bg: &BackgroundState, state: &Perturbation, t: &Field2) -> Result<PhysicalFields> {
    let grid = state.grid().clone();
    let p = *bg.params();
    let (g, s0) = (p.gamma, p.s0);
    let cols = BackgroundColumns::sample(bg, &grid)?;
    let phi1 = state.phi.d1();
    let phi2 = state.phi.d2(Parity::Odd);
    let p1 = state.psi.d1();
    let p2 = state.psi.d2(Parity::Even);
    let mut out = PhysicalFields {
        grid: grid.clone(),
        rho: Field2::zeros(&grid),
        u1: Field2::zeros(&grid),
        u2: Field2::zeros(&grid),
        s: Field2::zeros(&grid),
        big_phi: Field2::zeros(&grid),
        mach: Field2::zeros(&grid),
    };
    for i in 0..grid.nx1 {
        let u = cols.u[i];
        let phi_bar = 0.5 * u * u + g * s0 / (g - 1.0) * cols.rho[i].powf(g - 1.0);
        for jx in 0..grid.nx2 {
            let u1 = u + p1.at(i, jx) + phi2.at(i, jx);
            let u2 = p2.at(i, jx) - phi1.at(i, jx);
            let s = s0 + t.at(i, jx);
            let big_phi = phi_bar + state.big_psi.at(i, jx);
            let b = big_phi - 0.5 * (u1 * u1 + u2 * u2);
            if !(b > 0.0 && s > 0.0) {
                return Err(Error::Vacuum { i, j: jx });
            }
            let rho = ((g - 1.0) * b / (g * s)).powf(1.0 / (g - 1.0));
            let c2 = g * s * rho.powf(g - 1.0);
            out.rho.set(i, jx, rho);
            out.u1.set(i, jx, u1);
            out.u2.set(i, jx, u2);
            out.s.set(i, jx, s);
            out.big_phi.set(i, jx, big_phi);
            out.mach.set(i, jx, (u1 * u1 + u2 * u2).sqrt() / c2.sqrt());
        }
    }
    Ok(out)
}

/// Grid L² norms of the residuals of the steady Euler–Poisson system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpResiduals {
    /// ∇·(ρu).
    pub mass: f64,
    /// ∇×u − ρ^{γ−1}∂₂S/((γ−1)u₁).
    pub vorticity: f64,
    /// ρu·∇S.
    pub entropy: f64,
    /// |u|²/2 + γSρ^{γ−1}/(γ−1) − Φ.
    pub bernoulli: f64,
    /// ΔΦ − ρ + ρ̄_∞.
    pub poisson: f64,
}

impl EpResiduals {
    pub fn as_array(&self) -> [f64; 5] {
        [self.mass, self.vorticity, self.entropy, self.bernoulli, self.poisson]
    }

    pub fn max(&self) -> f64 {
        self.as_array().into_iter().fold(0.0, f64::max)
    }
}

/// Residuals by second-order differences, one-sided at every boundary.
pub fn ep_residual(f: &PhysicalFields, gamma: f64, rho_inf: f64) -> EpResiduals {
    let g = gamma;
    let d2 = |x: &Field2| x.d2(Parity::None);
    let m1 = f.rho.zip_map(&f.u1, |a, b| a * b);
    let m2 = f.rho.zip_map(&f.u2, |a, b| a * b);
    let mass = m1.d1().add(&d2(&m2));
    let curl = f.u2.d1().sub(&d2(&f.u1));
    let s2 = d2(&f.s);
    let s1 = f.s.d1();
    let lap = f.big_phi.d11().add(&f.big_phi.d22(Parity::None));
    let grid = &f.grid;
    let mut vort = Field2::zeros(grid);
    let mut ent = Field2::zeros(grid);
    let mut bern = Field2::zeros(grid);
    let mut pois = Field2::zeros(grid);
    for k in 0..grid.len() {
        let (rho, u1, u2, s) = (f.rho.data[k], f.u1.data[k], f.u2.data[k], f.s.data[k]);
        vort.data[k] = curl.data[k] - rho.powf(g - 1.0) * s2.data[k] / ((g - 1.0) * u1);
        ent.data[k] = rho * (u1 * s1.data[k] + u2 * s2.data[k]);
        bern.data[k] = 0.5 * (u1 * u1 + u2 * u2) + g * s * rho.powf(g - 1.0) / (g - 1.0) - f.big_phi.data[k];
        pois.data[k] = lap.data[k] - rho + rho_inf;
    }
    EpResiduals { mass: mass.l2(), vorticity: vort.l2(), entropy: ent.l2(), bernoulli: bern.l2(), poisson: pois.l2() }
}

/// Locates M = 1 on every x₁-line and checks that it is crossed once,
/// from subsonic to supersonic.
pub fn mach_interface(f: &PhysicalFields) -> Result<MachInterface> {
    let grid = &f.grid;
    let h = grid.h1();
    let mut f_sn = Vec::with_capacity(grid.nx2);
    for jx in 0..grid.nx2 {
        let col: Vec<f64> = f.mach.column(jx).iter().map(|m| 1.0 - m).collect();
        let n = col.len();
        if !(col[0] > 0.0 && col[n - 1] < 0.0) {
            return Err(Error::Topology(format!(
                "flow must be subsonic at the inlet and supersonic at the exit on line {jx} (M = {:e}, {:e})",
                1.0 - col[0],
                1.0 - col[n - 1]
            )));
        }
        let changes: Vec<usize> = (0..n - 1).filter(|&i| (col[i] > 0.0) != (col[i + 1] > 0.0)).collect();
        if changes.len() != 1 {
            return Err(Error::Topology(format!("M = 1 is crossed {} times on line {jx}", changes.len())));
        }
        let i = changes[0];
        let x = if col[i + 1] == 0.0 {
            grid.x1(i + 1)
        } else {
            illinois(|x| cubic_uniform(&col, 0.0, h, x, Parity::None), grid.x1(i), grid.x1(i + 1), 1e-15 * grid.r)?
        };
        f_sn.push(x);
    }
    Ok(MachInterface { x2: grid.x2_nodes(), f_sn })
}
