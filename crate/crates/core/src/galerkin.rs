//! Spectral Galerkin solver for the mixed-type boundary value problem
//!
//!   ε ∂₁₁₁v + 𝓛v = f  in (0, R_*) × (−1, 1),
//!   v = ∂₁v = 0 at x₁ = 0,  ∂₂v = 0 on |x₂| = 1,  ∂₁₁v = 0 at x₁ = R_*.
//!
//! The x₂-dependence is expanded in Neumann eigenfunctions, which reduces the
//! problem to a linear ODE system for the mode amplitudes ϑ_k(x₁).  The system
//! is written for (Θ, Z = Θ′) and discretised on the x₁ grid:
//!
//! * Θ′ = Z by the trapezoid rule, with Θ(0) = 0;
//! * εZ″ by central differences, and the a₁₁Z′ term by second-order upwind
//!   differences: the matrix a₁₁^{jk} is split into its positive and negative
//!   semidefinite parts, differenced forward and backward respectively.
//!
//! The upwinding makes ε = 0 a valid input.  Where the upwind stencil of a
//! boundary node points into the domain the ODE itself is imposed there, and
//! where it would point outward the viscous boundary condition is kept.  The
//! viscous condition is also dropped when its boundary layer, of width
//! ε/|a₁₁^{kk}|, is thinner than one cell.  At a
//! sign change of a₁₁ the stencils on both sides point toward the degeneracy,
//! which selects the solution that is regular there.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::keldysh::{check_kz_condition, extend_coefficients, mollify_coefficients, mollify_field, Extension, KeldyshField};
use crate::numerics::banded::BandMatrix;
use crate::numerics::grid::{Field2, Grid2};
use crate::numerics::interp::{cubic_uniform, Parity};
use crate::numerics::quad::gauss_legendre;

/// L²-orthonormal cosine eigenfunctions η_k of −d²/dx₂² with Neumann walls.
///
/// Modes are k = 0..n−1 with eigenvalues λ_k = (kπ/2)².
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub n: usize,
    xq: Vec<f64>,
    wq: Vec<f64>,
    /// η_k(xq[q]) stored at k * nq + q.
    eta: Vec<f64>,
    deta: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_quadrature(n, 4 * (n + 1) + 16)
    }

    pub fn with_quadrature(n: usize, nq: usize) -> Result<Self> {
        let (xq, wq) = gauss_legendre(nq.max(4 * (n + 1)));
        Self::from_rule(n, xq, wq)
    }

    /// Basis whose quadrature is a six-point Gauss rule on every cell of a
    /// wall-to-wall grid with `nx2` nodes.  Piecewise-cubic samples of grid
    /// data are then integrated against the low modes to rounding, and the
    /// rule does not change with `n`, so projections of the first modes are
    /// identical for every truncation.
    pub fn for_grid(n: usize, nx2: usize) -> Result<Self> {
        if nx2 < 2 {
            return Err(Error::Domain(format!("need at least 2 x2 nodes (got {nx2})")));
        }
        let (g, w) = gauss_legendre(6);
        let cells = nx2 - 1;
        let h = 2.0 / cells as f64;
        let mut xq = Vec::with_capacity(6 * cells);
        let mut wq = Vec::with_capacity(6 * cells);
        for c in 0..cells {
            let mid = -1.0 + (c as f64 + 0.5) * h;
            for (t, wt) in g.iter().zip(&w) {
                xq.push(mid + 0.5 * h * t);
                wq.push(0.5 * h * wt);
            }
        }
        Self::from_rule(n, xq, wq)
    }

    fn from_rule(n: usize, xq: Vec<f64>, wq: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("spectral basis needs at least one mode".into()));
        }
        let nq = xq.len();
        let mut eta = Vec::with_capacity(n * nq);
        let mut deta = Vec::with_capacity(n * nq);
        for k in 0..n {
            for &x in &xq {
                eta.push(Self::eta_at(k, x));
                deta.push(Self::deta_at(k, x));
            }
        }
        Ok(Self { n, xq, wq, eta, deta })
    }

    pub fn lambda(&self, k: usize) -> f64 {
        let a = k as f64 * std::f64::consts::FRAC_PI_2;
        a * a
    }

    pub fn eta_at(k: usize, x2: f64) -> f64 {
        if k == 0 {
            std::f64::consts::FRAC_1_SQRT_2
        } else {
            (k as f64 * std::f64::consts::FRAC_PI_2 * (x2 + 1.0)).cos()
        }
    }

    pub fn deta_at(k: usize, x2: f64) -> f64 {
        let a = k as f64 * std::f64::consts::FRAC_PI_2;
        -a * (a * (x2 + 1.0)).sin()
    }

    pub fn quad_nodes(&self) -> &[f64] {
        &self.xq
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.wq
    }

    fn nq(&self) -> usize {
        self.xq.len()
    }

    /// ⟨g, η_k⟩ for g sampled at the quadrature nodes.
    pub fn project(&self, g: &[f64]) -> Vec<f64> {
        let nq = self.nq();
        (0..self.n)
            .map(|k| (0..nq).map(|q| self.wq[q] * g[q] * self.eta[k * nq + q]).sum())
            .collect()
    }

    /// ⟨g η_j, η_k⟩ stored at j * n + k.
    pub fn pair(&self, g: &[f64]) -> Vec<f64> {
        self.pair_with(g, &self.eta)
    }

    /// ⟨g η_j′, η_k⟩ stored at j * n + k.
    pub fn pair_deriv(&self, g: &[f64]) -> Vec<f64> {
        self.pair_with(g, &self.deta)
    }

    fn pair_with(&self, g: &[f64], left: &[f64]) -> Vec<f64> {
        let (n, nq) = (self.n, self.nq());
        let mut out = vec![0.0; n * n];
        let mut tmp = vec![0.0; nq];
        for j in 0..n {
            for q in 0..nq {
                tmp[q] = self.wq[q] * g[q] * left[j * nq + q];
            }
            for k in 0..n {
                out[j * n + k] = (0..nq).map(|q| tmp[q] * self.eta[k * nq + q]).sum();
            }
        }
        out
    }

    /// Σ_k c_k η_k(x₂).
    pub fn synthesize(&self, coef: &[f64], x2: f64) -> f64 {
        coef.iter().enumerate().map(|(k, c)| c * Self::eta_at(k, x2)).sum()
    }
}

/// Projected coefficients at one x₁ location; matrices are stored at j * n + k.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a1: Vec<f64>,
    pub f: Vec<f64>,
}

/// Projects the coefficients and right side at an arbitrary x₁ (bicubic
/// evaluation of the sampled fields).
pub fn project_coefficients(field: &KeldyshField, f: &Field2, basis: &SpectralBasis, x1: f64) -> Projected {
    let xq = basis.quad_nodes();
    let mut g11 = Vec::with_capacity(xq.len());
    let mut g12 = Vec::with_capacity(xq.len());
    let mut g1 = Vec::with_capacity(xq.len());
    let mut gf = Vec::with_capacity(xq.len());
    for &y in xq {
        let (a, b, c) = field.eval(x1, y);
        g11.push(a);
        g12.push(b);
        g1.push(c);
        gf.push(f.eval(x1, y, Parity::Even));
    }
    Projected { a11: basis.pair(&g11), a12: basis.pair_deriv(&g12), a1: basis.pair(&g1), f: basis.project(&gf) }
}

/// Projection at grid node `i`, interpolating only in x₂.
fn project_node(field: &KeldyshField, f: &Field2, basis: &SpectralBasis, i: usize) -> Projected {
    let g = &field.grid;
    let h2 = g.h2();
    let xq = basis.quad_nodes();
    let sample = |row: &[f64], par: Parity| -> Vec<f64> {
        xq.iter().map(|&y| cubic_uniform(row, -1.0, h2, y, par)).collect()
    };
    Projected {
        a11: basis.pair(&sample(field.a11.row(i), Parity::Even)),
        a12: basis.pair_deriv(&sample(field.a12.row(i), Parity::Odd)),
        a1: basis.pair(&sample(field.a1.row(i), Parity::Even)),
        f: basis.project(&sample(f.row(i), Parity::Even)),
    }
}

/// The Galerkin ODE system on a uniform x₁ grid.
#[derive(Debug, Clone)]
pub struct GalerkinOdeSystem {
    pub n: usize,
    pub x1: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nodes: Vec<Projected>,
    pub eps: f64,
}

impl GalerkinOdeSystem {
    pub fn from_field(field: &KeldyshField, f: &Field2, basis: &SpectralBasis, eps: f64) -> Result<Self> {
        if field.grid != f.grid {
            return Err(Error::Domain("right side and coefficients live on different grids".into()));
        }
        let nodes: Vec<Projected> =
            (0..field.grid.nx1).into_par_iter().map(|i| project_node(field, f, basis, i)).collect();
        Ok(Self {
            n: basis.n,
            x1: field.grid.x1_nodes(),
            lambda: (0..basis.n).map(|k| basis.lambda(k)).collect(),
            nodes,
            eps,
        })
    }

    /// (𝔸₁, 𝔸₂, 𝔸₃) at node `i` in the first-order form, row-major n×n:
    /// 𝔸₁ = diag(λ), 𝔸₂ = −[2a₁₂^{ji} + a₁^{ji}], 𝔸₃ = −[a₁₁^{ji}].
    pub fn matrices(&self, i: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n;
        let p = &self.nodes[i];
        let mut a1 = vec![0.0; n * n];
        let mut a2 = vec![0.0; n * n];
        let mut a3 = vec![0.0; n * n];
        for r in 0..n {
            a1[r * n + r] = self.lambda[r];
            for c in 0..n {
                a2[r * n + c] = -(2.0 * p.a12[c * n + r] + p.a1[c * n + r]);
                a3[r * n + c] = -p.a11[c * n + r];
            }
        }
        (a1, a2, a3)
    }

    /// True when every projected coefficient matrix is diagonal to `tol`
    /// (relative to its largest entry).
    pub fn is_decoupled(&self, tol: f64) -> bool {
        let n = self.n;
        self.nodes.iter().all(|p| {
            [&p.a11, &p.a12, &p.a1].iter().all(|m| {
                let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
                (0..n).all(|j| (0..n).all(|k| j == k || m[j * n + k].abs() <= tol * scale))
            })
        })
    }

    fn h(&self) -> f64 {
        (self.x1[self.x1.len() - 1] - self.x1[0]) / (self.x1.len() - 1) as f64
    }
}

/// Mode amplitudes on the x₁ nodes, stored at i * n + k.
#[derive(Debug, Clone)]
pub struct GalerkinSolution {
    pub n: usize,
    pub x1: Vec<f64>,
    pub eps: f64,
    pub tau: f64,
    pub theta: Vec<f64>,
    pub dtheta: Vec<f64>,
    pub d2theta: Vec<f64>,
    /// ‖A x − b‖∞ / (‖A‖∞‖x‖∞ + ‖b‖∞) of the discrete system.
    pub linear_residual: f64,
    /// Largest-to-smallest pivot ratio of the banded factorisation.
    pub pivot_ratio: f64,
    pub decoupled: bool,
}

impl GalerkinSolution {
    pub fn theta(&self, i: usize, k: usize) -> f64 {
        self.theta[i * self.n + k]
    }

    fn synth(&self, amp: &[f64], nx2: usize) -> Field2 {
        let nx1 = self.x1.len();
        let grid = Grid2::new(self.x1[nx1 - 1], nx1, nx2);
        let x2 = grid.x2_nodes();
        let table: Vec<Vec<f64>> = (0..self.n).map(|k| x2.iter().map(|&y| SpectralBasis::eta_at(k, y)).collect()).collect();
        let mut out = Field2::zeros(&grid);
        for i in 0..nx1 {
            for (j, _) in x2.iter().enumerate() {
                let v: f64 = (0..self.n).map(|k| amp[i * self.n + k] * table[k][j]).sum();
                out.set(i, j, v);
            }
        }
        out
    }

    /// v(x₁ᵢ, x₂ⱼ) = Σ ϑ_k(x₁ᵢ) η_k(x₂ⱼ) on a grid with `nx2` wall-to-wall nodes.
    pub fn synthesize(&self, nx2: usize) -> Field2 {
        self.synth(&self.theta, nx2)
    }

    pub fn synthesize_d1(&self, nx2: usize) -> Field2 {
        self.synth(&self.dtheta, nx2)
    }

    pub fn synthesize_d11(&self, nx2: usize) -> Field2 {
        self.synth(&self.d2theta, nx2)
    }
}

struct Block {
    theta: Vec<f64>,
    z: Vec<f64>,
    resid: f64,
    pivot: f64,
}

/// Solves one group of coupled modes.
/// Splits the symmetric block of a11 on `modes` into its positive and
/// negative semidefinite parts, both stored row-major on the block indices.
fn split_block(a11: &[f64], n: usize, modes: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let m = modes.len();
    let sym = DMatrix::from_fn(m, m, |r, c| 0.5 * (a11[modes[r] * n + modes[c]] + a11[modes[c] * n + modes[r]]));
    if m == 1 {
        let v = sym[(0, 0)];
        return (vec![v.max(0.0)], vec![v.min(0.0)]);
    }
    let eig = SymmetricEigen::new(sym);
    let q = &eig.eigenvectors;
    let part = |sel: fn(f64) -> f64| {
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(sel));
        let p = q * d * q.transpose();
        (0..m * m).map(|k| p[(k / m, k % m)]).collect::<Vec<_>>()
    };
    (part(|v| v.max(0.0)), part(|v| v.min(0.0)))
}

fn solve_block(sys: &GalerkinOdeSystem, modes: &[usize]) -> Result<Block> {
    let n = sys.n;
    let m = modes.len();
    let nx = sys.x1.len();
    let last = nx - 1;
    let h = sys.h();
    let w = 2 * m;
    let dim = nx * w;
    let mut a = BandMatrix::zeros(dim, 3 * w, 3 * w);
    let mut b = vec![0.0; dim];
    let th = |i: usize, c: usize| i * w + c;
    let zz = |i: usize, c: usize| i * w + m + c;
    let eps = sys.eps;
    let viscous = eps > 0.0;
    // rows of the form x_r = 0, whose solution is set exactly after the solve
    let mut pinned: Vec<usize> = (0..m).map(|c| th(0, c)).collect();
    for i in 0..nx {
        for c in 0..m {
            let r = th(i, c);
            a.add(r, th(i, c), 1.0);
            if i > 0 {
                a.add(r, th(i - 1, c), -1.0);
                a.add(r, zz(i, c), -0.5 * h);
                a.add(r, zz(i - 1, c), -0.5 * h);
            }
        }
        let p = &sys.nodes[i];
        let (plus, minus) = split_block(&p.a11, n, modes);
        for (kc, &k) in modes.iter().enumerate() {
            let r = zz(i, kc);
            let diag = p.a11[k * n + k];
            // A viscous boundary layer thinner than one cell cannot be
            // represented; the reduced equation is imposed there instead.
            let resolved_in = viscous && eps >= diag * h;
            let resolved_out = viscous && eps >= -diag * h;
            if i == 0 && (resolved_in || diag <= 0.0) {
                a.add(r, zz(0, kc), 1.0);
                pinned.push(r);
                continue;
            }
            if i == last && (resolved_out || diag >= 0.0) {
                a.add(r, zz(last, kc), 1.5 / h);
                a.add(r, zz(last - 1, kc), -2.0 / h);
                a.add(r, zz(last - 2, kc), 0.5 / h);
                continue;
            }
            if viscous && i > 0 && i < last {
                let e = eps / (h * h);
                a.add(r, zz(i - 1, kc), e);
                a.add(r, zz(i, kc), -2.0 * e);
                a.add(r, zz(i + 1, kc), e);
            }
            // The positive part of a11 is differenced forward and the negative
            // part backward, falling back to central where a stencil would
            // leave the grid.  At the inlet the whole matrix is differenced
            // forward.
            let fwd: &[(isize, f64)] = if i + 2 <= last { &[(0, -1.5), (1, 2.0), (2, -0.5)] } else { &[(-1, -0.5), (1, 0.5)] };
            let bwd: &[(isize, f64)] = if i >= 2 { &[(0, 1.5), (-1, -2.0), (-2, 0.5)] } else { &[(-1, -0.5), (1, 0.5)] };
            for (jc, &j) in modes.iter().enumerate() {
                let (ap, am) = if i == 0 { (p.a11[j * n + k], 0.0) } else { (plus[jc * m + kc], minus[jc * m + kc]) };
                for (coef, stencil) in [(ap, fwd), (am, bwd)] {
                    if coef != 0.0 {
                        for &(off, s) in stencil {
                            let node = (i as isize + off) as usize;
                            a.add(r, zz(node, jc), coef * s / h);
                        }
                    }
                }
                let bb = 2.0 * p.a12[j * n + k] + p.a1[j * n + k];
                if bb != 0.0 {
                    a.add(r, zz(i, jc), bb);
                }
            }
            a.add(r, th(i, kc), -sys.lambda[k]);
            b[r] = p.f[k];
        }
    }
    let check = a.clone();
    let lu = a.factor()?;
    let mut x = b.clone();
    lu.solve(&mut x);
    for &r in &pinned {
        x[r] = 0.0;
    }
    let ax = check.matvec(&x);
    let rn = ax.iter().zip(&b).fold(0.0f64, |acc, (p, q)| acc.max((p - q).abs()));
    let xn = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let bn = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let an = (0..dim)
        .map(|r| (r.saturating_sub(3 * w)..(r + 3 * w + 1).min(dim)).map(|c| check.get(r, c).abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let denom = an * xn + bn;
    let resid = if denom > 0.0 { rn / denom } else { 0.0 };
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular { row: 0, pivot: 0.0, cond: lu.pivot_ratio });
    }
    let mut theta = vec![0.0; nx * m];
    let mut z = vec![0.0; nx * m];
    for i in 0..nx {
        for c in 0..m {
            theta[i * m + c] = x[th(i, c)];
            z[i * m + c] = x[zz(i, c)];
        }
    }
    Ok(Block { theta, z, resid, pivot: lu.pivot_ratio })
}

/// Solves the Galerkin ODE system for ε ≥ 0 by one banded solve (or one per
/// mode when the system is decoupled).
pub fn solve_viscous_galerkin(sys: &GalerkinOdeSystem) -> Result<GalerkinSolution> {
    let n = sys.n;
    let nx = sys.x1.len();
    if nx < 5 {
        return Err(Error::Domain(format!("need at least 5 x1 nodes (got {nx})")));
    }
    if !(sys.eps >= 0.0) {
        return Err(Error::Domain(format!("viscosity must be non-negative (got {})", sys.eps)));
    }
    let decoupled = sys.is_decoupled(1e-13);
    let groups: Vec<Vec<usize>> = if decoupled { (0..n).map(|k| vec![k]).collect() } else { vec![(0..n).collect()] };
    let blocks: Vec<Block> = groups.par_iter().map(|g| solve_block(sys, g)).collect::<Result<_>>()?;
    let mut theta = vec![0.0; nx * n];
    let mut dtheta = vec![0.0; nx * n];
    let mut resid = 0.0f64;
    let mut pivot = 0.0f64;
    for (g, blk) in groups.iter().zip(&blocks) {
        let m = g.len();
        for i in 0..nx {
            for (c, &k) in g.iter().enumerate() {
                theta[i * n + k] = blk.theta[i * m + c];
                dtheta[i * n + k] = blk.z[i * m + c];
            }
        }
        resid = resid.max(blk.resid);
        pivot = pivot.max(blk.pivot);
    }
    let h = sys.h();
    let mut d2theta = vec![0.0; nx * n];
    let zk = |i: usize, k: usize| dtheta[i * n + k];
    for k in 0..n {
        d2theta[k] = (-1.5 * zk(0, k) + 2.0 * zk(1, k) - 0.5 * zk(2, k)) / h;
        let l = nx - 1;
        d2theta[l * n + k] = (1.5 * zk(l, k) - 2.0 * zk(l - 1, k) + 0.5 * zk(l - 2, k)) / h;
        for i in 1..l {
            d2theta[i * n + k] = (zk(i + 1, k) - zk(i - 1, k)) / (2.0 * h);
        }
    }
    Ok(GalerkinSolution {
        n,
        x1: sys.x1.clone(),
        eps: sys.eps,
        tau: 0.0,
        theta,
        dtheta,
        d2theta,
        linear_residual: resid,
        pivot_ratio: pivot,
        decoupled,
    })
}

/// Projects and solves on a given (already extended) field without mollification.
pub fn solve_on_field(field: &KeldyshField, f: &Field2, eps: f64, n: usize) -> Result<GalerkinSolution> {
    let basis = SpectralBasis::for_grid(n, field.grid.nx2)?;
    let sys = GalerkinOdeSystem::from_field(field, f, &basis, eps)?;
    solve_viscous_galerkin(&sys)
}

/// Continuation schedule.  Stage s uses `eps[s]`, `tau[min(s, len−1)]` and
/// `n[min(s, len−1)]`; τ = 0 disables mollification.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub eps: Vec<f64>,
    pub tau: Vec<f64>,
    pub n: Vec<usize>,
    /// Stop when the H¹ gap between stages, relative to max(1, ‖v‖_{H¹}), drops below this.
    pub tol: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            eps: (0..24).map(|k| 0.1 * 0.5f64.powi(k)).collect(),
            tau: (0..24).map(|k| 0.2 * 0.5f64.powi(k)).collect(),
            n: vec![12],
            tol: 1e-6,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() || self.tau.is_empty() || self.n.is_empty() {
            return Err(Error::Domain("continuation schedule lists must be non-empty".into()));
        }
        if self.eps.iter().any(|e| !(*e >= 0.0)) || self.tau.iter().any(|t| !(*t >= 0.0 && *t < 1.0)) {
            return Err(Error::Domain("schedule needs eps >= 0 and 0 <= tau < 1".into()));
        }
        if self.eps.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Domain("eps schedule must be non-increasing".into()));
        }
        if self.n.iter().any(|&n| n == 0) || !(self.tol > 0.0) {
            return Err(Error::Domain("schedule needs n >= 1 and tol > 0".into()));
        }
        Ok(())
    }
}

/// Diagnostics of one continuation stage, measured on the original domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageDiag {
    pub eps: f64,
    pub tau: f64,
    pub n: usize,
    /// Relative H¹ distance to the previous stage (∞ for the first stage).
    pub h1_gap: f64,
    pub sqrt_eps_d11: f64,
    pub h1: f64,
    /// (√ε‖∂₁₁v‖ + ‖v‖_{H¹}) / ‖f‖_{L²}.
    pub measured_c: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub extension: Extension,
    /// Last-stage solution on the extended domain.
    pub solution: GalerkinSolution,
    /// Last-stage field restricted to the original domain.
    pub v: Field2,
    pub stages: Vec<StageDiag>,
}

/// Extends the coefficients, then solves along the schedule until successive
/// stages agree in H¹ on the original domain.
pub fn continuation_solve(field: &KeldyshField, f: &Field2, schedule: &Schedule) -> Result<ContinuationResult> {
    schedule.validate()?;
    let (ok, lambda) = check_kz_condition(field, field.m);
    if !ok {
        return Err(Error::Admissibility(format!("Kz-condition fails (lambda = {lambda:e})")));
    }
    if f.grid != field.grid {
        return Err(Error::Domain("right side and coefficients live on different grids".into()));
    }
    let ext = extend_coefficients(field)?;
    let f_ext = ext.extend_scalar(f)?;
    let nx0 = ext.nx_orig;
    let nx2 = field.grid.nx2;
    let f_norm = f.l2();
    let mut stages: Vec<StageDiag> = Vec::new();
    let mut prev: Option<Field2> = None;
    let mut gaps = (f64::INFINITY, f64::INFINITY);
    for (s, &eps) in schedule.eps.iter().enumerate() {
        let tau = schedule.tau[s.min(schedule.tau.len() - 1)];
        let n = schedule.n[s.min(schedule.n.len() - 1)];
        let (coef, rhs) = if tau > 0.0 {
            (mollify_coefficients(&ext.field, tau)?, mollify_field(&f_ext, tau)?)
        } else {
            (ext.field.clone(), f_ext.clone())
        };
        let mut sol = solve_on_field(&coef, &rhs, eps, n)?;
        sol.tau = tau;
        let v = sol.synthesize(nx2).restrict_x1(nx0);
        let d11 = sol.synthesize_d11(nx2).restrict_x1(nx0);
        let h1 = v.h1_norm(Parity::Even);
        let sqrt_eps_d11 = eps.sqrt() * d11.l2();
        let gap = match &prev {
            Some(p) => v.sub(p).h1_norm(Parity::Even) / h1.max(1.0),
            None => f64::INFINITY,
        };
        gaps = (gaps.1, gap);
        let measured_c = if f_norm > 0.0 { (sqrt_eps_d11 + h1) / f_norm } else { 0.0 };
        stages.push(StageDiag { eps, tau, n, h1_gap: gap, sqrt_eps_d11, h1, measured_c });
        if gap < schedule.tol {
            return Ok(ContinuationResult { extension: ext, solution: sol, v, stages });
        }
        prev = Some(v);
    }
    Err(Error::Continuation { prev: gaps.0, last: gaps.1 })
}

/// 𝓑_𝓛[v, φ] − ∫ f φ by grid quadrature with fourth-order differences.
///
/// 𝓑_𝓛[v, φ] = −∫ Σ a_ij ∂_i v ∂_j φ + ((∂₁a₁₁ + ∂₂a₁₂)∂₁v + ∂₁a₁₂ ∂₂v) φ − a₁ φ ∂₁v,
/// with a₂₁ = a₁₂ and a₂₂ = 1.  The test function must vanish at x₁ = 0 and x₁ = R.
pub fn weak_form_residual(field: &KeldyshField, v: &Field2, f: &Field2, test: &Field2) -> Result<f64> {
    weak_form_residual_viscous(field, v, f, test, 0.0)
}

/// As [`weak_form_residual`], adding −∫ ε ∂₁₁v ∂₁φ for the viscous problem.
pub fn weak_form_residual_viscous(field: &KeldyshField, v: &Field2, f: &Field2, test: &Field2, eps: f64) -> Result<f64> {
    let g = &field.grid;
    if v.grid != *g || f.grid != *g || test.grid != *g {
        return Err(Error::Domain("weak form inputs live on different grids".into()));
    }
    let scale = test.max_abs().max(f64::MIN_POSITIVE);
    let ends = test.row(0).iter().chain(test.row(g.nx1 - 1)).fold(0.0f64, |a, v| a.max(v.abs()));
    if ends > 1e-12 * scale {
        return Err(Error::Domain(format!("test function does not vanish at x1 = 0 and x1 = R ({ends:e})")));
    }
    let v1 = v.d1_4th();
    let v2 = v.d2_4th();
    let p1 = test.d1_4th();
    let p2 = test.d2_4th();
    let d1a11 = field.a11.d1_4th();
    let d2a12 = field.a12.d2_4th();
    let d1a12 = field.a12.d1_4th();
    let v11 = if eps > 0.0 { Some(v.d11()) } else { None };
    let mut integrand = Field2::zeros(g);
    for k in 0..g.len() {
        let (a11, a12, a1) = (field.a11.data[k], field.a12.data[k], field.a1.data[k]);
        let grad = a11 * v1.data[k] * p1.data[k]
            + a12 * (v1.data[k] * p2.data[k] + v2.data[k] * p1.data[k])
            + v2.data[k] * p2.data[k];
        let lower = ((d1a11.data[k] + d2a12.data[k]) * v1.data[k] + d1a12.data[k] * v2.data[k]) * test.data[k];
        let mut b = -(grad + lower - a1 * test.data[k] * v1.data[k]);
        if let Some(v11) = &v11 {
            b -= eps * v11.data[k] * p1.data[k];
        }
        integrand.data[k] = b - f.data[k] * test.data[k];
    }
    Ok(integrand.integral_simpson_x1())
}
