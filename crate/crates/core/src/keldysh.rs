//! Coefficient fields of the mixed-type operator
//!
//!   𝓛u = a₁₁ ∂₁₁u + 2 a₁₂ ∂₁₂u + ∂₂₂u + a₁ ∂₁u
//!
//! on the rectangle (0, R) × (−1, 1), the structure coefficients 𝒦_l, and the
//! extension/mollification steps that turn a field on (0, R) into a smooth
//! field on (0, R_*) whose right end is uniformly elliptic.

use std::io::Write;

use crate::error::{Error, Result};
use crate::numerics::grid::{Field2, Grid2};
use crate::numerics::interp::{cubic_uniform, Parity};
use crate::numerics::quad::gauss_legendre;
use crate::numerics::smooth::{bump, smooth_step, step_jet, Jet};

/// Reflection abscissae b_i and weights c_i: f(R+s) ≈ Σ c_i f(R − b_i s)
/// reproduces f and its first three derivatives at R.
const REFLECT_B: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
const REFLECT_C: [f64; 4] = [20.0, -45.0, 36.0, -10.0];

/// Coefficients (a₁₁, a₁₂, a₁) sampled on a tensor grid.
///
/// Between nodes the fields are evaluated by tensor cubic interpolation; in
/// x₂ the wall ghosts use even reflection for a₁₁, a₁ and point reflection
/// for a₁₂, which is odd about the walls.
#[derive(Debug, Clone, PartialEq)]
pub struct KeldyshField {
    pub grid: Grid2,
    pub a11: Field2,
    pub a12: Field2,
    pub a1: Field2,
    /// Regularity order, m ≥ 4.
    pub m: usize,
}

/// Boundary diagnostics of a [`KeldyshField`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldReport {
    /// max |a₁₂| on the walls.
    pub wall_a12: f64,
    /// min over the entrance of a₁₁ − a₁₂².
    pub entry_margin: f64,
    /// max over the exit of a₁₁.
    pub exit_max: f64,
    pub compat: CompatReport,
}

/// Finite-difference defects of the wall compatibility conditions.
///
/// One-sided stencils are used (4th order for ∂₂, 3rd order for ∂₂₂), so the
/// defects of a compatible field are at the level of the stencil error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompatReport {
    /// max |∂₂a₁₁| on the walls.
    pub odd_a11: f64,
    /// max |∂₂a₁| on the walls.
    pub odd_a1: f64,
    /// max |a₁₂|, |∂₂₂a₁₂| on the walls.
    pub even_a12: f64,
}

impl KeldyshField {
    pub fn new(a11: Field2, a12: Field2, a1: Field2, m: usize) -> Result<Self> {
        if m < 4 {
            return Err(Error::Domain(format!("regularity order m must be at least 4 (got {m})")));
        }
        if a11.grid != a12.grid || a11.grid != a1.grid {
            return Err(Error::Domain("coefficient fields live on different grids".into()));
        }
        if a11.data.iter().chain(&a12.data).chain(&a1.data).any(|v| !v.is_finite()) {
            return Err(Error::Domain("coefficient field contains non-finite values".into()));
        }
        Ok(Self { grid: a11.grid.clone(), a11, a12, a1, m })
    }

    /// Samples closed-form coefficients `f(x1, x2) -> (a11, a12, a1)`.
    pub fn from_fn<F: Fn(f64, f64) -> (f64, f64, f64)>(grid: &Grid2, m: usize, f: F) -> Result<Self> {
        let a11 = Field2::from_fn(grid, |x, y| f(x, y).0);
        let a12 = Field2::from_fn(grid, |x, y| f(x, y).1);
        let a1 = Field2::from_fn(grid, |x, y| f(x, y).2);
        Self::new(a11, a12, a1, m)
    }

    pub fn r(&self) -> f64 {
        self.grid.r
    }

    /// Bicubic evaluation of (a₁₁, a₁₂, a₁).
    pub fn eval(&self, x1: f64, x2: f64) -> (f64, f64, f64) {
        (
            self.a11.eval(x1, x2, Parity::Even),
            self.a12.eval(x1, x2, Parity::Odd),
            self.a1.eval(x1, x2, Parity::Even),
        )
    }

    /// The field on the first `nx1` x₁-nodes.
    pub fn restrict(&self, nx1: usize) -> Self {
        Self {
            grid: Grid2::new(self.grid.x1(nx1 - 1), nx1, self.grid.nx2),
            a11: self.a11.restrict_x1(nx1),
            a12: self.a12.restrict_x1(nx1),
            a1: self.a1.restrict_x1(nx1),
            m: self.m,
        }
    }

    pub fn report(&self) -> FieldReport {
        let g = &self.grid;
        let last = g.nx1 - 1;
        let mut wall_a12 = 0.0f64;
        for i in 0..g.nx1 {
            wall_a12 = wall_a12.max(self.a12.at(i, 0).abs()).max(self.a12.at(i, g.nx2 - 1).abs());
        }
        let entry_margin = (0..g.nx2)
            .map(|j| self.a11.at(0, j) - self.a12.at(0, j).powi(2))
            .fold(f64::INFINITY, f64::min);
        let exit_max = (0..g.nx2).map(|j| self.a11.at(last, j)).fold(f64::NEG_INFINITY, f64::max);
        let compat = CompatReport {
            odd_a11: odd_wall_defect(&self.a11),
            odd_a1: odd_wall_defect(&self.a1),
            even_a12: even_wall_defect(&self.a12),
        };
        FieldReport { wall_a12, entry_margin, exit_max, compat }
    }

    /// Checks parts (ii) and (iii) of the structure condition.
    pub fn validate(&self, wall_tol: f64) -> Result<FieldReport> {
        let r = self.report();
        if r.wall_a12 > wall_tol {
            return Err(Error::Admissibility(format!("a12 = {:e} on the walls", r.wall_a12)));
        }
        if !(r.entry_margin > 0.0) {
            return Err(Error::Admissibility(format!(
                "entrance is not elliptic: min(a11 - a12^2) = {:e}",
                r.entry_margin
            )));
        }
        if !(r.exit_max < 0.0) {
            return Err(Error::Admissibility(format!("exit is not hyperbolic: max a11 = {:e}", r.exit_max)));
        }
        Ok(r)
    }

    /// CSV dump with header `x1,x2,a11,a12,a1`, x₁ outermost.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        crate::io::write_grid_csv(w, &self.grid, &["a11", "a12", "a1"], &[&self.a11, &self.a12, &self.a1])
    }
}

fn odd_wall_defect(f: &Field2) -> f64 {
    let g = &f.grid;
    if g.nx2 < 6 {
        return 0.0;
    }
    let h = g.h2();
    let mut worst = 0.0f64;
    for i in 0..g.nx1 {
        let r = f.row(i);
        for side in [false, true] {
            let v: Vec<f64> = if side { r.iter().rev().take(5).copied().collect() } else { r[..5].to_vec() };
            let d1 = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h);
            worst = worst.max(d1.abs());
        }
    }
    worst
}

fn even_wall_defect(f: &Field2) -> f64 {
    let g = &f.grid;
    if g.nx2 < 5 {
        return 0.0;
    }
    let h = g.h2();
    let mut worst = 0.0f64;
    for i in 0..g.nx1 {
        let r = f.row(i);
        for side in [false, true] {
            let v: Vec<f64> = if side { r.iter().rev().take(5).copied().collect() } else { r[..5].to_vec() };
            let d2 = (35.0 * v[0] - 104.0 * v[1] + 114.0 * v[2] - 56.0 * v[3] + 11.0 * v[4]) / (12.0 * h * h);
            worst = worst.max(v[0].abs()).max(d2.abs());
        }
    }
    worst
}

/// 𝒦_l = a₁ + ((2l−3)/2) ∂₁a₁₁ − ∂₂a₁₂ on the grid (4th-order differences).
pub fn kz_coefficient(field: &KeldyshField, l: usize) -> Result<Field2> {
    if l == 0 || l > field.m {
        return Err(Error::Domain(format!("Kz index l = {l} outside 1..={}", field.m)));
    }
    let (d1a11, d2a12) = kz_parts(field);
    Ok(kz_from_parts(field, &d1a11, &d2a12, l))
}

fn kz_parts(field: &KeldyshField) -> (Field2, Field2) {
    (field.a11.d1_4th(), field.a12.d2_4th())
}

fn kz_from_parts(field: &KeldyshField, d1a11: &Field2, d2a12: &Field2, l: usize) -> Field2 {
    let c = (2.0 * l as f64 - 3.0) / 2.0;
    let mut out = field.a1.clone();
    for (k, o) in out.data.iter_mut().enumerate() {
        *o += c * d1a11.data[k] - d2a12.data[k];
    }
    out
}

/// Pointwise max over l = 1..=m of 𝒦_l.  Since 𝒦_l is affine in l the max is
/// attained at l = 1 or l = m.
pub fn kz_max_field(field: &KeldyshField, m: usize) -> Field2 {
    let (d1a11, d2a12) = kz_parts(field);
    let k1 = kz_from_parts(field, &d1a11, &d2a12, 1);
    let km = kz_from_parts(field, &d1a11, &d2a12, m.max(1));
    k1.zip_map(&km, f64::max)
}

/// Returns (ok, λ) with λ = −max over the grid and l ∈ 1..=m of 𝒦_l.
pub fn check_kz_condition(field: &KeldyshField, m: usize) -> (bool, f64) {
    let lambda = -kz_max_field(field, m).data.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    (lambda > 0.0, lambda)
}

/// Extends a sampled field across x₁ = R by `extra` nodes using the C³
/// reflection f(R+s) = Σ c_i f(R − b_i s).
pub fn reflect_extend(f: &Field2, extra: usize) -> Result<Field2> {
    let g = &f.grid;
    let h = g.h1();
    let r = g.r;
    if 2.0 * extra as f64 * h > r + 1e-12 * r {
        return Err(Error::ExtensionFailure(format!(
            "reflection by {extra} nodes needs at least {} in x1",
            2.0 * extra as f64 * h
        )));
    }
    let nx = g.nx1 + extra;
    let ng = Grid2::new((nx - 1) as f64 * h, nx, g.nx2);
    let mut out = Field2::zeros(&ng);
    out.data[..f.data.len()].copy_from_slice(&f.data);
    for j in 0..g.nx2 {
        let col = f.column(j);
        for e in 1..=extra {
            let s = e as f64 * h;
            let v: f64 = REFLECT_B
                .iter()
                .zip(REFLECT_C)
                .map(|(&b, c)| c * cubic_uniform(&col, 0.0, h, r - b * s, Parity::None))
                .sum();
            out.set(g.nx1 - 1 + e, j, v);
        }
    }
    Ok(out)
}

/// χ with χ = 1 for x ≤ a, χ = 0 for x ≥ a + w, and derivatives up to order 3.
pub fn blend_down(x: f64, a: f64, w: f64) -> [f64; 4] {
    let s = smooth_step((x - a) / w);
    [1.0 - s[0], -s[1] / w, -s[2] / (w * w), -s[3] / (w * w * w)]
}

/// Output of [`extend_coefficients`].
#[derive(Debug, Clone)]
pub struct Extension {
    pub field: KeldyshField,
    /// Number of x₁-nodes of the original domain.
    pub nx_orig: usize,
    pub r: f64,
    pub r_star: f64,
    pub delta: f64,
    pub omega: f64,
    pub mu: f64,
    /// λ of the input field.
    pub lambda: f64,
    /// −max 𝒦* of the extended field; at least λ/2 on success.
    pub lambda_ext: f64,
}

impl Extension {
    /// Extends any scalar sampled on the original grid to (0, R_*).
    pub fn extend_scalar(&self, f: &Field2) -> Result<Field2> {
        reflect_extend(f, self.field.grid.nx1 - self.nx_orig)
    }
}

/// Minimum number of x₁-nodes added past R; below this the blending zones
/// cannot be resolved.
pub const MIN_EXTENSION_NODES: usize = 16;

/// Extends (a₁₁, a₁₂, a₁) to (0, R_*) with an elliptic right end.
///
/// R_* is the largest grid point ≤ 3R/2 up to which the reflected field keeps
/// 𝒦 ≤ −λ/2; then a₁₁ is blended to ω and a₁ receives μ(1 − χ⁽²⁾).
pub fn extend_coefficients(field: &KeldyshField) -> Result<Extension> {
    let (ok, lambda) = check_kz_condition(field, field.m);
    if !ok {
        return Err(Error::Admissibility(format!("Kz-condition fails on the input field (lambda = {lambda:e})")));
    }
    let g = &field.grid;
    let h = g.h1();
    let extra_max = ((0.5 * g.r / h) + 1e-9).floor() as usize;
    if extra_max < MIN_EXTENSION_NODES {
        return Err(Error::ExtensionFailure(format!(
            "grid too coarse for extension: {extra_max} nodes available past R"
        )));
    }
    let t11 = reflect_extend(&field.a11, extra_max)?;
    let t12 = reflect_extend(&field.a12, extra_max)?;
    let t1 = reflect_extend(&field.a1, extra_max)?;
    let tilde = KeldyshField::new(t11, t12, t1, field.m)?;
    let kmax = kz_max_field(&tilde, field.m);
    let mut extra = extra_max;
    'scan: for e in 1..=extra_max {
        for j in 0..g.nx2 {
            if kmax.at(g.nx1 - 1 + e, j) > -0.5 * lambda {
                extra = e - 1;
                break 'scan;
            }
        }
    }
    if extra < MIN_EXTENSION_NODES {
        return Err(Error::ExtensionFailure(format!(
            "Kz margin lambda/2 is lost {extra} nodes past R; refine the grid"
        )));
    }
    let tilde = tilde.restrict(g.nx1 + extra);
    let ng = tilde.grid.clone();
    let r = g.r;
    let r_star = ng.r;
    let delta = (r_star - r) / 4.0;
    let chi1: Vec<f64> = (0..ng.nx1).map(|i| blend_down(ng.x1(i), r + 2.0 * delta, delta)[0]).collect();
    let chi2: Vec<f64> = (0..ng.nx1).map(|i| blend_down(ng.x1(i), r + delta, delta)[0]).collect();

    let mut omega = 1.0;
    let mut found = false;
    for _ in 0..60 {
        let mut worst = f64::INFINITY;
        for i in 0..ng.nx1 {
            if ng.x1(i) >= r_star - delta {
                for j in 0..ng.nx2 {
                    let a11 = tilde.a11.at(i, j) * chi1[i] + omega * (1.0 - chi1[i]);
                    worst = worst.min(a11 - tilde.a12.at(i, j).powi(2));
                }
            }
        }
        if worst >= 0.5 * omega {
            found = true;
            break;
        }
        omega *= 2.0;
    }
    if !found {
        return Err(Error::ExtensionFailure("omega search exceeded 60 doublings".into()));
    }
    let a11s = Field2 {
        grid: ng.clone(),
        data: (0..ng.len())
            .map(|k| {
                let i = k / ng.nx2;
                tilde.a11.data[k] * chi1[i] + omega * (1.0 - chi1[i])
            })
            .collect(),
    };
    let mut mu = -1.0;
    for _ in 0..60 {
        let a1s = Field2 {
            grid: ng.clone(),
            data: (0..ng.len())
                .map(|k| {
                    let i = k / ng.nx2;
                    tilde.a1.data[k] * chi1[i] + mu * (1.0 - chi2[i])
                })
                .collect(),
        };
        let cand = KeldyshField::new(a11s.clone(), tilde.a12.clone(), a1s, field.m)?;
        let (_, lam_ext) = check_kz_condition(&cand, field.m);
        if lam_ext >= 0.5 * lambda {
            return Ok(Extension {
                field: cand,
                nx_orig: g.nx1,
                r,
                r_star,
                delta,
                omega,
                mu,
                lambda,
                lambda_ext: lam_ext,
            });
        }
        mu *= 2.0;
    }
    Err(Error::ExtensionFailure("mu search exceeded 60 doublings".into()))
}

/// Normalised mollifier rule: nodes s_q ∈ (−τ, τ) and weights summing to 1.
fn mollifier_rule(tau: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(32);
    let mut wt: Vec<f64> = x.iter().zip(&w).map(|(&t, &wq)| wq * bump(t)).collect();
    let mass: f64 = wt.iter().sum();
    wt.iter_mut().for_each(|v| *v /= mass);
    (x.iter().map(|&t| t * tau).collect(), wt)
}

/// Value of a column at any x, using the C³ reflection beyond both ends.
fn eval_reflected(col: &[f64], h: f64, x: f64) -> f64 {
    let r = (col.len() - 1) as f64 * h;
    let at = |y: f64| cubic_uniform(col, 0.0, h, y, Parity::None);
    if x < 0.0 {
        REFLECT_B.iter().zip(REFLECT_C).map(|(&b, c)| c * at(-b * x)).sum()
    } else if x > r {
        let s = x - r;
        REFLECT_B.iter().zip(REFLECT_C).map(|(&b, c)| c * at(r - b * s)).sum()
    } else {
        at(x)
    }
}

/// x₁-convolution of a sampled field with the bump mollifier of radius τ.
pub fn mollify_field(f: &Field2, tau: f64) -> Result<Field2> {
    let g = &f.grid;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("mollifier radius must lie in (0, 1) (got {tau})")));
    }
    if 2.0 * tau > g.r {
        return Err(Error::Domain(format!("mollifier radius {tau} too large for domain length {}", g.r)));
    }
    let (s, w) = mollifier_rule(tau);
    let h = g.h1();
    let mut out = Field2::zeros(g);
    for j in 0..g.nx2 {
        let col = f.column(j);
        for i in 0..g.nx1 {
            let x = g.x1(i);
            let v: f64 = s.iter().zip(&w).map(|(&sq, &wq)| wq * eval_reflected(&col, h, x - sq)).sum();
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Mollifies all three coefficients in x₁.
pub fn mollify_coefficients(field: &KeldyshField, tau: f64) -> Result<KeldyshField> {
    KeldyshField::new(
        mollify_field(&field.a11, tau)?,
        mollify_field(&field.a12, tau)?,
        mollify_field(&field.a1, tau)?,
        field.m,
    )
}

/// Shape of a member of the cut-off family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffKind {
    /// η_r^{(k)}: one bump near each end.
    Double,
    /// ζ_r^{(k)}: one plateau spanning the interior.
    Single,
}

/// Smooth cut-off functions η_r^{(k)} and ζ_r^{(k)} on [0, R_*].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffFamily {
    pub r: f64,
    pub r_star: f64,
    pub k: usize,
    pub kind: CutoffKind,
}

impl CutoffFamily {
    pub fn new(kind: CutoffKind, r: f64, r_star: f64, k: usize, m: usize) -> Result<Self> {
        if k == 0 || k + 1 > m {
            return Err(Error::Domain(format!("cut-off index k = {k} outside 1..={}", m - 1)));
        }
        if !(r > 0.0) || (3 * (m - 1) + 2) as f64 * r > r_star {
            return Err(Error::Domain(format!("cut-off width r = {r} incompatible with R_* = {r_star}")));
        }
        Ok(Self { r, r_star, k, kind })
    }

    /// (0-set edge, 1-set edge) of the left rising transition.
    fn rise(&self) -> (f64, f64) {
        let (k, r) = (self.k as f64, self.r);
        match self.kind {
            CutoffKind::Double => ((3.0 * k - 2.0) / 2.0 * r, (3.0 * k - 1.0) / 2.0 * r),
            CutoffKind::Single => (3.0 * k / 2.0 * r, (3.0 * k + 1.0) / 2.0 * r),
        }
    }

    /// Value and first three derivatives at x₁.
    pub fn eval(&self, x1: f64) -> [f64; 4] {
        let (a0, a1) = self.rise();
        let w = a1 - a0;
        let rs = self.r_star;
        let up = |x: f64, lo: f64| step_jet(Jet::var(x).add(Jet::constant(-lo)).scale(1.0 / w));
        let down = |x: f64, lo: f64| {
            step_jet(Jet::constant(1.0).add(Jet::var(x).add(Jet::constant(-lo)).scale(-1.0 / w)))
        };
        let jet = match self.kind {
            CutoffKind::Single => {
                if x1 <= 0.5 * rs {
                    up(x1, a0)
                } else {
                    down(x1, rs - a1)
                }
            }
            CutoffKind::Double => {
                let k = self.k as f64;
                let b1 = (3.0 * k + 1.0) / 2.0 * self.r;
                if x1 <= 0.5 * rs {
                    up(x1, a0).mul(down(x1, b1))
                } else {
                    up(x1, rs - b1 - w).mul(down(x1, rs - a1))
                }
            }
        };
        jet.derivs()
    }
}
