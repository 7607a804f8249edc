//! Pseudo momentum field, stream function, Lagrangian map and entropy transport.
//!
//! For a perturbation state the pseudo momentum is
//!
//!   m = ((γ−1)B/(γS₀))^{1/(γ−1)} v,   B = Φ̄ + Ψ − |v|²/2,
//!
//! scaled so that the background gives m = J e₁.  When m is divergence free
//! the stream function ϑ(x₁, x₂) = ∫_{−1}^{x₂} m₁ dt is constant along its
//! integral curves, and the entropy T = (S_en − S₀)∘ℒ with ϑ(0, ℒ(x)) = ϑ(x)
//! solves m·∇T = 0 with inlet data S_en − S₀.

use std::io::Write;

use crate::background::BackgroundState;
use crate::error::{Error, Result};
use crate::io::write_grid_csv;
use crate::linearized::{BackgroundColumns, Perturbation};
use crate::numerics::grid::{Field2, Grid2};
use crate::numerics::interp::{CubicSpline, Parity};
use crate::numerics::roots::newton_bisect;

/// Pseudo momentum (m₁, m₂) of a perturbation state.
pub fn momentum_field(bg: &BackgroundState, state: &Perturbation) -> Result<(Field2, Field2)> {
    let grid = state.grid().clone();
    let p = *bg.params();
    let (g, s0) = (p.gamma, p.s0);
    let cols = BackgroundColumns::sample(bg, &grid)?;
    let phi1 = state.phi.d1();
    let phi2 = state.phi.d2(Parity::Odd);
    let p1 = state.psi.d1();
    let p2 = state.psi.d2(Parity::Even);
    let mut m1 = Field2::zeros(&grid);
    let mut m2 = Field2::zeros(&grid);
    for i in 0..grid.nx1 {
        let u = cols.u[i];
        let bbar = g * s0 / (g - 1.0) * cols.rho[i].powf(g - 1.0);
        for j in 0..grid.nx2 {
            let s1 = p1.at(i, j) + phi2.at(i, j);
            let s2 = p2.at(i, j) - phi1.at(i, j);
            let b = bbar + state.big_psi.at(i, j) - (u * s1 + 0.5 * (s1 * s1 + s2 * s2));
            if !(b > 0.0) {
                return Err(Error::Vacuum { i, j });
            }
            let rho = ((g - 1.0) * b / (g * s0)).powf(1.0 / (g - 1.0));
            m1.set(i, j, rho * (u + s1));
            m2.set(i, j, rho * s2);
        }
    }
    Ok((m1, m2))
}

/// Momentum field with its stream function.
#[derive(Debug, Clone)]
pub struct TransportField {
    pub grid: Grid2,
    pub m1: Field2,
    pub m2: Field2,
    pub theta: Field2,
    /// Total flux ϑ(0, 1).
    pub theta_bar: f64,
    /// max |ϑ(x₁, 1) − ϑ(0, 1)|.
    pub flux_drift: f64,
    /// max |∂₁m₁ + ∂₂m₂| by second-order differences.
    pub divergence_max: f64,
}

/// Default flux tolerance 10(h₁² + h₂²)·ϑ̄.
pub fn default_flux_tol(grid: &Grid2, theta_bar: f64) -> f64 {
    10.0 * (grid.h1().powi(2) + grid.h2().powi(2)) * theta_bar.abs()
}

/// Cumulative ∫_{x₀}^{x_k} f on a uniform grid: Simpson over pairs of cells,
/// with the three-point rule h(5f₀ + 8f₁ − f₂)/12 for a trailing single cell.
fn cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (f[0] + f[1]);
        return out;
    }
    let mut k = 2;
    while k < n {
        out[k] = out[k - 2] + h / 3.0 * (f[k - 2] + 4.0 * f[k - 1] + f[k]);
        k += 2;
    }
    let mut k = 1;
    while k < n {
        out[k] = if k + 1 < n {
            out[k - 1] + h / 12.0 * (5.0 * f[k - 1] + 8.0 * f[k] - f[k + 1])
        } else {
            out[k - 1] + h / 12.0 * (5.0 * f[k] + 8.0 * f[k - 1] - f[k - 2])
        };
        k += 2;
    }
    out
}

/// Integrates m₁ across each x₁-line and checks the flux constancy.
///
/// Requires m₁ ≥ J/2 at every node and |ϑ(x₁, 1) − ϑ(0, 1)| ≤ `flux_tol`.
pub fn build_stream_function(m1: &Field2, m2: &Field2, j: f64, flux_tol: f64) -> Result<TransportField> {
    let grid = m1.grid.clone();
    if m2.grid != grid {
        return Err(Error::Domain("momentum components live on different grids".into()));
    }
    let mmin = m1.data.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(mmin >= 0.5 * j) {
        return Err(Error::Admissibility(format!("m1 = {mmin:e} below J/2 = {:e}", 0.5 * j)));
    }
    let h2 = grid.h2();
    let mut theta = Field2::zeros(&grid);
    for i in 0..grid.nx1 {
        let c = cumulative_simpson(m1.row(i), h2);
        for (jx, v) in c.into_iter().enumerate() {
            theta.set(i, jx, v);
        }
    }
    let top = grid.nx2 - 1;
    let theta_bar = theta.at(0, top);
    let flux_drift = (0..grid.nx1).fold(0.0f64, |d, i| d.max((theta.at(i, top) - theta_bar).abs()));
    if flux_drift > flux_tol {
        return Err(Error::DivergenceDefect { drift: flux_drift, tol: flux_tol });
    }
    let div = m1.d1().add(&m2.d2(Parity::Odd));
    Ok(TransportField {
        grid,
        m1: m1.clone(),
        m2: m2.clone(),
        theta,
        theta_bar,
        flux_drift,
        divergence_max: div.max_abs(),
    })
}

/// Sampled Lagrangian map ℒ with ϑ(0, ℒ(x)) = ϑ(x).
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianMap {
    pub grid: Grid2,
    pub map: Field2,
}

/// Inverts the inlet stream function on every node.
///
/// Values within `range_tol` outside [ϑ(0, −1), ϑ(0, 1)] are clamped to the
/// walls; ℒ(0, ·) and ℒ(·, ±1) are set to the identity exactly.
pub fn lagrangian_map(field: &TransportField, range_tol: f64) -> Result<LagrangianMap> {
    let grid = &field.grid;
    let x2 = grid.x2_nodes();
    let inlet: Vec<f64> = field.theta.row(0).to_vec();
    let spline = CubicSpline::new(&x2, &inlet);
    let (lo, hi) = (inlet[0], inlet[inlet.len() - 1]);
    let top = grid.nx2 - 1;
    let mut map = Field2::zeros(grid);
    for jx in 0..grid.nx2 {
        map.set(0, jx, x2[jx]);
    }
    for i in 1..grid.nx1 {
        map.set(i, 0, -1.0);
        map.set(i, top, 1.0);
        for jx in 1..top {
            let target = field.theta.at(i, jx);
            let y = if target <= lo {
                if lo - target > range_tol {
                    return Err(Error::Range(format!("theta = {target:e} below inlet minimum {lo:e} at ({i}, {jx})")));
                }
                -1.0
            } else if target >= hi {
                if target - hi > range_tol {
                    return Err(Error::Range(format!("theta = {target:e} above inlet maximum {hi:e} at ({i}, {jx})")));
                }
                1.0
            } else {
                newton_bisect(|y| (spline.eval(y) - target, spline.deriv(y)), -1.0, 1.0, 1e-12, 0.0)?
            };
            map.set(i, jx, y);
        }
    }
    Ok(LagrangianMap { grid: grid.clone(), map })
}

/// T = (S_en − S₀)∘ℒ with the inlet profile sampled on the x₂ nodes and
/// represented by a not-a-knot cubic spline.
pub fn transport_entropy(map: &LagrangianMap, s_en: &[f64], s0: f64) -> Result<Field2> {
    let grid = &map.grid;
    if s_en.len() != grid.nx2 {
        return Err(Error::Domain(format!("inlet entropy has {} samples for {} nodes", s_en.len(), grid.nx2)));
    }
    let dev: Vec<f64> = s_en.iter().map(|s| s - s0).collect();
    let spline = CubicSpline::new(&grid.x2_nodes(), &dev);
    Ok(map.map.map(|y| spline.eval(y)))
}

/// Writes `x1,x2,theta,L,T`.
pub fn write_transport_csv<W: Write>(w: W, field: &TransportField, map: &LagrangianMap, t: &Field2) -> std::io::Result<()> {
    write_grid_csv(w, &field.grid, &["theta", "L", "T"], &[&field.theta, &map.map, t])
}
