//! Fast invariant suite run by `kep verify`.
//!
//! Each check builds its own inputs from the configured physical parameters,
//! so the checks are independent and run in parallel.

use anyhow::Result;
use keldysh_ep::background::{eval_f, hamiltonian, integrate_background, nozzle_length, KappaFns, PhysicalParams};
use keldysh_ep::keldysh::{check_kz_condition, KeldyshField};
use keldysh_ep::linearized::{build_coefficients, ledger_x1_form, multiplier_ledger, sonic_interface, Perturbation, DEFAULT_D0};
use keldysh_ep::nonlinear::{fixed_point_solve, BoundaryData, FixedPointOptions};
use keldysh_ep::numerics::grid::{Field2, Grid2};
use rayon::prelude::*;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

type CheckFn = fn(&PhysicalParams) -> keldysh_ep::Result<(bool, String)>;

fn hamiltonian_conservation(p: &PhysicalParams) -> keldysh_ep::Result<(bool, String)> {
    let len = nozzle_length(p, 0.9, 1.1)?;
    let bg = integrate_background(p, 0.9 * p.u_s(), len, 401)?;
    let mut worst = 0.0f64;
    for (&u, &e) in bg.u1.iter().zip(&bg.e) {
        worst = worst.max(hamiltonian(p, u, e)?.abs());
    }
    Ok((worst <= 1e-8, format!("max |h| = {worst:.3e}")))
}

fn closed_form_anchors(p: &PhysicalParams) -> keldysh_ep::Result<(bool, String)> {
    let us = p.u_s();
    let f_exact = (p.j / (p.gamma + 1.0) * (1.0 / us - 1.0 / p.u_inf())).sqrt();
    let df = (eval_f(p, us)? - f_exact).abs();
    let kf = KappaFns::new(p);
    let h_exact = (1.0 - 1.0 / p.zeta0).sqrt() / (2.0 * (p.gamma + 1.0)).sqrt();
    let (_, h1) = kf.eval(1.0)?;
    let dh = (h1 - h_exact).abs();
    Ok((df <= 1e-12 && dh <= 1e-12, format!("|F(u_s) - exact| = {df:.1e}, |H(1) - exact| = {dh:.1e}")))
}

fn length_duality(p: &PhysicalParams) -> keldysh_ep::Result<(bool, String)> {
    let len = nozzle_length(p, 0.9, 1.1)?;
    let bg = integrate_background(p, 0.9 * p.u_s(), len, 401)?;
    let kl = bg.u1[bg.u1.len() - 1] / p.u_s();
    let rel = (kl - 1.1).abs() / 1.1;
    Ok((rel <= 1e-6, format!("kappa at x1 = L: {kl:.12} (relative gap {rel:.1e})")))
}

fn kz_gate(p: &PhysicalParams) -> keldysh_ep::Result<(bool, String)> {
    let len = nozzle_length(p, 0.97, 1.03)?;
    let bg = integrate_background(p, 0.97 * p.u_s(), len, 201)?;
    let grid = Grid2::new(bg.length(), bg.x1_grid.len(), 17);
    let coeffs = build_coefficients(&bg, &Perturbation::zeros(&grid), &Field2::zeros(&grid), DEFAULT_D0)?;
    let field = coeffs.keldysh_field()?;
    let (ok, lambda) = check_kz_condition(&field, field.m);
    let bad = KeldyshField::from_fn(&Grid2::new(1.0, 41, 17), 4, |x, _| (-x, 0.0, 0.0))?;
    let (bad_ok, bad_lambda) = check_kz_condition(&bad, 4);
    Ok((ok && lambda > 0.0 && !bad_ok, format!("background lambda = {lambda:.3e}, counterexample lambda = {bad_lambda:.3e}")))
}

fn background_interface(p: &PhysicalParams) -> keldysh_ep::Result<(bool, String)> {
    let len = nozzle_length(p, 0.9, 1.1)?;
    let bg = integrate_background(p, 0.9 * p.u_s(), len, 201)?;
    let grid = Grid2::new(bg.length(), bg.x1_grid.len(), 17);
    let coeffs = build_coefficients(&bg, &Perturbation::zeros(&grid), &Field2::zeros(&grid), DEFAULT_D0)?;
    let iface = sonic_interface(&coeffs)?;
    Ok((iface.deviation_max <= 1e-8, format!("max |g_s - ell_s| = {:.1e}", iface.deviation_max)))
}

fn ledger_forms(p: &PhysicalParams) -> keldysh_ep::Result<(bool, String)> {
    let eta = 0.75 * p.gamma;
    let ledger = multiplier_ledger(p, eta, 0.999, 1.001)?;
    let bg = integrate_background(p, 0.999 * p.u_s(), ledger.length, 201)?;
    let x1 = ledger_x1_form(&bg, eta);
    let mut gap = 0.0f64;
    for i in 0..x1.x1.len() {
        let q = ledger.at(x1.kappa[i])?;
        gap = gap.max((q.alpha - x1.alpha[i]).abs() / x1.alpha[i].abs());
    }
    Ok((gap <= 1e-8, format!("relative kappa/x1 gap = {gap:.1e}, min alpha = {:.3e}", ledger.margin)))
}

fn background_fixed_point(p: &PhysicalParams) -> keldysh_ep::Result<(bool, String)> {
    let len = nozzle_length(p, 0.9, 1.1)?;
    let bg = integrate_background(p, 0.9 * p.u_s(), len, 101)?;
    let opts = FixedPointOptions { nx2: 17, ..Default::default() };
    let b = fixed_point_solve(&bg, &BoundaryData::background(&bg), &opts)?;
    let mut worst = 0.0f64;
    for i in 0..bg.x1_grid.len() {
        for j in 0..17 {
            worst = worst.max((b.fields.rho.at(i, j) - p.j / bg.u1[i]).abs());
            worst = worst.max((b.fields.u1.at(i, j) - bg.u1[i]).abs());
        }
    }
    let iface = b.interface.deviation(bg.ell_s);
    Ok((worst <= 1e-8 && iface <= 1e-8, format!("max field error = {worst:.1e}, interface deviation = {iface:.1e}")))
}

const CHECKS: [(&str, CheckFn); 7] = [
    ("hamiltonian_conservation", hamiltonian_conservation),
    ("closed_form_anchors", closed_form_anchors),
    ("length_duality", length_duality),
    ("kz_gate", kz_gate),
    ("background_interface", background_interface),
    ("ledger_forms", ledger_forms),
    ("background_fixed_point", background_fixed_point),
];

pub fn run_checks(p: &PhysicalParams) -> Vec<Check> {
    CHECKS
        .par_iter()
        .map(|(name, f)| match f(p) {
            Ok((pass, detail)) => Check { name, pass, detail },
            Err(e) => Check { name, pass: false, detail: format!("error: {e}") },
        })
        .collect()
}

pub fn write_report<W: std::io::Write>(mut w: W, checks: &[Check]) -> Result<()> {
    writeln!(w, "check,status,detail")?;
    for c in checks {
        writeln!(w, "{},{},\"{}\"", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail.replace('"', "'"))?;
    }
    Ok(())
}
