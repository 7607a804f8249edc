//! Subcommand drivers.  Each writes CSV files into the output directory,
//! every one with a `<name>.meta` sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use keldysh_ep::background::{integrate_background, nozzle_length, BackgroundState, PhysicalParams};
use keldysh_ep::io::{fmt, write_columns_csv, write_grid_csv, Metadata};
use keldysh_ep::keldysh::{check_kz_condition, KeldyshField};
use keldysh_ep::linearized::{build_coefficients, ledger_x1_form, multiplier_ledger, sonic_interface, CoupledOptions, Perturbation};
use keldysh_ep::nonlinear::{ep_residual, fixed_point_solve, BoundaryData, FixedPointOptions, InitialGuess};
use keldysh_ep::numerics::grid::{Field2, Grid2};
use rayon::prelude::*;

use crate::config::{RunConfig, Start};

/// Shared context of one invocation.
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    /// Directory of the configuration file, for relative table paths.
    pub base_dir: PathBuf,
    pub subcommand: &'static str,
}

impl Run {
    fn base_metadata(&self) -> Metadata {
        let mut m = Metadata::new();
        m.set("subcommand", self.subcommand)
            .set("config_hash", self.cfg.hash())
            .set("seed", self.cfg.seed)
            .set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    /// Writes `name` through `body` and its sidecar with `extra` appended to
    /// the common entries.
    fn emit(&self, name: &str, extra: &Metadata, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating output directory {}", self.out.display()))?;
        let path = self.out.join(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        body(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
        let mut meta = self.base_metadata();
        meta.set("file", name);
        meta.merge(extra);
        let meta_path = self.out.join(format!("{name}.meta"));
        let mut mw = BufWriter::new(File::create(&meta_path).with_context(|| format!("creating {}", meta_path.display()))?);
        meta.write(&mut mw)?;
        mw.flush()?;
        Ok(path)
    }

    fn params(&self) -> Result<PhysicalParams> {
        Ok(self.cfg.physics.params()?)
    }

    fn background(&self) -> Result<BackgroundState> {
        let p = self.params()?;
        let b = &self.cfg.background;
        let u0 = b.kappa0 * p.u_s();
        let len = if b.to_l_max {
            keldysh_ep::background::Model::new(&p)?.distance(u0, keldysh_ep::background::find_umax(&p)?)?
        } else {
            nozzle_length(&p, b.kappa0, b.kappa_l)?
        };
        Ok(integrate_background(&p, u0, len, b.nx)?)
    }
}

pub fn background(run: &Run) -> Result<()> {
    let bg = run.background()?;
    let p = *bg.params();
    let hmax = bg
        .u1
        .iter()
        .zip(&bg.e)
        .map(|(&u, &e)| keldysh_ep::background::hamiltonian(&p, u, e).map(f64::abs))
        .collect::<keldysh_ep::Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let mut meta = bg.metadata();
    meta.set_f64("hamiltonian_max", hmax);
    run.emit("background.csv", &meta, |w| bg.write_csv(w))?;
    eprintln!("background: {} nodes, ell_s = {}, l_max = {}", bg.x1_grid.len(), fmt(bg.ell_s), fmt(bg.l_max));
    Ok(())
}

pub fn keldysh(run: &Run) -> Result<()> {
    let k = &run.cfg.keldysh;
    let grid = Grid2::new(k.length, k.nx1, k.nx2);
    let (c, r) = (k.c, k.length);
    let field = KeldyshField::from_fn(&grid, k.regularity, move |x, _| (c * (0.5 * r - x), 0.0, -1.0))?;
    let (amp, mode) = (k.source_amplitude, k.source_mode as f64);
    let f = Field2::from_fn(&grid, |x, y| {
        amp * (1.0 + (mode * std::f64::consts::FRAC_PI_2 * (y + 1.0)).cos()) * (std::f64::consts::PI * x / r).sin()
    });
    let (kz_ok, lambda) = check_kz_condition(&field, k.regularity);
    let mut meta = Metadata::new();
    meta.set("kz_ok", kz_ok).set_f64("kz_lambda", lambda).set_f64("tol", k.tol);
    run.emit("coefficients.csv", &meta, |w| field.write_csv(w))?;
    let res = keldysh_ep::galerkin::continuation_solve(&field, &f, &k.schedule())?;
    meta.set("stages", res.stages.len()).set_f64("r_star", res.extension.r_star);
    run.emit("solution.csv", &meta, |w| write_grid_csv(w, &grid, &["v"], &[&res.v]))?;
    let col = |g: fn(&keldysh_ep::galerkin::StageDiag) -> f64| res.stages.iter().map(g).collect::<Vec<f64>>();
    run.emit("stages.csv", &meta, |w| {
        write_columns_csv(
            w,
            &["eps", "tau", "n", "h1_gap", "sqrt_eps_d11", "h1", "measured_c"],
            &[
                &col(|s| s.eps),
                &col(|s| s.tau),
                &col(|s| s.n as f64),
                &col(|s| s.h1_gap),
                &col(|s| s.sqrt_eps_d11),
                &col(|s| s.h1),
                &col(|s| s.measured_c),
            ],
        )
    })?;
    eprintln!("keldysh: converged after {} stages", res.stages.len());
    Ok(())
}

pub fn linearized(run: &Run) -> Result<()> {
    let bg = run.background()?;
    let p = *bg.params();
    let l = &run.cfg.linearized;
    let grid = Grid2::new(bg.length(), bg.x1_grid.len(), l.nx2);
    let zero = Perturbation::zeros(&grid);
    let coeffs = build_coefficients(&bg, &zero, &Field2::zeros(&grid), l.d0)?;
    let field = coeffs.keldysh_field()?;
    let (kz_ok, lambda) = check_kz_condition(&field, field.m);
    let iface = sonic_interface(&coeffs)?;
    let us = p.u_s();
    let (k0, kl) = (bg.u0 / us, bg.u1[bg.u1.len() - 1] / us);
    let ledger = multiplier_ledger(&p, l.eta, k0, kl)?;
    let mut meta = bg.metadata();
    meta.set("kz_ok", kz_ok)
        .set_f64("kz_lambda", lambda)
        .set_f64("d0", l.d0)
        .set_f64("eta", l.eta)
        .set_f64("interface_deviation_max", iface.deviation_max)
        .set_f64("alpha_margin", ledger.margin)
        .set_f64("alpha_argmin", ledger.argmin);
    run.emit("coefficients.csv", &meta, |w| field.write_csv(w))?;
    run.emit("interface.csv", &meta, |w| iface.write_csv(w))?;
    run.emit("ledger.csv", &meta, |w| ledger.write_csv(w))?;
    eprintln!("linearized: Kz {} (lambda = {}), min alpha = {}", if kz_ok { "ok" } else { "fails" }, fmt(lambda), fmt(ledger.margin));
    Ok(())
}

pub fn solve_ep(run: &Run) -> Result<()> {
    let bg = run.background()?;
    let p = *bg.params();
    let n = &run.cfg.nonlinear;
    let b = &run.cfg.boundary;
    let data = BoundaryData {
        s_en: b.s_en.build(p.s0, &run.base_dir)?,
        e_en: b.e_en.build(bg.e[0], &run.base_dir)?,
        w_en: b.w_en.build(0.0, &run.base_dir)?,
    };
    let opts = FixedPointOptions {
        nx2: n.nx2,
        n_modes: n.n_modes,
        tol: n.tol,
        max_sweeps: n.max_sweeps,
        stall_sweeps: n.stall_sweeps,
        relaxation: n.relaxation,
        d0: n.d0,
        p_max: n.p_max,
        compat_tol: n.compat_tol,
        inner: CoupledOptions { tol: n.inner_tol, ..CoupledOptions::default() },
        initial: match n.initial {
            Start::Zero => InitialGuess::Zero,
            Start::Random => InitialGuess::Random { seed: run.cfg.seed, amplitude: n.random_amplitude },
        },
    };
    let bundle = fixed_point_solve(&bg, &data, &opts)?;
    let res = ep_residual(&bundle.fields, p.gamma, p.rho_inf());
    let mut meta = bg.metadata();
    meta.set("sweeps", bundle.sweeps())
        .set_f64("tol", n.tol)
        .set_f64("inner_tol", n.inner_tol)
        .set_f64("perturbation_size", bundle.perturbation_size)
        .set_f64("interface_gap", bundle.interface_gap)
        .set_f64("interface_deviation", bundle.interface.deviation(bg.ell_s))
        .set("radii_ok", bundle.radii_ok)
        .set_f64("residual_mass", res.mass)
        .set_f64("residual_vorticity", res.vorticity)
        .set_f64("residual_entropy", res.entropy)
        .set_f64("residual_bernoulli", res.bernoulli)
        .set_f64("residual_poisson", res.poisson);
    run.emit("fields.csv", &meta, |w| bundle.write_fields_csv(w))?;
    run.emit("interface.csv", &meta, |w| bundle.interface.write_csv(w))?;
    run.emit("history.csv", &meta, |w| bundle.write_history_csv(w))?;
    eprintln!(
        "solve-ep: converged in {} sweeps, P = {}, max EP residual = {}",
        bundle.sweeps(),
        fmt(bundle.perturbation_size),
        fmt(res.max())
    );
    Ok(())
}

/// One admissibility point.
struct Margin {
    j: f64,
    eta: f64,
    kappa0: f64,
    kappa_l: f64,
    margin: f64,
    argmin: f64,
    form_gap: f64,
}

fn margin_at(base: &PhysicalParams, j: f64, eta: f64, half_width: f64, nodes: usize) -> keldysh_ep::Result<Margin> {
    let p = PhysicalParams::new(base.gamma, base.zeta0, j, base.s0, 0.0)?;
    let (k0, kl) = (1.0 - half_width, 1.0 + half_width);
    let ledger = multiplier_ledger(&p, eta, k0, kl)?;
    let bg = integrate_background(&p, k0 * p.u_s(), ledger.length, nodes)?;
    let x1 = ledger_x1_form(&bg, eta);
    let mut gap = 0.0f64;
    for i in 0..x1.x1.len() {
        let q = ledger.at(x1.kappa[i])?;
        gap = gap.max((q.alpha - x1.alpha[i]).abs() / x1.alpha[i].abs());
    }
    Ok(Margin { j, eta, kappa0: k0, kappa_l: kl, margin: ledger.margin, argmin: ledger.argmin, form_gap: gap })
}

/// α-margin sweep over J; exits with an admissibility failure if any margin is not positive.
pub fn admissibility(run: &Run) -> Result<()> {
    let p = run.params()?;
    let a = &run.cfg.admissibility;
    let results = a
        .j_list
        .par_iter()
        .map(|&j| margin_at(&p, j, a.eta_for(p.gamma, j), a.kappa_half_width, a.nodes))
        .collect::<keldysh_ep::Result<Vec<Margin>>>()?;
    let col = |g: fn(&Margin) -> f64| results.iter().map(g).collect::<Vec<f64>>();
    let mut meta = Metadata::new();
    meta.set_f64("kappa_half_width", a.kappa_half_width).set("nodes", a.nodes);
    run.emit("admissibility.csv", &meta, |w| {
        write_columns_csv(
            w,
            &["J", "eta", "kappa0", "kappa_l", "margin", "argmin", "form_gap"],
            &[
                &col(|m| m.j),
                &col(|m| m.eta),
                &col(|m| m.kappa0),
                &col(|m| m.kappa_l),
                &col(|m| m.margin),
                &col(|m| m.argmin),
                &col(|m| m.form_gap),
            ],
        )
    })?;
    for m in &results {
        eprintln!("J = {}: eta = {}, min alpha = {}, form gap = {}", m.j, m.eta, fmt(m.margin), fmt(m.form_gap));
    }
    if let Some(bad) = results.iter().find(|m| !(m.margin > 0.0)) {
        return Err(keldysh_ep::Error::Admissibility(format!("min alpha = {} at J = {}", fmt(bad.margin), bad.j)).into());
    }
    Ok(())
}

pub fn out_dir(cli_out: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    cli_out.map_or_else(|| cfg.output.dir.clone(), Path::to_path_buf)
}

/// Runs the invariant suite; any failing check is reported as a failed precondition.
pub fn verify(run: &Run) -> Result<()> {
    let p = run.params()?;
    let checks = crate::verify::run_checks(&p);
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let mut meta = Metadata::new();
    meta.set("checks", checks.len()).set("failed", checks.iter().filter(|c| !c.pass).count());
    run.emit("verify.csv", &meta, |w| crate::verify::write_report(w, &checks).map_err(std::io::Error::other))?;
    if let Some(c) = checks.iter().find(|c| !c.pass) {
        anyhow::bail!(keldysh_ep::Error::Admissibility(format!("verification check {} failed: {}", c.name, c.detail)));
    }
    Ok(())
}
