use std::f64::consts::PI;

use keldysh_ep::background::{integrate_background, nozzle_length, BackgroundState, PhysicalParams};
use keldysh_ep::linearized::*;
use keldysh_ep::numerics::grid::{Field2, Grid2};
use keldysh_ep::numerics::interp::{cubic_uniform, Parity};
use keldysh_ep::Error;
use proptest::prelude::*;

const K0: f64 = 0.9;
const KL: f64 = 1.1;

fn nozzle(nx: usize) -> BackgroundState {
    let p = PhysicalParams::canonical(0.0).unwrap();
    let len = nozzle_length(&p, K0, KL).unwrap();
    integrate_background(&p, K0 * p.u_s(), len, nx).unwrap()
}

fn grid_of(bg: &BackgroundState, nx2: usize) -> Grid2 {
    Grid2::new(bg.length(), bg.x1_grid.len(), nx2)
}

fn zero_coeffs(bg: &BackgroundState, nx2: usize) -> LinearizedCoefficients {
    let grid = grid_of(bg, nx2);
    build_coefficients(bg, &Perturbation::zeros(&grid), &Field2::zeros(&grid), DEFAULT_D0).unwrap()
}

/// Smooth perturbation with φ = 0 on the walls and ∂₂ψ = ∂₂Ψ = 0 there.
fn smooth_state(grid: &Grid2, s: f64) -> Perturbation {
    let len = grid.r;
    Perturbation {
        phi: Field2::from_fn(grid, |x, y| s * 0.3 * (PI * y / 2.0).cos() * (x / len).sin()),
        psi: Field2::from_fn(grid, |x, y| s * 0.4 * x * x / len * (PI * (y + 1.0) / 2.0).cos()),
        big_psi: Field2::from_fn(grid, |x, y| s * 0.5 * (x / len).cos() * (PI * (y + 1.0)).cos()),
    }
}

fn rel_diff(a: &Field2, b: &Field2) -> f64 {
    a.sub(b).max_abs()
}

#[test]
fn zero_state_reduces_to_background_coefficients() {
    let bg = nozzle(201);
    let c = zero_coeffs(&bg, 17);
    let p = *bg.params();
    let (g, s0, us) = (p.gamma, p.s0, p.u_s());
    for f in [&c.f0, &c.f1, &c.f2, &c.f3] {
        assert_eq!(f.max_abs(), 0.0);
    }
    assert_eq!(c.a12.max_abs(), 0.0);
    for i in 0..c.grid.nx1 {
        let u = bg.u1[i];
        let du = bg.du_at(i);
        let rho = p.j / u;
        let c2 = g * s0 * rho.powf(g - 1.0);
        for j in 0..c.grid.nx2 {
            assert!((c.a11.at(i, j) - (1.0 - (u / us).powf(g + 1.0))).abs() < 1e-14);
            assert!((c.a.at(i, j) - (bg.e[i] - (g + 1.0) * du * u) / c2).abs() < 1e-12);
            assert!((c.b1.at(i, j) - u / c2).abs() < 1e-13);
            assert!((c.b0.at(i, j) - (g - 1.0) * du / c2).abs() < 1e-13);
            assert!((c.c0.at(i, j) - 1.0 / (g * s0 * rho.powf(g - 2.0))).abs() < 1e-13);
            assert!((c.c1.at(i, j) + u / (g * s0 * rho.powf(g - 2.0))).abs() < 1e-13);
            assert!(c.big_a22.at(i, j) >= c.a22_floor);
        }
    }
}

#[test]
fn a11_vanishes_at_the_sonic_point() {
    let bg = nozzle(401);
    let c = zero_coeffs(&bg, 9);
    let col = c.a11.column(4);
    let v = cubic_uniform(&col, 0.0, c.grid.h1(), bg.ell_s, Parity::None);
    assert!(v.abs() < 1e-9, "a11(ell_s) = {v:e}");
}

#[test]
fn zero_state_interface_is_the_sonic_line() {
    let bg = nozzle(201);
    let c = zero_coeffs(&bg, 17);
    let si = sonic_interface(&c).unwrap();
    assert!(si.deviation_max < 1e-10, "deviation {:e}", si.deviation_max);
    assert!(si.within_bounds());
    assert!(si.det_residual.iter().all(|&r| r <= 1e-10));
    for (&(a, b), &g) in si.brackets.iter().zip(&si.g_s) {
        assert!(a <= g && g <= b);
    }
}

#[test]
fn constant_potential_shift_moves_the_interface_as_predicted() {
    let bg = nozzle(401);
    let grid = grid_of(&bg, 9);
    let p = *bg.params();
    let (g, us) = (p.gamma, p.u_s());
    // At the sonic point ∂det/∂z = ū²/((γ−1)B̄²) and ∂det/∂x₁ = −(γ+1)ū′/u_s.
    let bbar = us * us / (g - 1.0);
    let ddet_dz = us * us / ((g - 1.0) * bbar * bbar);
    let ddet_dx = -(g + 1.0) * bg.model.f(us).unwrap() / us;
    let predicted = -ddet_dz / ddet_dx;
    let mut last = f64::NEG_INFINITY;
    for delta in [-2e-3, -1e-3, 1e-3, 2e-3] {
        let mut st = Perturbation::zeros(&grid);
        st.big_psi = Field2::from_fn(&grid, |_, _| delta);
        let c = build_coefficients(&bg, &st, &Field2::zeros(&grid), DEFAULT_D0).unwrap();
        let si = sonic_interface(&c).unwrap();
        let shift = si.g_s[0] - bg.ell_s;
        assert!(shift > last, "interface must move monotonically in delta");
        assert_eq!(shift.signum(), delta.signum());
        let ratio = shift / delta / predicted;
        assert!((ratio - 1.0).abs() < 0.05, "shift/delta = {} vs predicted {predicted}", shift / delta);
        last = shift;
    }
}

#[test]
fn interface_deviation_is_linear_in_the_perturbation() {
    let bg = nozzle(201);
    let grid = grid_of(&bg, 17);
    let dev = |s: f64| {
        let c = build_coefficients(&bg, &smooth_state(&grid, s), &Field2::zeros(&grid), DEFAULT_D0).unwrap();
        let si = sonic_interface(&c).unwrap();
        assert!(si.within_bounds());
        si.deviation_l2
    };
    let r = dev(0.01) / dev(0.005);
    assert!((r - 2.0).abs() < 0.4, "ratio {r}");
}

#[test]
fn coefficient_differences_scale_linearly() {
    let bg = nozzle(201);
    let grid = grid_of(&bg, 17);
    let c0 = zero_coeffs(&bg, 17);
    let diff = |s: f64| {
        let c = build_coefficients(&bg, &smooth_state(&grid, s), &Field2::zeros(&grid), DEFAULT_D0).unwrap();
        rel_diff(&c.a11, &c0.a11) + rel_diff(&c.a12, &c0.a12) + rel_diff(&c.a, &c0.a) + rel_diff(&c.b1, &c0.b1)
    };
    let exponent = (diff(0.04) / diff(0.02)).log2();
    assert!((exponent - 1.0).abs() < 0.1, "exponent {exponent}");
}

#[test]
fn smallness_violations_name_the_bound() {
    let bg = nozzle(101);
    let grid = grid_of(&bg, 9);
    let zero = Field2::zeros(&grid);
    let mut st = Perturbation::zeros(&grid);
    st.big_psi = Field2::from_fn(&grid, |_, _| 0.1);
    match build_coefficients(&bg, &st, &zero, DEFAULT_D0) {
        Err(Error::Admissibility(m)) => assert!(m.contains("Psi")),
        other => panic!("unexpected {other:?}"),
    }
    let mut st = Perturbation::zeros(&grid);
    st.psi = Field2::from_fn(&grid, |x, _| 0.2 * x);
    match build_coefficients(&bg, &st, &zero, DEFAULT_D0) {
        Err(Error::Admissibility(m)) => assert!(m.contains("grad psi")),
        other => panic!("unexpected {other:?}"),
    }
    let mut st = Perturbation::zeros(&grid);
    st.phi = Field2::from_fn(&grid, |_, y| 0.2 * (PI * y / 2.0).cos());
    match build_coefficients(&bg, &st, &zero, DEFAULT_D0) {
        Err(Error::Admissibility(m)) => assert!(m.contains("grad phi")),
        other => panic!("unexpected {other:?}"),
    }
    let t = Field2::from_fn(&grid, |_, _| 0.6);
    match build_coefficients(&bg, &Perturbation::zeros(&grid), &t, DEFAULT_D0) {
        Err(Error::Admissibility(m)) => assert!(m.contains("S0/2")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn subsonic_segment_has_no_interface() {
    let bg = nozzle(201);
    let grid = Grid2::new(0.8 * bg.ell_s, 81, 9);
    let c = build_coefficients(&bg, &Perturbation::zeros(&grid), &Field2::zeros(&grid), DEFAULT_D0).unwrap();
    assert!(matches!(sonic_interface(&c), Err(Error::Topology(_))));
}

#[test]
fn ellipticity_and_exit_hyperbolicity() {
    let bg = nozzle(201);
    let grid = grid_of(&bg, 17);
    for s in [0.0, 0.03] {
        let c = build_coefficients(&bg, &smooth_state(&grid, s), &Field2::zeros(&grid), DEFAULT_D0).unwrap();
        assert!(c.lambda0 > 0.0);
        assert!(c.is_elliptic_near_inlet(), "min eigenvalue {} vs lambda0/2 {}", c.ellipticity_min(0.625 * c.ell_s), c.lambda0 / 2.0);
        assert!(c.exit_hyperbolicity() > 0.0);
    }
}

/// The linearised operator must reproduce the mass balance of the full
/// potential flow: with ϱ = B^{1/(γ−1)} and v = ∇φ̄ + ∇ψ + ∇⊥φ,
/// (γ−1)B^{1−1/(γ−1)} div(ϱv) = A₂₂ (𝔏₁(ψ, Ψ) − f₁).  The left side is
/// evaluated by central differences of the exact fields, with Φ̄ taken from
/// the integrated background rather than the Bernoulli relation.
#[test]
fn first_equation_is_the_mass_balance() {
    let bg = nozzle(801);
    let p = *bg.params();
    let g = p.gamma;
    let grid = grid_of(&bg, 161);
    let amp = 0.02;
    // φ = a cos(πy/2) sin(x), ψ = b x² cos(π(y+1)/2), Ψ = c cos(x) cos(π(y+1)).
    let (a, b, cc) = (amp, amp, amp);
    let w1 = PI / 2.0;
    let state = Perturbation {
        phi: Field2::from_fn(&grid, |x, y| a * (w1 * y).cos() * x.sin()),
        psi: Field2::from_fn(&grid, |x, y| b * x * x * (w1 * (y + 1.0)).cos()),
        big_psi: Field2::from_fn(&grid, |x, y| cc * x.cos() * (PI * (y + 1.0)).cos()),
    };
    let coeffs = build_coefficients(&bg, &state, &Field2::zeros(&grid), DEFAULT_D0).unwrap();
    let l1 = coeffs.apply_l1(&state.psi, &state.big_psi);

    let flux = |x: f64, y: f64| -> (f64, f64) {
        let q = bg.eval_at(x).unwrap();
        let phi1 = a * (w1 * y).cos() * x.cos();
        let phi2 = -a * w1 * (w1 * y).sin() * x.sin();
        let psi1 = 2.0 * b * x * (w1 * (y + 1.0)).cos();
        let psi2 = -b * x * x * w1 * (w1 * (y + 1.0)).sin();
        let big = cc * x.cos() * (PI * (y + 1.0)).cos();
        let v1 = q.u + psi1 + phi2;
        let v2 = psi2 - phi1;
        let bb = q.phi + big - 0.5 * (v1 * v1 + v2 * v2);
        let rho = bb.powf(1.0 / (g - 1.0));
        (rho * v1, rho * v2)
    };
    let bern = |x: f64, y: f64| -> f64 {
        let q = bg.eval_at(x).unwrap();
        let phi1 = a * (w1 * y).cos() * x.cos();
        let phi2 = -a * w1 * (w1 * y).sin() * x.sin();
        let psi1 = 2.0 * b * x * (w1 * (y + 1.0)).cos();
        let psi2 = -b * x * x * w1 * (w1 * (y + 1.0)).sin();
        let big = cc * x.cos() * (PI * (y + 1.0)).cos();
        let v1 = q.u + psi1 + phi2;
        let v2 = psi2 - phi1;
        q.phi + big - 0.5 * (v1 * v1 + v2 * v2)
    };
    let d = 1e-4;
    let mut worst: f64 = 0.0;
    let mut term_scale: f64 = 0.0;
    for i in (40..grid.nx1 - 40).step_by(76) {
        for j in (20..grid.nx2 - 20).step_by(24) {
            let (x, y) = (grid.x1(i), grid.x2(j));
            let div = (flux(x + d, y).0 - flux(x - d, y).0) / (2.0 * d) + (flux(x, y + d).1 - flux(x, y - d).1) / (2.0 * d);
            let bb = bern(x, y);
            let lhs = (g - 1.0) * bb.powf(1.0 - 1.0 / (g - 1.0)) * div;
            let rhs = coeffs.big_a22.at(i, j) * (l1.at(i, j) - coeffs.f1.at(i, j));
            worst = worst.max((lhs - rhs).abs());
            // Size of the transverse quadratic term (γ−1)ū′(p₂+q₂)²/2.
            let du = bg.du_at(i);
            let s2 = -b * x * x * w1 * (w1 * (y + 1.0)).sin() - a * (w1 * y).cos() * x.cos();
            term_scale = term_scale.max(0.5 * (g - 1.0) * du * s2 * s2);
        }
    }
    assert!(worst < 1e-5, "mass balance mismatch {worst:e}");
    assert!(worst < 0.1 * term_scale, "mismatch {worst:e} does not resolve quadratic terms of size {term_scale:e}");
}

#[test]
fn ledger_forms_agree_on_background_nodes() {
    let bg = nozzle(401);
    let p = *bg.params();
    let us = p.u_s();
    for eta in [0.5, 1.5, 2.3] {
        let x1 = ledger_x1_form(&bg, eta);
        let kl = bg.u1[bg.u1.len() - 1] / us;
        let led = multiplier_ledger(&p, eta, bg.u0 / us, kl).unwrap();
        for i in 0..x1.x1.len() {
            let q = led.at(x1.kappa[i]).unwrap();
            let rel = (q.alpha - x1.alpha[i]).abs() / x1.alpha[i].abs();
            assert!(rel < 1e-8, "eta {eta} node {i}: {} vs {}", q.alpha, x1.alpha[i]);
            assert!((q.alpha1 - x1.alpha1[i]).abs() <= 1e-8 * x1.alpha1[i].abs().max(1e-3));
            assert!((q.beta - x1.beta[i]).abs() <= 1e-8 * x1.beta[i].abs());
        }
    }
}

#[test]
fn ledger_alpha_splits_into_alpha1_and_alpha2() {
    let p = PhysicalParams::canonical(0.0).unwrap();
    let led = multiplier_ledger(&p, 1.2, 0.95, 1.05).unwrap();
    assert_eq!(led.samples.len(), LEDGER_SAMPLES);
    for s in &led.samples {
        let sum = -s.alpha1 - s.alpha2;
        assert!((s.alpha - sum).abs() <= 1e-10 * (s.alpha1.abs() + s.alpha2.abs()));
        assert!((s.g_star - p.j.powf(0.0) * s.g).abs() <= 1e-15 * s.g);
    }
    let smin = led.samples.iter().map(|s| s.alpha).fold(f64::INFINITY, f64::min);
    assert!(led.margin <= smin);
    assert!(led.argmin >= 0.95 && led.argmin <= 1.05);
}

/// α₁ = −½(ā₁₁G)′ + āG with the derivative taken by central differences of
/// the sampled background.
#[test]
fn ledger_alpha1_matches_differenced_background() {
    let bg = nozzle(2001);
    let p = *bg.params();
    let (g, s0, j, us) = (p.gamma, p.s0, p.j, p.u_s());
    let eta = 1.5;
    let x1 = ledger_x1_form(&bg, eta);
    let h = bg.x1_grid[1];
    let prod: Vec<f64> = bg.u1.iter().map(|&u| (1.0 - (u / us).powf(g + 1.0)) * (j / u).powf(eta)).collect();
    for i in (1..2000).step_by(50) {
        let u = bg.u1[i];
        let c2 = g * s0 * (j / u).powf(g - 1.0);
        let abar = (bg.e[i] - (g + 1.0) * bg.du_at(i) * u) / c2;
        let fd = -0.5 * (prod[i + 1] - prod[i - 1]) / (2.0 * h) + abar * (j / u).powf(eta);
        assert!((fd - x1.alpha1[i]).abs() < 1e-5 * x1.alpha1[i].abs().max(1.0), "node {i}: {fd} vs {}", x1.alpha1[i]);
    }
}

#[test]
fn ledger_alpha_approaches_the_sonic_limit() {
    let p = PhysicalParams::canonical(0.0).unwrap();
    for eta in [0.5, 1.5] {
        let led = multiplier_ledger(&p, eta, 1.0 - 1e-4, 1.0 + 1e-4).unwrap();
        let a = led.at(1.0).unwrap().alpha;
        // Independent closed form: h₀^{−η}J^{(2−γ+2η)/(γ+1)}(½h₀^{−3/2}√(1−1/ζ₀)√(γ+1) − 2h₀^{−2−η}J^{(2η−γ)/(γ+1)}).
        let (g, j, z) = (p.gamma, p.j, p.zeta0);
        let h0 = (g * p.s0).powf(1.0 / (g + 1.0));
        let lim = h0.powf(-eta)
            * j.powf((2.0 - g + 2.0 * eta) / (g + 1.0))
            * (0.5 * h0.powf(-1.5) * ((1.0 - 1.0 / z) * (g + 1.0)).sqrt()
                - 2.0 * h0.powf(-2.0 - eta) * j.powf((2.0 * eta - g) / (g + 1.0)));
        assert!((a - lim).abs() <= 1e-3 * lim.abs(), "eta {eta}: {a} vs {lim}");
        assert!((EnergyLedger::alpha_limit(&p, eta) - lim).abs() <= 1e-12 * lim.abs());
    }
}

#[test]
fn small_current_margin_exceeds_the_lower_bound() {
    let d = 0.01;
    for j in [0.1, 0.01, 0.001] {
        let p = PhysicalParams::new(2.0, 2.0, j, 1.0, 0.0).unwrap();
        let g = p.gamma;
        let led = multiplier_ledger(&p, 0.75 * g, 1.0 - d, 1.0 + d).unwrap();
        assert!(led.margin > 0.0, "J = {j}: margin {:e}", led.margin);
        let bound = 0.125 * p.h0().powf(-0.75 * (g + 2.0)) * j.powf((4.0 + g) / (2.0 * (g + 1.0))) * ((g + 1.0) * (1.0 - 1.0 / p.zeta0)).sqrt();
        if j <= 0.01 {
            assert!(led.margin > bound, "J = {j}: margin {:e} below bound {bound:e}", led.margin);
        }
    }
}

#[test]
fn large_current_margin_is_positive() {
    let p = PhysicalParams::new(2.0, 2.0, 100.0, 1.0, 0.0).unwrap();
    let led = multiplier_ledger(&p, p.gamma / 4.0, 0.99, 1.01).unwrap();
    assert!(led.margin > 0.0, "margin {:e}", led.margin);
}

#[test]
fn ledger_rejects_bad_input_and_writes_csv() {
    let p = PhysicalParams::canonical(0.0).unwrap();
    assert!(matches!(multiplier_ledger(&p, 0.0, 0.9, 1.1), Err(Error::Domain(_))));
    assert!(matches!(multiplier_ledger(&p, 1.0, 1.1, 0.9), Err(Error::Domain(_))));
    let led = multiplier_ledger(&p, 1.0, 0.9, 1.1).unwrap();
    let mut buf = Vec::new();
    led.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("kappa,alpha,alpha1,alpha2,omega1,omega2\n"));
    assert_eq!(text.lines().count(), LEDGER_SAMPLES + 1);
}

fn test_pair(grid: &Grid2) -> (Field2, Field2) {
    let len = grid.r;
    let v = Field2::from_fn(grid, |x, y| x * (1.0 + 0.3 * (PI * (y + 1.0) / 2.0).cos()) * (2.0 * x).sin().exp());
    let w = Field2::from_fn(grid, |x, y| (PI * x / (2.0 * len)).cos() * (1.0 + 0.2 * (PI * (y + 1.0)).cos()));
    (v, w)
}

#[test]
fn energy_components_of_zero_vanish() {
    let bg = nozzle(101);
    let grid = grid_of(&bg, 17);
    let z = Field2::zeros(&grid);
    let e = energy_decomposition(&bg, 1.5, &z, &z).unwrap();
    for v in [e.i1, e.i2, e.t_bd, e.t_coer, e.t_mix, e.defect] {
        assert_eq!(v, 0.0);
    }
}

#[test]
fn energy_identity_defect_is_second_order() {
    let mut defects = Vec::new();
    for (nx, ny) in [(101, 17), (201, 33), (401, 65)] {
        let bg = nozzle(nx);
        let grid = grid_of(&bg, ny);
        let (v, w) = test_pair(&grid);
        let e = energy_decomposition(&bg, 1.5, &v, &w).unwrap();
        assert!(e.t_bd >= 0.0);
        defects.push(e.defect.abs());
    }
    for k in 1..defects.len() {
        let order = (defects[k - 1] / defects[k]).log2();
        assert!(order > 1.8, "defects {defects:?}");
    }
}

#[test]
fn inlet_only_boundary_term() {
    let bg = nozzle(401);
    let p = *bg.params();
    let grid = grid_of(&bg, 33);
    let len = grid.r;
    // v = x(L−x)² cos(π(y+1)/2): ∂₁v(0, y) = L² cos(π(y+1)/2), and ∂₁v = ∂₂v = 0 at the exit.
    let v = Field2::from_fn(&grid, |x, y| x * (len - x).powi(2) * (PI * (y + 1.0) / 2.0).cos());
    let w = Field2::zeros(&grid);
    let e = energy_decomposition(&bg, 1.5, &v, &w).unwrap();
    let a11 = 1.0 - (bg.u0 / p.u_s()).powf(p.gamma + 1.0);
    let g0 = (p.j / bg.u0).powf(1.5);
    let exact = g0 / 2.0 * a11 * len.powi(4) * 1.0;
    assert!((e.t_bd - exact).abs() < 1e-3 * exact, "{} vs {exact}", e.t_bd);
    assert!(e.t_bd > 0.0);
}

#[test]
fn identity_fails_for_data_violating_the_inlet_condition() {
    let bg = nozzle(401);
    let grid = grid_of(&bg, 65);
    let v = Field2::from_fn(&grid, |x, y| 1.0 + x * (PI * (y + 1.0) / 2.0).cos());
    let w = Field2::zeros(&grid);
    let v = v.add(&Field2::from_fn(&grid, |_, y| 0.5 * (PI * (y + 1.0) / 2.0).cos()));
    assert!(matches!(energy_decomposition(&bg, 1.5, &v, &w), Err(Error::QuadratureInconsistency { .. })));
}

#[test]
fn coupled_zero_data_gives_zero() {
    let bg = nozzle(101);
    let c = zero_coeffs(&bg, 17);
    let z = Field2::zeros(&c.grid);
    let s = solve_coupled(&c, &z, &z, &CoupledOptions::default()).unwrap();
    assert_eq!(s.v.max_abs(), 0.0);
    assert_eq!(s.w.max_abs(), 0.0);
}

/// 𝔏₁(v*, w*) and 𝔏₂(v*, w*) with exact derivatives of the manufactured pair.
fn manufactured_data(c: &LinearizedCoefficients) -> (Field2, Field2, Field2, Field2) {
    let grid = &c.grid;
    let len = grid.r;
    let k1 = PI / 2.0;
    let e = |y: f64| (k1 * (y + 1.0)).cos();
    let de = |y: f64| -k1 * (k1 * (y + 1.0)).sin();
    let dde = |y: f64| -k1 * k1 * (k1 * (y + 1.0)).cos();
    // v* = x(1 + x)(1 + 0.3 η₁(y)), w* = cos(πx/(2L))(1 + 0.2 cos(π(y+1))).
    let vs = |x: f64, y: f64| x * (1.0 + x) * (1.0 + 0.3 * e(y));
    let a = PI / (2.0 * len);
    let ws = |x: f64, y: f64| (a * x).cos() * (1.0 + 0.2 * (PI * (y + 1.0)).cos());
    let v = Field2::from_fn(grid, vs);
    let w = Field2::from_fn(grid, ws);
    let mut f1 = Field2::zeros(grid);
    let mut f2 = Field2::zeros(grid);
    for i in 0..grid.nx1 {
        for j in 0..grid.nx2 {
            let (x, y) = (grid.x1(i), grid.x2(j));
            let v1 = (1.0 + 2.0 * x) * (1.0 + 0.3 * e(y));
            let v11 = 2.0 * (1.0 + 0.3 * e(y));
            let v12 = (1.0 + 2.0 * x) * 0.3 * de(y);
            let v22 = x * (1.0 + x) * 0.3 * dde(y);
            let m = 1.0 + 0.2 * (PI * (y + 1.0)).cos();
            let w0 = (a * x).cos() * m;
            let w1 = -a * (a * x).sin() * m;
            let w11 = -a * a * w0;
            let w22 = (a * x).cos() * (-0.2 * PI * PI * (PI * (y + 1.0)).cos());
            f1.set(
                i,
                j,
                c.a11.at(i, j) * v11 + 2.0 * c.a12.at(i, j) * v12 + v22 + c.a.at(i, j) * v1 + c.b1.at(i, j) * w1 + c.b0.at(i, j) * w0,
            );
            f2.set(i, j, w11 + w22 - c.c0.at(i, j) * w0 - c.c1.at(i, j) * v1);
        }
    }
    (v, w, f1, f2)
}

#[test]
fn coupled_manufactured_solution_is_recovered() {
    let mut errs = Vec::new();
    for (nx, ny) in [(101, 17), (201, 33), (401, 65)] {
        let bg = nozzle(nx);
        let c = zero_coeffs(&bg, ny);
        let (vs, ws, f1, f2) = manufactured_data(&c);
        let s = solve_coupled(&c, &f1, &f2, &CoupledOptions::default()).unwrap();
        assert!(s.v.row(0).iter().all(|&x| x == 0.0));
        assert!(s.w.row(nx - 1).iter().all(|&x| x == 0.0));
        let e = s.v.sub(&vs).h1_norm(Parity::Even) + s.w.sub(&ws).h1_norm(Parity::Even);
        errs.push(e / (vs.h1_norm(Parity::Even) + ws.h1_norm(Parity::Even)));
    }
    for k in 1..errs.len() {
        assert!((errs[k - 1] / errs[k]).log2() > 1.8, "errors {errs:?}");
    }
    assert!(errs[2] < 1e-3, "errors {errs:?}");
}

#[test]
fn coupled_manufactured_solution_with_perturbed_coefficients() {
    let mut errs = Vec::new();
    for nx in [101, 201, 401] {
        let bg = nozzle(nx);
        let grid = grid_of(&bg, 33);
        let c = build_coefficients(&bg, &smooth_state(&grid, 0.02), &Field2::zeros(&grid), DEFAULT_D0).unwrap();
        let (vs, ws, f1, f2) = manufactured_data(&c);
        let opts = CoupledOptions { n_modes: 16, ..CoupledOptions::default() };
        let s = solve_coupled(&c, &f1, &f2, &opts).unwrap();
        let e = s.v.sub(&vs).h1_norm(Parity::Even) + s.w.sub(&ws).h1_norm(Parity::Even);
        errs.push(e / (vs.h1_norm(Parity::Even) + ws.h1_norm(Parity::Even)));
    }
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "errors {errs:?}");
    assert!(errs[2] < 2e-3, "errors {errs:?}");
}

#[test]
fn coupled_solution_scales_with_the_data() {
    let bg = nozzle(101);
    let c = zero_coeffs(&bg, 17);
    let f1 = Field2::from_fn(&c.grid, |x, y| 1e-3 * x.sin() * (1.0 + y * y));
    let f2 = Field2::from_fn(&c.grid, |x, y| 1e-3 * x * (PI * y).cos());
    let ratio = |s: f64| {
        let (a, b) = (f1.scale(s), f2.scale(s));
        let sol = solve_coupled(&c, &a, &b, &CoupledOptions::default()).unwrap();
        (sol.v.h1_norm(Parity::Even) + sol.w.h1_norm(Parity::Even)) / (a.l2() + b.l2())
    };
    let (r1, r10) = (ratio(1.0), ratio(10.0));
    assert!((r1 - r10).abs() < 1e-5 * r1, "{r1} vs {r10}");
}

#[test]
fn strong_coupling_is_reported() {
    let bg = nozzle(101);
    let mut c = zero_coeffs(&bg, 17);
    c.b1 = c.b1.scale(400.0);
    c.c1 = c.c1.scale(400.0);
    let f1 = Field2::from_fn(&c.grid, |x, _| x);
    let f2 = Field2::from_fn(&c.grid, |x, _| x);
    let opts = CoupledOptions { max_sweeps: 40, ..CoupledOptions::default() };
    match solve_coupled(&c, &f1, &f2, &opts) {
        Err(Error::CouplingDivergence(m)) => assert!(m.contains("max|b1|")),
        other => panic!("expected coupling divergence, got {:?}", other.map(|s| s.sweeps)),
    }
}

#[test]
fn csv_dumps_have_headers() {
    let bg = nozzle(51);
    let c = zero_coeffs(&bg, 5);
    let si = sonic_interface(&c).unwrap();
    let mut buf = Vec::new();
    si.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x2,g_s\n"));
    assert_eq!(text.lines().count(), 6);
    let s = CoupledSolution { v: Field2::zeros(&c.grid), w: Field2::zeros(&c.grid), sweeps: 0, residuals: vec![] };
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x1,x2,v,w\n"));
    assert_eq!(text.lines().count(), 51 * 5 + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn small_states_keep_structural_invariants(a in -0.004f64..0.004, b in -0.004f64..0.004, c in -0.004f64..0.004, k in 1usize..3) {
        let bg = nozzle(101);
        let grid = grid_of(&bg, 17);
        let kk = k as f64;
        let st = Perturbation {
            phi: Field2::from_fn(&grid, |x, y| a * (PI * y / 2.0).cos() * x.sin()),
            psi: Field2::from_fn(&grid, |x, y| b * x * (kk * PI * (y + 1.0) / 2.0).cos()),
            big_psi: Field2::from_fn(&grid, |x, y| c * x.cos() * (kk * PI * (y + 1.0) / 2.0).cos()),
        };
        let co = build_coefficients(&bg, &st, &Field2::zeros(&grid), DEFAULT_D0).unwrap();
        for i in 0..grid.nx1 {
            prop_assert!(co.a12.at(i, 0).abs() < 1e-15);
            prop_assert!(co.a12.at(i, grid.nx2 - 1).abs() < 1e-15);
        }
        prop_assert!(co.big_a22.data.iter().all(|&v| v >= co.a22_floor));
        let si = sonic_interface(&co).unwrap();
        prop_assert!(si.within_bounds());
    }
}
