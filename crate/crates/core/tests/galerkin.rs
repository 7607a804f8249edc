use keldysh_ep::galerkin::*;
use keldysh_ep::keldysh::*;
use keldysh_ep::numerics::banded::BandMatrix;
use keldysh_ep::numerics::grid::{Field2, Grid2};
use keldysh_ep::numerics::interp::Parity;
use keldysh_ep::numerics::quad::gauss_legendre;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PI: f64 = std::f64::consts::PI;

fn keldysh_model(nx: usize, ny: usize) -> KeldyshField {
    let g = Grid2::new(1.0, nx, ny);
    KeldyshField::from_fn(&g, 4, |x, _| (0.5 - x, 0.0, -1.0)).unwrap()
}

#[test]
fn basis_is_orthonormal_neumann_eigenbasis() {
    let b = SpectralBasis::new(10).unwrap();
    let (x, w) = (b.quad_nodes(), b.quad_weights());
    for j in 0..10 {
        for k in 0..10 {
            let ip: f64 = (0..x.len()).map(|q| w[q] * SpectralBasis::eta_at(j, x[q]) * SpectralBasis::eta_at(k, x[q])).sum();
            let want = if j == k { 1.0 } else { 0.0 };
            assert!((ip - want).abs() < 1e-12, "({j},{k}) {ip}");
        }
        assert!(SpectralBasis::deta_at(j, -1.0).abs() < 1e-13);
        assert!(SpectralBasis::deta_at(j, 1.0).abs() < 1e-12);
        // −η″ = λη against a finite-difference second derivative
        let (y, h) = (0.3, 1e-4);
        let d2 = (SpectralBasis::eta_at(j, y + h) - 2.0 * SpectralBasis::eta_at(j, y) + SpectralBasis::eta_at(j, y - h)) / (h * h);
        assert!((-d2 - b.lambda(j) * SpectralBasis::eta_at(j, y)).abs() < 1e-5 * (1.0 + b.lambda(j)));
    }
    assert!(SpectralBasis::new(0).is_err());
}

#[test]
fn projections_of_simple_coefficients() {
    let b = SpectralBasis::new(6).unwrap();
    let g = Grid2::new(1.0, 11, 9);
    let field = KeldyshField::from_fn(&g, 4, |_, _| (2.5, 0.0, -1.0)).unwrap();
    let f = Field2::from_fn(&g, |_, _| 1.0);
    let p = project_coefficients(&field, &f, &b, 0.37);
    for j in 0..6 {
        for k in 0..6 {
            let d = if j == k { 1.0 } else { 0.0 };
            assert!((p.a11[j * 6 + k] - 2.5 * d).abs() < 1e-12);
            assert!((p.a1[j * 6 + k] + d).abs() < 1e-12);
            assert_eq!(p.a12[j * 6 + k], 0.0);
        }
    }
    assert!((p.f[0] - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn one_even_mode_coupling_matches_dense_quadrature() {
    let n = 6;
    let b = SpectralBasis::new(n).unwrap();
    let g: Vec<f64> = b.quad_nodes().iter().map(|&y| (PI * (y + 1.0)).cos()).collect();
    let m = b.pair(&g);
    let (xo, wo) = gauss_legendre(10 * b.quad_nodes().len());
    for j in 0..n {
        for k in 0..n {
            let oracle: f64 = (0..xo.len())
                .map(|q| wo[q] * (PI * (xo[q] + 1.0)).cos() * SpectralBasis::eta_at(j, xo[q]) * SpectralBasis::eta_at(k, xo[q]))
                .sum();
            assert!((m[j * n + k] - oracle).abs() < 1e-12);
            assert!((m[j * n + k] - m[k * n + j]).abs() < 1e-14);
            if (j as isize - k as isize).abs() != 2 && j + k != 2 {
                assert!(m[j * n + k].abs() < 1e-12, "({j},{k})");
            }
        }
    }
}

#[test]
fn zero_rhs_gives_zero_solution() {
    let field = keldysh_model(101, 9);
    let f = Field2::zeros(&field.grid);
    for eps in [0.1, 0.0] {
        let s = solve_on_field(&field, &f, eps, 4).unwrap();
        assert!(s.theta.iter().all(|&v| v == 0.0));
    }
}

/// Closed form for εθ‴ + θ″ − θ′ = c, θ(0) = θ′(0) = θ″(R) = 0.
fn exact_const(eps: f64, c: f64, r: f64, x: f64) -> f64 {
    let d = (1.0 + 4.0 * eps).sqrt();
    let r1 = (-1.0 + d) / (2.0 * eps);
    let r2 = (-1.0 - d) / (2.0 * eps);
    // θ = A + B(e^{r1 x} − 1) + C e^{r2 x}… written with C' = C − ... ; solve the 2×2 for (B, C)
    // θ'(0) = B r1 + C r2 − c = 0,  θ''(R) = B r1² e^{r1 R} + C r2² e^{r2 R} = 0
    let (m11, m12, m21, m22) = (r1, r2, r1 * r1 * (r1 * r).exp(), r2 * r2 * (r2 * r).exp());
    let det = m11 * m22 - m12 * m21;
    let bb = (c * m22) / det;
    let cc = (-c * m21) / det;
    bb * ((r1 * x).exp() - 1.0) + cc * ((r2 * x).exp() - 1.0) - c * x
}

fn single_mode_run(nx: usize, eps: f64) -> GalerkinSolution {
    let g = Grid2::new(1.0, nx, 5);
    let field = KeldyshField::from_fn(&g, 4, |_, _| (1.0, 0.0, -1.0)).unwrap();
    // f⁰ = ⟨f, η₀⟩ = 1
    let f = Field2::from_fn(&g, |_, _| std::f64::consts::FRAC_1_SQRT_2);
    solve_on_field(&field, &f, eps, 1).unwrap()
}

#[test]
fn single_mode_constant_coefficients_against_closed_form() {
    let eps = 0.01;
    let mut errs = Vec::new();
    for nx in [801usize, 1601, 3201, 10001] {
        let s = single_mode_run(nx, eps);
        assert!(s.linear_residual < 1e-10, "{}", s.linear_residual);
        let e = (0..nx).map(|i| (s.theta(i, 0) - exact_const(eps, 1.0, 1.0, s.x1[i])).abs()).fold(0.0, f64::max);
        errs.push(e);
    }
    assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
    assert!(errs[3] <= 1e-6, "{errs:?}");
}

#[test]
fn single_mode_matches_fourfold_refinement() {
    let eps = 0.01;
    let coarse = single_mode_run(10001, eps);
    let fine = single_mode_run(40001, eps);
    let e = (0..10001).map(|i| (coarse.theta(i, 0) - fine.theta(4 * i, 0)).abs()).fold(0.0, f64::max);
    assert!(e <= 1e-6, "{e}");
}

/// Manufactured solution on an extended model field, returned with its H¹ error.
fn manufactured_error(nx: usize, ny: usize, eps: f64) -> f64 {
    let field = keldysh_model(nx, ny);
    let ext = extend_coefficients(&field).unwrap();
    let rs = ext.r_star;
    let p = |x: f64| {
        let s = 1.0 - x / rs;
        let p0 = x * x * s.powi(3);
        let p1 = 2.0 * x * s.powi(3) - 3.0 * x * x * s * s / rs;
        let p2 = 2.0 * s.powi(3) - 12.0 * x * s * s / rs + 6.0 * x * x * s / (rs * rs);
        let p3 = -18.0 * s * s / rs + 36.0 * x * s / (rs * rs) - 6.0 * x * x / rs.powi(3);
        (p0, p1, p2, p3)
    };
    let modes = |y: f64| (1.0 + 0.5 * (PI * (y + 1.0)).cos(), -0.5 * PI * PI * (PI * (y + 1.0)).cos());
    let eg = ext.field.grid.clone();
    let mut f = Field2::zeros(&eg);
    for i in 0..eg.nx1 {
        for j in 0..eg.nx2 {
            let (p0, p1, p2, p3) = p(eg.x1(i));
            let (c, c22) = modes(eg.x2(j));
            f.set(i, j, eps * p3 * c + ext.field.a11.at(i, j) * p2 * c + p0 * c22 + ext.field.a1.at(i, j) * p1 * c);
        }
    }
    let s = solve_on_field(&ext.field, &f, eps, 4).unwrap();
    let v = s.synthesize(ny).restrict_x1(nx);
    let exact = Field2::from_fn(&field.grid, |x, y| p(x).0 * modes(y).0);
    v.sub(&exact).h1_norm(Parity::Even)
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    for eps in [0.01, 0.0] {
        let e: Vec<f64> = [(101, 17), (201, 33), (401, 65)].iter().map(|&(a, b)| manufactured_error(a, b, eps)).collect();
        for w in e.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.8, "eps={eps}: {e:?}");
        }
    }
}

#[test]
fn boundary_conditions_hold_node_exactly() {
    let field = keldysh_model(201, 17);
    let ext = extend_coefficients(&field).unwrap();
    let f = ext.extend_scalar(&Field2::from_fn(&field.grid, |x, y| (1.0 + (PI * (y + 1.0)).cos()) * (PI * x).sin())).unwrap();
    let s = solve_on_field(&ext.field, &f, 0.05, 6).unwrap();
    let last = s.x1.len() - 1;
    for k in 0..6 {
        assert!(s.theta(0, k).abs() < 1e-15);
        assert!(s.dtheta[k].abs() < 1e-15);
        assert!(s.d2theta[last * 6 + k].abs() < 1e-10);
    }
    let v = s.synthesize(17);
    let d2 = v.d2(Parity::None);
    for i in 0..v.grid.nx1 {
        assert!(v.at(i, 0).is_finite());
        // ∂₂v = 0 on the walls, measured with a one-sided stencil of the synthesised samples
        assert!(d2.at(i, 0).abs() < 0.05 * (1.0 + v.max_abs()));
    }
    for j in 0..17 {
        assert!(v.at(0, j).abs() < 1e-15);
    }
}

#[test]
fn mode_truncation_is_exact_for_finitely_many_modes() {
    // x2-independent coefficients decouple the modes, so the leading
    // amplitudes cannot depend on how many further modes are carried.
    let field = keldysh_model(201, 33);
    let ext = extend_coefficients(&field).unwrap();
    let f = ext.extend_scalar(&Field2::from_fn(&field.grid, |x, y| (1.0 + 0.5 * (PI * (y + 1.0)).cos()) * x)).unwrap();
    let a = solve_on_field(&ext.field, &f, 0.0, 4).unwrap();
    let b = solve_on_field(&ext.field, &f, 0.0, 8).unwrap();
    for i in 0..a.x1.len() {
        for k in 0..4 {
            assert!((a.theta(i, k) - b.theta(i, k)).abs() <= 1e-14 * (1.0 + a.theta(i, k).abs()));
        }
    }
    // a forcing built from modes 0 and 2 leaves the other amplitudes at
    // interpolation-noise level
    let tail = |ny: usize| {
        let field = keldysh_model(201, ny);
        let ext = extend_coefficients(&field).unwrap();
        let f = ext.extend_scalar(&Field2::from_fn(&field.grid, |x, y| (1.0 + 0.5 * (PI * (y + 1.0)).cos()) * x)).unwrap();
        let s = solve_on_field(&ext.field, &f, 0.0, 8).unwrap();
        (0..s.x1.len()).flat_map(|i| [1, 3, 4, 5, 6, 7].map(|k| s.theta(i, k).abs())).fold(0.0, f64::max)
    };
    let (t1, t2) = (tail(17), tail(33));
    assert!(t1.max(t2) < 1e-10, "{t1} {t2}");
}

#[test]
fn coupled_and_decoupled_paths_agree() {
    // a weak x2-dependence forces the coupled path; its limit of zero amplitude
    // must approach the decoupled answer linearly.
    let g = Grid2::new(1.0, 101, 17);
    let f = Field2::from_fn(&g, |x, _| x);
    let mk = |amp: f64| KeldyshField::from_fn(&g, 4, move |x, y| (0.5 - x + amp * (PI * (y + 1.0)).cos(), 0.0, -1.0)).unwrap();
    let base = solve_on_field(&mk(0.0), &f, 0.02, 4).unwrap();
    assert!(base.decoupled);
    let d1 = solve_on_field(&mk(1e-3), &f, 0.02, 4).unwrap();
    let d2 = solve_on_field(&mk(5e-4), &f, 0.02, 4).unwrap();
    assert!(!d1.decoupled);
    let diff = |s: &GalerkinSolution| s.theta.iter().zip(&base.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let r = diff(&d1) / diff(&d2);
    assert!((r - 2.0).abs() < 0.1, "{r}");
}

#[test]
fn continuation_of_zero_data_is_zero() {
    let field = keldysh_model(101, 9);
    let f = Field2::zeros(&field.grid);
    let r = continuation_solve(&field, &f, &Schedule::default()).unwrap();
    assert!(r.v.max_abs() == 0.0);
    assert!(r.stages.len() <= 2);
}

#[test]
fn continuation_reports_failure_with_last_gaps() {
    let field = keldysh_model(101, 9);
    let f = Field2::from_fn(&field.grid, |x, _| x);
    let sched = Schedule { eps: vec![0.1, 0.05, 0.025], tau: vec![0.0], n: vec![2], tol: 1e-12 };
    match continuation_solve(&field, &f, &sched) {
        Err(keldysh_ep::Error::Continuation { prev, last }) => assert!(prev.is_finite() && last.is_finite() && last < prev),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn keldysh_model_viscous_energy_stays_bounded() {
    let field = keldysh_model(401, 33);
    let f = Field2::from_fn(&field.grid, |x, y| (1.0 + 0.5 * (PI * (y + 1.0)).cos()) * (PI * x).sin());
    let r = continuation_solve(&field, &f, &Schedule::default()).unwrap();
    let first = r.stages[0].sqrt_eps_d11;
    for w in r.stages.windows(2) {
        assert!(w[1].sqrt_eps_d11 <= 2.0 * w[0].sqrt_eps_d11);
    }
    assert!(r.stages.iter().all(|s| s.sqrt_eps_d11 <= 2.0 * first));
    assert!(r.stages.iter().all(|s| s.measured_c.is_finite() && s.measured_c > 0.0));
}

/// Five-point finite-difference solve of a₁₁∂₁₁V + ∂₂₂V + a₁∂₁V = f with V = 0
/// at x₁ = 0, ∂₁₁V = 0 at x₁ = R and even reflection at the walls.
fn elliptic_reference(field: &KeldyshField, f: &Field2) -> Field2 {
    let g = &field.grid;
    let (nx, ny) = (g.nx1, g.nx2);
    let (h1, h2) = (g.h1(), g.h2());
    let idx = |i: usize, j: usize| i * ny + j;
    let bw = 3 * ny;
    let mut a = BandMatrix::zeros(nx * ny, bw, bw);
    let mut b = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let r = idx(i, j);
            if i == 0 {
                a.add(r, r, 1.0);
                continue;
            }
            if i == nx - 1 {
                for (o, c) in [(0usize, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)] {
                    a.add(r, idx(i - o, j), c);
                }
                continue;
            }
            let a11 = field.a11.at(i, j);
            let a1 = field.a1.at(i, j);
            a.add(r, idx(i - 1, j), a11 / (h1 * h1) - a1 / (2.0 * h1));
            a.add(r, idx(i + 1, j), a11 / (h1 * h1) + a1 / (2.0 * h1));
            a.add(r, r, -2.0 * a11 / (h1 * h1) - 2.0 / (h2 * h2));
            let jm = if j == 0 { 1 } else { j - 1 };
            let jp = if j == ny - 1 { ny - 2 } else { j + 1 };
            a.add(r, idx(i, jm), 1.0 / (h2 * h2));
            a.add(r, idx(i, jp), 1.0 / (h2 * h2));
            b[r] = f.at(i, j);
        }
    }
    let lu = a.factor().unwrap();
    lu.solve(&mut b);
    Field2 { grid: g.clone(), data: b }
}

#[test]
fn elliptic_continuation_limit_matches_2d_reference() {
    let (nx, ny) = (201, 33);
    let g = Grid2::new(1.0, nx, ny);
    let field = KeldyshField::from_fn(&g, 4, |_, _| (1.0, 0.0, -1.0)).unwrap();
    let f = Field2::from_fn(&g, |x, y| (1.0 + x) * (1.0 + 0.3 * (0.5 * PI * (y + 1.0)).cos()));
    let r = continuation_solve(&field, &f, &Schedule::default()).unwrap();
    // Reference on the extended coefficients, Richardson-extrapolated in x2.
    let coarse_ny = (ny - 1) / 2 + 1;
    let ext = &r.extension;
    let reference = |nyr: usize| {
        let eg = Grid2::new(ext.r_star, ext.field.grid.nx1, nyr);
        let fld = KeldyshField::from_fn(&eg, 4, |x, y| {
            let (a, b, c) = ext.field.eval(x, y);
            (a, b, c)
        })
        .unwrap();
        let fe = ext.extend_scalar(&f).unwrap();
        let fr = Field2::from_fn(&eg, |x, y| fe.eval(x, y, Parity::Even));
        elliptic_reference(&fld, &fr)
    };
    let fine = reference(ny);
    let coarse = reference(coarse_ny);
    let cg = coarse.grid.clone();
    let extrap = Field2::from_fn(&cg, |_, _| 0.0);
    let mut extrap = extrap;
    for i in 0..cg.nx1 {
        for j in 0..cg.nx2 {
            extrap.set(i, j, (4.0 * fine.at(i, 2 * j) - coarse.at(i, j)) / 3.0);
        }
    }
    let extrap = extrap.restrict_x1(nx);
    let v = r.solution.synthesize(coarse_ny).restrict_x1(nx);
    let d = v.sub(&extrap).h1_norm(Parity::Even);
    assert!(d <= 1e-4 * v.h1_norm(Parity::Even).max(1.0), "H1 distance {d}");
}

#[test]
fn weak_form_of_zero_is_zero_and_support_is_checked() {
    let field = keldysh_model(51, 9);
    let z = Field2::zeros(&field.grid);
    let t = Field2::from_fn(&field.grid, |x, _| (PI * x).sin());
    assert_eq!(weak_form_residual(&field, &z, &z, &t).unwrap(), 0.0);
    let bad = Field2::from_fn(&field.grid, |x, _| x);
    assert!(weak_form_residual(&field, &z, &z, &bad).is_err());
}

#[test]
fn weak_form_defect_of_strong_solution_is_quadrature_error() {
    let mut last = f64::INFINITY;
    for (nx, ny) in [(51, 17), (101, 33), (201, 65)] {
        let g = Grid2::new(1.0, nx, ny);
        let field = KeldyshField::from_fn(&g, 4, |x, y| (0.5 - x, 0.05 * (PI * y).sin() * x, -1.0)).unwrap();
        let u = |x: f64, y: f64| x * x * (1.0 + 0.5 * (PI * (y + 1.0)).cos());
        let f = Field2::from_fn(&g, |x, y| {
            let c = 1.0 + 0.5 * (PI * (y + 1.0)).cos();
            let cy = -0.5 * PI * (PI * (y + 1.0)).sin();
            let cyy = -0.5 * PI * PI * (PI * (y + 1.0)).cos();
            let a12 = 0.05 * (PI * y).sin() * x;
            (0.5 - x) * 2.0 * c + 2.0 * a12 * 2.0 * x * cy + x * x * cyy - 2.0 * x * c
        });
        let v = Field2::from_fn(&g, u);
        let t = Field2::from_fn(&g, |x, y| (PI * x).sin() * (1.0 + (PI * (y + 1.0)).cos()));
        let r = weak_form_residual(&field, &v, &f, &t).unwrap().abs();
        assert!(r < last / 3.0, "nx={nx}: {r} vs {last}");
        last = r;
    }
    assert!(last < 1e-3);
}

#[test]
fn continuation_output_satisfies_weak_form() {
    let (nx, ny) = (401, 33);
    let field = keldysh_model(nx, ny);
    let f = Field2::from_fn(&field.grid, |x, y| (1.0 + 0.5 * (PI * (y + 1.0)).cos()) * (PI * x).sin());
    let r = continuation_solve(&field, &f, &Schedule::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let fnorm = f.l2();
    for _ in 0..20 {
        let (a, b, k) = (rng.gen_range(-1.0..1.0), rng.gen_range(1..4) as f64, rng.gen_range(0..4) as f64);
        let t = Field2::from_fn(&field.grid, |x, y| (b * PI * x).sin() * (1.0 + a * x) * (k * PI * (y + 1.0) / 2.0).cos());
        let res = weak_form_residual(&field, &r.v, &f, &t).unwrap();
        assert!(res.abs() <= 1e-4 * fnorm * t.h1_norm(Parity::Even), "{res}");
    }
}

#[test]
fn different_starting_stages_reach_the_same_limit() {
    let field = keldysh_model(201, 17);
    let f = Field2::from_fn(&field.grid, |x, y| (1.0 + 0.5 * (PI * (y + 1.0)).cos()) * (PI * x).sin());
    let s1 = Schedule { tol: 2.5e-7, eps: (0..40).map(|k| 0.1 * 0.5f64.powi(k)).collect(), ..Schedule::default() };
    let s2 = Schedule {
        tol: 2.5e-7,
        eps: (0..40).map(|k| 0.03 * 0.5f64.powi(k)).collect(),
        tau: (0..40).map(|k| 0.05 * 0.5f64.powi(k)).collect(),
        n: vec![16],
    };
    let a = continuation_solve(&field, &f, &s1).unwrap();
    let b = continuation_solve(&field, &f, &s2).unwrap();
    let d = a.v.sub(&b.v).h1_norm(Parity::Even);
    assert!(d <= 1e-6 * a.v.h1_norm(Parity::Even).max(1.0), "{d}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn projected_even_coefficients_are_symmetric(a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let basis = SpectralBasis::new(6).unwrap();
        let g: Vec<f64> = basis.quad_nodes().iter().map(|&y| 1.0 + a * (PI * (y + 1.0)).cos() + b * y * y).collect();
        let m = basis.pair(&g);
        for j in 0..6 { for k in 0..6 {
            prop_assert!((m[j * 6 + k] - m[k * 6 + j]).abs() < 1e-13);
        }}
    }

    #[test]
    fn solution_is_linear_in_data(s in 0.1f64..10.0) {
        let field = keldysh_model(101, 9);
        let f = Field2::from_fn(&field.grid, |x, y| (1.0 + (PI * (y + 1.0)).cos()) * x);
        let a = solve_on_field(&field, &f, 0.01, 3).unwrap();
        let b = solve_on_field(&field, &f.scale(s), 0.01, 3).unwrap();
        for (p, q) in a.theta.iter().zip(&b.theta) {
            prop_assert!((q - s * p).abs() <= 1e-10 * (1.0 + (s * p).abs()));
        }
    }
}
