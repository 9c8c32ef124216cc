mod common;

use common::*;
use cuspflow::initial::{Bump, EndPerturbation, InitialData};
use cuspflow::operators::{gradient_norm_sq, integrate, laplacian, total_area};
use cuspflow::potential::{
    flux_balance, hamilton_h, nonzero_mode_decay_check, solve_poisson, solve_potential, traceless_hessian_normsq,
    zero_mode_solve,
};
use cuspflow::{BackgroundMetric, ConformalMetric, GridConfig, ScalarField, SurfacePoint};
use proptest::prelude::*;

fn perturbed(n: usize, s_hi: f64, n_s: usize) -> ConformalMetric {
    build(n, s_hi, n_s, [0.0, 0.0], 1)
}

fn build(n: usize, s_hi: f64, n_s: usize, center: [f64; 2], k: u32) -> ConformalMetric {
    let a = atlas_with(n, vec![[0.5, 0.5]], vec![1.0], GridConfig { s_hi, ..Default::default() });
    let a = if n_s == 2 * n {
        a
    } else {
        let spec = a.spec.clone();
        cuspflow::ChartAtlas::new(spec, GridConfig { n_s, ..a.grid.clone() }).unwrap()
    };
    let data = InitialData {
        bumps: vec![Bump { center, radius: 0.25, amplitude: 0.3 }],
        ends: vec![EndPerturbation { amplitude: 0.2, k }],
    };
    data.build(&BackgroundMetric::new(&a)).unwrap()
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let mut errs = Vec::new();
    for n in [32, 64, 128] {
        let a = one_end(n);
        let m = background(&a);
        let (fstar, q) = manufactured(&a);
        let sol = solve_poisson(&m, &q, &[0.0]).unwrap();
        let mean = integrate(&fstar, &m) / total_area(&m);
        errs.push(active_sup(&sol.f.zip_map(&fstar, |x, y| x - y + mean)));
        assert!(sol.mean_residual <= 1e-8 * total_area(&m));
        assert!(sol.residual <= 1e-8 * active_sup(&q));
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order > 1.8, "errors {errs:?}");
    }
}

#[test]
fn uniform_source_gives_zero_potential() {
    let a = one_end(32);
    let m = background(&a);
    let q = ScalarField::constant(&a, -0.7);
    let sol = solve_poisson(&m, &q, &[0.0]).unwrap();
    assert!(sol.f.sup_abs() < 1e-12, "{}", sol.f.sup_abs());
    assert!((sol.projected_mass + 0.7).abs() < 1e-12);
}

#[test]
fn potential_of_the_background_metric() {
    let a = one_end(48);
    let m = background(&a);
    let sol = solve_potential(&m).unwrap();
    // Δf = R - R̄ up to the projected multiplier
    let r = cuspflow::operators::scalar_curvature(&m);
    let rbar = integrate(&r, &m) / total_area(&m);
    let lap = laplacian(&sol.f, &m);
    let q = r.map(|v| v - rbar + sol.projected_mass + sol.multiplier);
    assert!(pde_sup(&lap, &q, 1) < 1e-8 * active_sup(&r));
    // the background cusp has R = -2 and u∞ = 1: c = -(−2 − R̄)
    assert!((sol.c[0] - (2.0 + rbar)).abs() < 1e-12);
    let h = hamilton_h(&sol.f, &m);
    let g = gradient_norm_sq(&sol.f, &m);
    let inf_h = h.interior_values(2).into_iter().fold(f64::INFINITY, f64::min);
    let inf_q = lap.zip_map(&g, |l, _| l).interior_values(2).into_iter().fold(f64::INFINITY, f64::min);
    assert!(inf_h >= inf_q - 1e-12);
}

#[test]
fn solve_is_linear() {
    let a = one_end(32);
    let m = background(&a);
    let (_, q1) = manufactured(&a);
    let q2 = ScalarField::from_fn(&a, |p| match p {
        SurfacePoint::Core { x, y } => (-((x - 0.1).powi(2) + (y - 0.2).powi(2)) * 60.0).exp(),
        SurfacePoint::Cusp { .. } => 0.0,
    });
    let s1 = solve_poisson(&m, &q1, &[0.3]).unwrap();
    let s2 = solve_poisson(&m, &q2, &[-0.1]).unwrap();
    let s12 = solve_poisson(&m, &q1.zip_map(&q2, |x, y| x + y), &[0.2]).unwrap();
    let d = s12.f.zip_map(&s1.f, |x, y| x - y).zip_map(&s2.f, |x, y| x - y).sup_abs();
    assert!(d < 1e-9 * s12.f.sup_abs(), "{d}");
}

#[test]
fn gradient_and_angular_decay_are_stable_under_longer_ends() {
    // same h_s, end twice as long
    let short = build(64, 8.0, 128, [0.0, 0.0], 0);
    let long = build(64, 16.0, 282, [0.0, 0.0], 0);
    let a = solve_potential(&short).unwrap();
    let b = solve_potential(&long).unwrap();
    assert!((a.grad_bound - b.grad_bound).abs() <= 0.05 * a.grad_bound);
    let (na, nb) = (nonzero_mode_decay_check(&a.f, 0).unwrap(), nonzero_mode_decay_check(&b.f, 0).unwrap());
    assert!((na - nb).abs() <= 0.1 * na);
    for (sol, m) in [(&a, &short), (&b, &long)] {
        assert!(flux_balance(sol, m) < 1e-3);
        // remainder below the linear asymptote decays like s^{1-μ}
        let ch = &m.atlas().cusps[0];
        let tail = (0..ch.n_s)
            .filter(|&i| ch.s(i) >= ch.s_lo + 1.0)
            .map(|i| ch.s(i) * (sol.f.ring_mean(0, i) - sol.c[0] * ch.s(i) - sol.beta[0]).abs())
            .fold(0.0, f64::max);
        assert!(tail.is_finite() && tail < 5.0, "{tail}");
    }
}

#[test]
fn zero_mode_examples() {
    let a = one_end(32);
    let ch = &a.cusps[0];
    let n = ch.n_s;
    let ones = vec![1.0; n];
    let w = zero_mode_solve(ch, &vec![0.0; n], &ones).unwrap();
    assert!(w.iter().all(|v| *v == 0.0));
    let alpha = 0.37;
    let w = zero_mode_solve(ch, &vec![alpha; n], &ones).unwrap();
    for (i, v) in w.iter().enumerate() {
        assert!((v + alpha * ch.s(i)).abs() < 1e-12, "ring {i}: {v}");
    }
    // constant defect on the exact cusp with factor u: slope -u d
    let u = vec![2.5; n];
    let w = zero_mode_solve(ch, &vec![alpha; n], &u).unwrap();
    assert!((w[n - 1] - w[n - 2] + 2.5 * alpha * ch.h_s).abs() < 1e-12);
    // non-settling data is rejected
    let grow: Vec<f64> = (0..n).map(|i| ch.s(i)).collect();
    assert!(zero_mode_solve(ch, &grow, &ones).is_err());
}

#[test]
fn zero_mode_remainder_decays() {
    // q0 = s^{-μ} with μ = 2: the remainder below the linear asymptote
    // decays like s^{1-μ}
    let a = one_end(128);
    let ch = &a.cusps[0];
    let n = ch.n_s;
    let q0: Vec<f64> = (0..n).map(|i| ch.s(i).powi(-2)).collect();
    let w = zero_mode_solve(ch, &q0, &vec![1.0; n]).unwrap();
    let c = -q0[n - 1];
    let beta = w[n - 1] - c * ch.s_hi;
    let worst = (0..n)
        .filter(|&i| ch.s(i) >= 1.0)
        .map(|i| ch.s(i) * (w[i] - c * ch.s(i) - beta).abs())
        .fold(0.0, f64::max);
    assert!(worst < 10.0, "{worst}");
}

#[test]
fn seeded_angular_mode_is_measured() {
    let a = one_end(48);
    let amp = 0.8;
    let f = ScalarField::from_fn(&a, |p| match p {
        SurfacePoint::Cusp { s, theta, .. } => amp * (-s).exp() * (theta.cos() + 0.5),
        SurfacePoint::Core { .. } => 0.0,
    });
    let v = nonzero_mode_decay_check(&f, 0).unwrap();
    assert!((v - amp).abs() < 1e-12, "{v}");
    let axisymmetric = ScalarField::from_fn(&a, |p| match p {
        SurfacePoint::Cusp { s, .. } => s,
        SurfacePoint::Core { .. } => 0.0,
    });
    assert!(nonzero_mode_decay_check(&axisymmetric, 0).unwrap() < 1e-9);
    assert!(nonzero_mode_decay_check(&f, 3).is_err());
}

#[test]
fn hessian_quantities_of_constants_vanish() {
    let m = perturbed(32, 8.0, 64);
    let c = ScalarField::constant(m.atlas(), 1.3);
    assert!(hamilton_h(&c, &m).sup_abs() < 1e-9);
    assert!(traceless_hessian_normsq(&c, &m).sup_abs() < 1e-9);
    let sol = solve_potential(&m).unwrap();
    let z = traceless_hessian_normsq(&sol.f, &m);
    assert!(z.interior_values(0).iter().all(|v| *v >= 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn zero_mode_solution_satisfies_its_ode(a in -2.0f64..2.0, b in -2.0f64..2.0, u in 0.2f64..4.0) {
        let atlas = one_end(32);
        let ch = &atlas.cusps[0];
        let n = ch.n_s;
        let q0: Vec<f64> = (0..n).map(|i| a + b * (-ch.s(i)).exp()).collect();
        let w = zero_mode_solve(ch, &q0, &vec![u; n]).unwrap();
        let h = ch.h_s;
        for i in 1..n - 1 {
            let lhs = (w[i + 1] - 2.0 * w[i] + w[i - 1]) / (h * h) - (w[i + 1] - w[i - 1]) / (2.0 * h);
            prop_assert!((lhs - u * q0[i]).abs() < 0.05 * (1.0 + (u * q0[i]).abs()));
        }
    }
}
