mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use common::{atlas_with, one_end, two_end_grid};
use cuspflow::diagnostics::{bounds_check, transient_end};
use cuspflow::flow::{
    end_limit, end_limit_step, rho_area_preserving, run, step, uniformize, FlowConfig, FlowState, RhoMode, RunStatus,
};
use cuspflow::initial::Bump;
use cuspflow::operators::total_area;
use cuspflow::{BackgroundMetric, ChartAtlas, ConformalMetric, ScalarField, SurfacePoint};

fn scaled(atlas: &Arc<ChartAtlas>, c: f64) -> ConformalMetric {
    let bg = BackgroundMetric::new(atlas);
    let limits = atlas.spec.sigma.iter().map(|s| c * 2.0 / s).collect();
    let u = ScalarField::from_fn(atlas, |p| match p {
        SurfacePoint::Cusp { end, .. } => c * 2.0 / atlas.spec.sigma[end],
        SurfacePoint::Core { .. } => c,
    });
    ConformalMetric::new(&bg, u, limits).unwrap()
}

fn hyperbolic(n: usize) -> ConformalMetric {
    let bg = BackgroundMetric::new(&one_end(n));
    uniformize(&ConformalMetric::background_only(&bg), -2.0, &FlowConfig::default()).unwrap()
}

fn fixed(rho: f64, dt: f64, t_final: f64) -> FlowConfig {
    FlowConfig {
        rho_mode: if rho == 0.0 { RhoMode::Unnormalized } else { RhoMode::Explicit },
        rho: (rho != 0.0).then_some(rho),
        dt_init: dt,
        adaptive: false,
        extrapolate: false,
        t_final,
        stop_tol: 0.0,
        ..FlowConfig::default()
    }
}

/// Cusp values on rings with `s` in `[lo, hi]`.
fn ring_values(f: &ScalarField, lo: f64, hi: f64) -> Vec<f64> {
    let ch = &f.atlas().cusps[0];
    (0..ch.n_s).filter(|&i| ch.s(i) >= lo && ch.s(i) <= hi).flat_map(|i| f.ring(0, i).to_vec()).collect()
}

#[test]
fn area_preserving_rho_examples() {
    let one = one_end(32);
    let a = scaled(&one, 1.0);
    let m = scaled(&one, 4.0 * PI / total_area(&a));
    assert!((total_area(&m) - 4.0 * PI).abs() < 1e-10);
    assert!((rho_area_preserving(&m) + 1.0).abs() < 1e-12);

    let two = atlas_with(32, vec![[0.25, 0.25], [0.75, 0.75]], vec![2.0, 2.0], two_end_grid());
    let b = scaled(&two, 1.0);
    let m = scaled(&two, 8.0 * PI / total_area(&b));
    assert!((rho_area_preserving(&m) + 1.0).abs() < 1e-12);
    assert!((rho_area_preserving(&b) * total_area(&b) + 8.0 * PI).abs() < 1e-12);
}

#[test]
fn hyperbolic_start_stops_immediately() {
    let hyp = hyperbolic(32);
    let out = run(&hyp, &FlowConfig { rho: Some(-2.0), stop_tol: 1e-4, ..FlowConfig::default() }, |_| {}).unwrap();
    assert_eq!(out.status, RunStatus::Converged, "{:?}", out.records[0].sup_r_minus_rho);
    assert_eq!(out.steps, 0);
    assert_eq!(out.records.len(), 1);
}

/// One backward-Euler step from `u ≡ 1` on the exact cusp: the end limit
/// follows the implicit step of `dU/dt = ρU + 2` and the cusp interior
/// follows the implicit step of `dφ/dt = ρ + 2e^{-φ}`. The two scalar steps
/// differ at O(dt²), so the comparison stays away from the end ring and from
/// the core.
#[test]
fn constant_mode_step_matches_scalar_oracles() {
    let (rho, dt) = (-1.0, 0.1);
    let m = ConformalMetric::background_only(&BackgroundMetric::new(&one_end(32)));
    let config = fixed(rho, dt, dt);
    let mut state = FlowState::new(&m, &config).unwrap();
    step(&mut state, &config).unwrap();
    assert_eq!(state.lambda[0], end_limit_step(1.0, rho, dt));

    let mut phi: f64 = 0.0;
    for _ in 0..50 {
        let g = phi - dt * (rho + 2.0 * (-phi).exp());
        phi -= g / (1.0 + 2.0 * dt * (-phi).exp());
    }
    let far = ring_values(&state.phi, 4.0, 6.0);
    let err = far.iter().fold(0.0f64, |e, v| e.max((v - phi).abs()));
    assert!(err < 1e-6, "{err}");
}

/// `ρ = 0` expands a hyperbolic end: `U(t) = 2/σ + 2t`, i.e. `λ/λ₀ = 1 + σt`.
#[test]
fn unnormalized_ends_expand() {
    let a = atlas_with(32, vec![[0.5, 0.5]], vec![2.0], Default::default());
    let m = ConformalMetric::background_only(&BackgroundMetric::new(&a));
    let config = FlowConfig { rho_mode: RhoMode::Unnormalized, rho: None, t_final: 0.2, stop_tol: 0.0, ..FlowConfig::default() };
    let out = run(&m, &config, |_| {}).unwrap();
    let t = out.state.t;
    assert!((t - 0.2).abs() < 1e-12);
    assert!((out.state.lambda[0] - end_limit(2.0, 0.0, t)).abs() < 1e-3);
    assert!(((out.state.lambda[0] - 1.4) / 1.4).abs() < 1e-3);
    let u = out.state.u();
    for v in ring_values(&u, 3.0, 5.0) {
        assert!((v - (1.0 + 2.0 * t)).abs() < 1e-3, "{v}");
    }
}

#[test]
fn zero_potential_stays_zero_on_a_hyperbolic_metric() {
    let hyp = hyperbolic(32);
    let config = fixed(-2.0, 0.05, 0.25);
    let mut state = FlowState::with_potential(&hyp, -2.0, ScalarField::zeros(hyp.atlas()), 0.05).unwrap();
    while state.t < 0.25 - 1e-12 {
        step(&mut state, &config).unwrap();
    }
    assert!(state.f.sup_abs() < 1e-8, "{}", state.f.sup_abs());
}

/// Constant `f₀ = c` solves `∂f/∂t = Δf + R̄f` as `c e^{R̄t}`; backward Euler
/// gives `c (1 - R̄ dt)^{-n}`.
#[test]
fn constant_potential_decays_like_the_scalar_ode() {
    let hyp = hyperbolic(32);
    let dt = 0.05;
    let config = fixed(-2.0, dt, 0.25);
    let c = 0.5;
    let mut state = FlowState::with_potential(&hyp, -2.0, ScalarField::constant(hyp.atlas(), c), dt).unwrap();
    let mut n = 0;
    while state.t < 0.25 - 1e-12 {
        step(&mut state, &config).unwrap();
        n += 1;
    }
    let rbar = state.rbar;
    assert!((rbar + 2.0).abs() < 1e-8);
    let discrete = c * (1.0 - rbar * dt).powi(-n);
    let v = ring_values(&state.f, 0.0, 100.0);
    let err = v.iter().chain(&state.f.core).fold(0.0f64, |e, x| e.max((x - discrete).abs()));
    assert!(err < 1e-8 * c, "{err}");
    // and the continuous solution to first order in dt
    assert!((discrete - c * (rbar * state.t).exp()).abs() < 0.05 * c);
}

#[test]
fn small_bump_on_hyperbolic_metric_decays_monotonically() {
    let hyp = hyperbolic(32);
    let bump = Bump { center: [0.0, 0.0], radius: 0.3, amplitude: 0.05 };
    let u = hyp.u.zip_map(
        &ScalarField::from_fn(hyp.atlas(), |p| match p {
            SurfacePoint::Core { x, y } => bump.eval([x, y]),
            SurfacePoint::Cusp { .. } => 0.0,
        }),
        |u, b| u * (1.0 + b),
    );
    let m0 = ConformalMetric::new(&hyp.background, u, hyp.end_limits.clone()).unwrap();
    let config = FlowConfig { rho: Some(-2.0), t_final: 3.0, stop_tol: 1e-7, ..FlowConfig::default() };
    let out = run(&m0, &config, |_| {}).unwrap();
    let t0 = transient_end(&out.records).expect("curvature becomes negative");
    let tail: Vec<f64> = out.records.iter().filter(|r| r.t >= t0).map(|r| r.sup_r_minus_rho).collect();
    for w in tail.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{tail:?}");
    }
    assert!(tail.last().unwrap() < &(1e-2 * tail[0]));
    assert!(bounds_check(&out.records, -2.0).pass);
}

#[test]
fn step_rejection_and_abort() {
    let m = ConformalMetric::background_only(&BackgroundMetric::new(&one_end(32)));
    // a huge first step is rejected and retried
    let config = FlowConfig { rho: Some(-1.0), dt_init: 5.0, dt_max: 5.0, t_final: 0.5, stop_tol: 0.0, newton_max_iter: 4, ..FlowConfig::default() };
    let mut state = FlowState::new(&m, &config).unwrap();
    let info = step(&mut state, &config).unwrap();
    assert!(info.rejected > 0 && info.dt < 5.0);

    // nothing below dt_min is allowed to converge
    let config = FlowConfig { dt_init: 1.0, dt_min: 0.5, dt_max: 1.0, newton_max_iter: 1, ..config };
    let failure = match run(&m, &config, |_| {}) {
        Err(f) => f,
        Ok(_) => panic!("run should abort"),
    };
    assert_eq!(failure.state.t, 0.0);
    assert_eq!(failure.records.len(), 1);
}
