mod common;

use common::{background, one_end};
use cuspflow::diagnostics::{barrier_check, curvature_evolution_residual, h_evolution_residual, residual_sup, EndSnapshot};
use cuspflow::flow::{step, FlowConfig, FlowState, RhoMode};
use cuspflow::initial::{EndPerturbation, InitialData};
use cuspflow::BackgroundMetric;
use cuspflow::ScalarField;

/// `R' = R(R - ρ)` with `R(0) = r0`.
fn riccati(r0: f64, rho: f64, t: f64) -> f64 {
    // 1/R is linear: (1/R)' = ρ/R - 1
    1.0 / (1.0 / rho + (1.0 / r0 - 1.0 / rho) * (rho * t).exp())
}

#[test]
fn curvature_residual_of_a_constant_solution_is_second_order() {
    let a = one_end(32);
    let m = background(&a);
    let rho = -2.0;
    let res = |dt: f64| {
        let at = |t: f64| ScalarField::constant(&a, riccati(-1.0, rho, t));
        let r = curvature_evolution_residual(&at(0.5 - dt), &at(0.5), &at(0.5 + dt), &m, rho, dt).unwrap();
        residual_sup(&r)
    };
    let (e1, e2) = (res(0.02), res(0.01));
    assert!(e1 < 1e-3 && (e1 / e2 - 4.0).abs() < 0.1, "{e1} {e2}");

    let still = ScalarField::constant(&a, rho);
    let r = curvature_evolution_residual(&still, &still, &still, &m, rho, 0.1).unwrap();
    assert!(residual_sup(&r) < 1e-12);
}

#[test]
fn h_residual_vanishes_when_nothing_moves() {
    let a = one_end(32);
    let m = background(&a);
    let zero = ScalarField::zeros(&a);
    let r = h_evolution_residual(&zero, &zero, &zero, &zero, &m, -2.0, -2.0, 0.1, 0.1).unwrap();
    assert_eq!(residual_sup(&r), 0.0);
    let other = ScalarField::zeros(&one_end(64));
    assert!(h_evolution_residual(&zero, &other, &zero, &zero, &m, -2.0, -2.0, 0.1, 0.1).is_err());
}

/// `v(0) = s^{-μ}` on an end, flowed with `ρ = 0`, stays under the barrier
/// `1.1 e^{5t} min{1, (s/s₀)^{-μ}}` for a short time.
#[test]
fn barrier_holds_along_a_short_unnormalized_run() {
    let a = one_end(32);
    let data = InitialData { bumps: vec![], ends: vec![EndPerturbation { amplitude: 1.0, k: 0 }] };
    let m0 = data.build(&BackgroundMetric::new(&a)).unwrap();
    let config =
        FlowConfig { rho_mode: RhoMode::Unnormalized, rho: None, t_final: 0.2, stop_tol: 0.0, ..FlowConfig::default() };
    let mut state = FlowState::new(&m0, &config).unwrap();
    let s0 = a.cusps[0].s_lo + 1.0;
    let mut history = vec![EndSnapshot::capture(&state.u(), 0, state.lambda[0], 0.0)];
    while state.t < config.t_final {
        step(&mut state, &config).unwrap();
        history.push(EndSnapshot::capture(&state.u(), 0, state.lambda[0], state.t));
    }
    assert!(history.len() > 2);
    let (ok, violation) = barrier_check(&history, 5.0, 1.1, s0, 2.0);
    assert!(ok, "{violation:?}");
    // a constant that misses the initial data fails at t = 0
    let (ok, violation) = barrier_check(&history, 5.0, 0.5, s0, 2.0);
    assert!(!ok && violation.unwrap().t == 0.0);
}

#[test]
fn snapshot_covers_the_decay_range() {
    let a = one_end(32);
    let ch = &a.cusps[0];
    let u = ScalarField::constant(&a, 3.0);
    let snap = EndSnapshot::capture(&u, 0, 2.0, 0.5);
    let rings = (0..ch.n_s).filter(|&i| ch.s(i) >= ch.s_lo + 1.0).count();
    assert_eq!(snap.values.len(), rings * ch.n_theta());
    assert!(snap.values.iter().all(|&(s, v)| s >= ch.s_lo + 1.0 && v == 1.0));
}
