mod common;

use common::{atlas_with, one_end};
use cuspflow::initial::{EndPerturbation, InitialData};
use cuspflow::operators::{scalar_curvature, total_area};
use cuspflow::{BackgroundMetric, ChartAtlas, ConformalMetric, GridConfig, SurfaceSpec};

#[test]
fn exact_end_has_curvature_minus_sigma() {
    for sigma in [0.5, 1.0, 3.0] {
        let a = atlas_with(32, vec![[0.5, 0.5]], vec![sigma], GridConfig::default());
        let m = InitialData::default().build(&BackgroundMetric::new(&a)).unwrap();
        let r = scalar_curvature(&m);
        let ch = &a.cusps[0];
        for i in (0..ch.n_s).filter(|&i| ch.s(i) >= ch.s_lo + 1.0 && i + 1 < ch.n_s) {
            for v in r.ring(0, i) {
                assert!((v + sigma).abs() < 1e-10, "sigma {sigma} ring {i}: {v}");
            }
        }
    }
}

/// On the end `u = 1 + ε` with `ε = a s^{-2}` (σ = 2), and on the exact cusp
/// `Δ = ∂²_s - ∂_s`, so `R = -(2 + (ln u)'' - (ln u)')/u`. Its leading term
/// is `R + 2 ≈ 2a s^{-2}`.
#[test]
fn end_curvature_follows_the_decay_profile() {
    let a = atlas_with(64, vec![[0.5, 0.5]], vec![2.0], GridConfig::default());
    let amp = 0.3;
    let data = InitialData { bumps: vec![], ends: vec![EndPerturbation { amplitude: amp, k: 0 }] };
    let m = data.build(&BackgroundMetric::new(&a)).unwrap();
    let r = scalar_curvature(&m);
    let ch = &a.cusps[0];
    let exact = |s: f64| {
        let (e, e1, e2) = (amp * s.powi(-2), -2.0 * amp * s.powi(-3), 6.0 * amp * s.powi(-4));
        let u = 1.0 + e;
        let (l1, l2) = (e1 / u, e2 / u - (e1 / u).powi(2));
        -(2.0 + l2 - l1) / u
    };
    let mut worst = 0.0f64;
    for i in (0..ch.n_s).filter(|&i| ch.s(i) >= ch.s_lo + 1.5 && i + 2 < ch.n_s) {
        let s = ch.s(i);
        let e = (r.ring_mean(0, i) - exact(s)).abs() * s * s / (2.0 * amp);
        worst = worst.max(e);
    }
    assert!(worst < 1e-2, "{worst}");
    let far = ch.s(ch.n_s - 3);
    assert!(((exact(far) + 2.0) * far * far / (2.0 * amp) - 1.0).abs() < 0.2);
}

#[test]
fn area_is_linear_in_the_factor() {
    let a = one_end(32);
    let m = InitialData::default().build(&BackgroundMetric::new(&a)).unwrap();
    let doubled = ConformalMetric::new(&m.background, m.u.map(|v| 2.0 * v), m.end_limits.iter().map(|l| 2.0 * l).collect()).unwrap();
    assert!((total_area(&doubled) - 2.0 * total_area(&m)).abs() < 1e-12 * total_area(&m));
}

#[test]
fn layout_check_runs_before_allocation() {
    let spec = SurfaceSpec { punctures: vec![[0.2, 0.2], [0.3, 0.2]], sigma: vec![1.0, 1.0], mu: 2.0 };
    assert!(ChartAtlas::check_layout(&spec, &GridConfig::default()).is_err());
    let spec = SurfaceSpec { punctures: vec![[0.5, 0.5]], sigma: vec![1.0], mu: 0.5 };
    assert!(ChartAtlas::check_layout(&spec, &GridConfig::default()).is_err());
    let grid = GridConfig { n_theta: 7, ..GridConfig::default() };
    let spec = SurfaceSpec { mu: 2.0, ..spec };
    assert!(ChartAtlas::check_layout(&spec, &grid).is_err());
    assert!(ChartAtlas::check_layout(&spec, &GridConfig::default()).is_ok());
}
