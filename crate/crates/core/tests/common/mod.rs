#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use cuspflow::geometry::{radius_of, NodeClass};
use cuspflow::{BackgroundMetric, ChartAtlas, ConformalMetric, GridConfig, ScalarField, SurfacePoint, SurfaceSpec};

pub fn atlas_with(n: usize, punctures: Vec<[f64; 2]>, sigma: Vec<f64>, grid: GridConfig) -> Arc<ChartAtlas> {
    let spec = SurfaceSpec::new(punctures, sigma, 2.0).unwrap();
    ChartAtlas::new(spec, GridConfig { core_n: n, n_s: 2 * n, ..grid }).unwrap()
}

pub fn one_end(n: usize) -> Arc<ChartAtlas> {
    atlas_with(n, vec![[0.5, 0.5]], vec![2.0], GridConfig::default())
}

/// Two punctures at maximal distance need smaller footprints.
pub fn two_end_grid() -> GridConfig {
    GridConfig { s_lo: 0.45, blend_outer_radius: 0.35, ..GridConfig::default() }
}

pub fn background(atlas: &Arc<ChartAtlas>) -> ConformalMetric {
    ConformalMetric::background_only(&BackgroundMetric::new(atlas))
}

/// Smooth periodic test function on the torus and its flat Laplacian. Around
/// a puncture at the centre its angular content sits in modes `4k`, which
/// sixteen θ nodes resolve far below the spatial error.
pub fn torus_fn(x: f64, y: f64) -> (f64, f64) {
    let g = (2.0 * PI * x).cos() + (2.0 * PI * y).cos();
    (g, -4.0 * PI * PI * g)
}

/// Position in the unit square and the flat-to-`ĝ` factor at a node.
pub fn locate(atlas: &ChartAtlas, p: SurfacePoint) -> ([f64; 2], f64) {
    match p {
        SurfacePoint::Core { x, y } => {
            let (psi, _) = atlas.background_at([x, y]);
            ([x, y], (2.0 * psi).exp())
        }
        SurfacePoint::Cusp { end, s, theta } => {
            let c = atlas.cusps[end].center;
            let r = radius_of(s);
            // ĝ = (r log(1/r))^{-2} |dx|² on the cusp chart
            ([c[0] + r * theta.cos(), c[1] + r * theta.sin()], (r * s.exp()).powi(-2))
        }
    }
}

/// A torus function pulled back to every chart, and its exact background
/// Laplacian.
pub fn manufactured(atlas: &Arc<ChartAtlas>) -> (ScalarField, ScalarField) {
    let f = ScalarField::from_fn(atlas, |p| {
        let ([x, y], _) = locate(atlas, p);
        torus_fn(x, y).0
    });
    let q = ScalarField::from_fn(atlas, |p| {
        let ([x, y], w) = locate(atlas, p);
        torus_fn(x, y).1 / w
    });
    (f, q)
}

/// Max `|a - b|` over core interior nodes and cusp rings `1..n_s-1`.
pub fn pde_sup(a: &ScalarField, b: &ScalarField, margin: usize) -> f64 {
    let d = a.zip_map(b, |x, y| x - y);
    d.interior_values(margin).iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

pub fn active_sup(a: &ScalarField) -> f64 {
    let atlas = a.atlas();
    let mut m: f64 = 0.0;
    for (k, v) in a.core.iter().enumerate() {
        if atlas.core.class[k] != NodeClass::Inactive {
            m = m.max(v.abs());
        }
    }
    for v in a.cusps.iter().flatten() {
        m = m.max(v.abs());
    }
    m
}
