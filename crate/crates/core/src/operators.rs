//! Matrix-free differential operators, quadrature and chart synchronization.
//!
//! Core chart: 5-point stencil divided by the total conformal factor.
//! Cusp charts: `(1/u)(∂_s² - ∂_s + e^{2s} ∂_θ²)`, the `s` part in flux form
//! `e^{s} ∂_s(e^{-s} ∂_s)` against the same exact `e^{-s}` ring weights the
//! quadrature uses, and Fourier collocation in θ. Values at interpolation nodes (core
//! fringe and holes, innermost cusp ring) and on the outermost ring are not
//! produced by a stencil; [`synchronize`] and the extrapolation below fill them.

use std::f64::consts::PI;

use crate::field::ScalarField;
use crate::geometry::{ChartAtlas, NodeClass};
use crate::metric::ConformalMetric;

/// Exchanges overlap values with a fixed priority: the core is
/// authoritative on the outer half of each overlap (`s` below the midpoint),
/// the cusp chart on the inner half and in the holes.
pub fn synchronize(f: &mut ScalarField) {
    let atlas = f.atlas().clone();
    let snapshot = f.clone();
    for (end, ch) in atlas.cusps.iter().enumerate() {
        let seam = 0.5 * (ch.s_lo + ch.s_hole);
        let nt = ch.n_theta();
        for i in 0..ch.n_s {
            let s = ch.s(i);
            if s >= seam {
                break;
            }
            for (m, &th) in ch.fourier.theta().iter().enumerate() {
                let x = crate::geometry::cusp_to_core(ch.center, s, th);
                let st = crate::geometry::core_stencil(&atlas.core, x);
                f.cusps[end][i * nt + m] = snapshot.eval_core_stencil(&st);
            }
        }
    }
    for k in 0..atlas.core.len() {
        if let Some(nr) = atlas.core.near[k] {
            let ch = &atlas.cusps[nr.end];
            if nr.r > 0.0 && nr.r < crate::geometry::radius_of(0.5 * (ch.s_lo + ch.s_hole)) {
                let s = crate::geometry::s_of_radius(nr.r).min(ch.s_hi);
                f.core[k] = snapshot.eval_cusp_stencil(&ch.stencil(s, nr.theta));
            }
        }
    }
    fill_interpolation_nodes(f);
}

/// Overwrites the interpolation nodes of the composite discretization from
/// the chart that owns them: the innermost cusp ring from the core, core
/// fringe and hole nodes from the cusp charts. Idempotent.
pub fn fill_interpolation_nodes(f: &mut ScalarField) {
    let atlas = f.atlas().clone();
    for (end, ch) in atlas.cusps.iter().enumerate() {
        for m in 0..ch.n_theta() {
            f.cusps[end][m] = f.eval_core_stencil(&atlas.ring0[end][m]);
        }
    }
    for fr in &atlas.fringe {
        f.core[fr.node] = f.eval_cusp_stencil(&fr.stencil);
    }
    f.bump();
}

/// Relative size below which angular modes count as round-off.
pub const THETA_NOISE_FLOOR: f64 = 1e-14;

/// Zeroes angular modes at the round-off level on every cusp ring outside
/// the innermost one. The noise reference of a ring is `max(|f|, min_scale)`.
/// Rings left without angular content become exactly constant, which keeps
/// the `e^{2s}`-weighted θ-derivatives of derived fields clean far out.
pub fn suppress_theta_noise(f: &mut ScalarField, min_scale: f64) {
    let atlas = f.atlas().clone();
    let mut modal = Vec::new();
    for (end, ch) in atlas.cusps.iter().enumerate() {
        let nt = ch.n_theta();
        modal.resize(nt, 0.0);
        for i in 1..ch.n_s {
            let ring = &mut f.cusps[end][i * nt..(i + 1) * nt];
            let scale = ring.iter().fold(min_scale, |m, v| m.max(v.abs()));
            let floor = THETA_NOISE_FLOOR * scale;
            ch.fourier.analyze(ring, &mut modal);
            let mut kept = false;
            for c in modal[1..].iter_mut() {
                if c.abs() <= floor {
                    *c = 0.0;
                } else {
                    kept = true;
                }
            }
            if kept {
                ch.fourier.synthesize(&modal, ring);
            } else {
                let mean = ring.iter().sum::<f64>() / nt as f64;
                ring.fill(mean);
            }
        }
    }
    fill_interpolation_nodes(f);
}

fn extrapolate_end(f: &mut ScalarField) {
    let atlas = f.atlas().clone();
    for (end, ch) in atlas.cusps.iter().enumerate() {
        let nt = ch.n_theta();
        let n = ch.n_s;
        let data = &mut f.cusps[end];
        for m in 0..nt {
            let a = data[(n - 2) * nt + m];
            let b = data[(n - 3) * nt + m];
            let c = data[(n - 4) * nt + m];
            data[(n - 1) * nt + m] = 3.0 * a - 3.0 * b + c;
        }
    }
}

/// Stencil output at PDE nodes, then end extrapolation and synchronization.
fn finish(mut out: ScalarField) -> ScalarField {
    extrapolate_end(&mut out);
    fill_interpolation_nodes(&mut out);
    out
}

/// `min_scale` bounds the noise reference of each ring from below; a log
/// factor carries the absolute round-off of the factor it came from.
fn laplacian_with(
    f: &ScalarField,
    core_factor: impl Fn(usize) -> f64,
    u: Option<&ScalarField>,
    min_scale: f64,
) -> ScalarField {
    let atlas = f.atlas().clone();
    let mut out = ScalarField::zeros(&atlas);
    let core = &atlas.core;
    let ih2 = 1.0 / (core.h * core.h);
    for k in 0..core.len() {
        if core.class[k] != NodeClass::Interior {
            continue;
        }
        let nb = core.neighbors(k);
        let lap = (f.core[nb[0]] + f.core[nb[1]] + f.core[nb[2]] + f.core[nb[3]] - 4.0 * f.core[k]) * ih2;
        out.core[k] = lap / core_factor(k);
    }
    let mut buf = Vec::new();
    let mut dev = Vec::new();
    for (end, ch) in atlas.cusps.iter().enumerate() {
        let nt = ch.n_theta();
        let h = ch.h_s;
        let data = &f.cusps[end];
        buf.resize(nt, 0.0);
        for i in 1..ch.n_s - 1 {
            let e2s = (2.0 * ch.s(i)).exp();
            // the ring mean is removed first so that D2 cannot leak round-off
            // of a large mean into the zero mode, and modes at the round-off
            // level of the ring are dropped since e^{2s} would amplify them
            let ring = &data[i * nt..(i + 1) * nt];
            let mean = ring.iter().sum::<f64>() / nt as f64;
            let scale = ring.iter().fold(min_scale, |m, v| m.max(v.abs()));
            dev.clear();
            dev.extend(ring.iter().map(|v| v - mean));
            ch.fourier.d2_filtered(&dev, &mut buf, THETA_NOISE_FLOOR * scale);
            for m in 0..nt {
                let c = data[i * nt + m];
                let p = data[(i + 1) * nt + m];
                let q = data[(i - 1) * nt + m];
                let v = (ch.flux[i] * (p - c) - ch.flux[i - 1] * (c - q)) / (h * ch.ring_weight[i]) + e2s * buf[m];
                let uu = u.map_or(1.0, |u| u.cusps[end][i * nt + m]);
                out.cusps[end][i * nt + m] = v / uu;
            }
        }
    }
    finish(out)
}

/// Laplace–Beltrami operator of `g = u ĝ`.
pub fn laplacian(f: &ScalarField, metric: &ConformalMetric) -> ScalarField {
    laplacian_with(f, |k| metric.core_factor(k), Some(&metric.u), 0.0)
}

/// Laplace–Beltrami operator of the background `ĝ`.
pub fn background_laplacian(f: &ScalarField, metric: &ConformalMetric) -> ScalarField {
    let w = &metric.background.w_core;
    laplacian_with(f, |k| w[k], None, 0.0)
}

/// `|∇f|²_g`.
pub fn gradient_norm_sq(f: &ScalarField, metric: &ConformalMetric) -> ScalarField {
    let atlas = f.atlas().clone();
    let mut out = ScalarField::zeros(&atlas);
    let core = &atlas.core;
    let i2h = 0.5 / core.h;
    for k in 0..core.len() {
        if core.class[k] != NodeClass::Interior {
            continue;
        }
        let nb = core.neighbors(k);
        let fx = (f.core[nb[0]] - f.core[nb[1]]) * i2h;
        let fy = (f.core[nb[2]] - f.core[nb[3]]) * i2h;
        out.core[k] = (fx * fx + fy * fy) / metric.core_factor(k);
    }
    let mut ft = Vec::new();
    for (end, ch) in atlas.cusps.iter().enumerate() {
        let nt = ch.n_theta();
        let h = ch.h_s;
        let n = ch.n_s;
        let data = &f.cusps[end];
        ft.resize(nt, 0.0);
        for i in 1..n {
            let e2s = (2.0 * ch.s(i)).exp();
            ch.fourier.d1(&data[i * nt..(i + 1) * nt], &mut ft);
            for m in 0..nt {
                let fs = if i + 1 < n {
                    (data[(i + 1) * nt + m] - data[(i - 1) * nt + m]) / (2.0 * h)
                } else {
                    (3.0 * data[i * nt + m] - 4.0 * data[(i - 1) * nt + m] + data[(i - 2) * nt + m]) / (2.0 * h)
                };
                out.cusps[end][i * nt + m] = (fs * fs + e2s * ft[m] * ft[m]) / metric.u.cusps[end][i * nt + m];
            }
        }
    }
    fill_interpolation_nodes(&mut out);
    out
}

/// Scalar curvature `R = (R̂ - Δ̂ log u) / u`.
pub fn scalar_curvature(metric: &ConformalMetric) -> ScalarField {
    let w = &metric.background.w_core;
    let lap = laplacian_with(&metric.log_u(), |k| w[k], None, 1.0);
    let rhat = metric.background.curvature();
    let mut out = rhat.zip_map(&lap, |a, b| a - b).zip_map(&metric.u, |a, u| a / u);
    fill_interpolation_nodes(&mut out);
    out
}

/// Nodal quadrature weights of `∫ f dA_g`: trapezoid in the core and
/// product-trapezoid against `χ(s) e^{-s}` on cusp rings (the partition of
/// unity χ integrated exactly), plus the constant-limit tail beyond `s_hi` folded
/// into the outermost ring.
pub fn quadrature_weights(metric: &ConformalMetric) -> ScalarField {
    let atlas = metric.atlas().clone();
    let mut w = ScalarField::zeros(&atlas);
    let core = &atlas.core;
    let h2 = core.h * core.h;
    for k in 0..core.len() {
        if core.class[k] == NodeClass::Interior {
            w.core[k] = h2 * (1.0 - core.chi[k]) * metric.core_factor(k);
        }
    }
    for (end, ch) in atlas.cusps.iter().enumerate() {
        let nt = ch.n_theta();
        let dth = 2.0 * PI / nt as f64;
        for i in 0..ch.n_s {
            let mut ring = ch.quad_weight[i] * dth;
            if i + 1 == ch.n_s {
                ring += (-ch.s_hi).exp() * dth;
            }
            for m in 0..nt {
                w.cusps[end][i * nt + m] = ring * metric.u.cusps[end][i * nt + m];
            }
        }
    }
    w
}

pub fn integrate(f: &ScalarField, metric: &ConformalMetric) -> f64 {
    let w = quadrature_weights(metric);
    dot(&w, f)
}

pub(crate) fn dot(w: &ScalarField, f: &ScalarField) -> f64 {
    let mut s = 0.0;
    for (a, b) in w.core.iter().zip(&f.core) {
        if *a != 0.0 {
            s += a * b;
        }
    }
    for (ca, cb) in w.cusps.iter().zip(&f.cusps) {
        for (a, b) in ca.iter().zip(cb) {
            s += a * b;
        }
    }
    s
}

pub fn total_area(metric: &ConformalMetric) -> f64 {
    integrate(&ScalarField::constant(metric.atlas(), 1.0), metric)
}

/// `∫ R dA - 4πχ` of the metric.
pub fn gauss_bonnet_defect(metric: &ConformalMetric) -> f64 {
    let r = scalar_curvature(metric);
    integrate(&r, metric) - 4.0 * PI * metric.atlas().spec.euler_characteristic()
}

/// `max s^μ |v|` over the cusp nodes of `end` with `s >= s_lo + 1`.
pub fn decay_norm(v: &ScalarField, mu: f64, end: usize) -> crate::Result<f64> {
    let ch = v.atlas().cusps.get(end).ok_or_else(|| crate::FlowError::Parameter(format!("no end {end}")))?;
    Ok(decay_norm_from(v, end, 0.0, mu, ch.s_lo + 1.0))
}

/// `max s^μ |f - limit|` over the rings of one end with `s >= s_from`.
pub fn decay_norm_from(f: &ScalarField, end: usize, limit: f64, mu: f64, s_from: f64) -> f64 {
    let ch = &f.atlas().cusps[end];
    let nt = ch.n_theta();
    let mut m: f64 = 0.0;
    for i in 0..ch.n_s {
        let s = ch.s(i);
        if s < s_from {
            continue;
        }
        let w = s.powf(mu);
        for v in &f.cusps[end][i * nt..(i + 1) * nt] {
            m = m.max(w * (v - limit).abs());
        }
    }
    m
}

/// `∫ a Δb - b Δa dA`, which vanishes for compactly supported data.
pub fn green_identity_residual(a: &ScalarField, b: &ScalarField, metric: &ConformalMetric) -> f64 {
    let la = laplacian(a, metric);
    let lb = laplacian(b, metric);
    let t1 = a.zip_map(&lb, |x, y| x * y);
    let t2 = b.zip_map(&la, |x, y| x * y);
    integrate(&t1, metric) - integrate(&t2, metric)
}

/// Largest value on one chart set, skipping hole nodes.
pub fn sup_over(atlas: &ChartAtlas, f: &ScalarField, g: impl Fn(f64) -> f64) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for (k, v) in f.core.iter().enumerate() {
        if atlas.core.class[k] != NodeClass::Inactive {
            m = m.max(g(*v));
        }
    }
    for v in f.cusps.iter().flatten() {
        m = m.max(g(*v));
    }
    m
}
