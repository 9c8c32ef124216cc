//! Residual monitors, exponential-rate fits and barrier checks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::field::ScalarField;
use crate::metric::ConformalMetric;
use crate::operators::laplacian;

/// One sample of a flow run. Channels that need neighbouring samples (time
/// derivatives) are `None` where unavailable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub t: f64,
    pub area: f64,
    pub rbar: f64,
    pub rho: f64,
    pub sup_r_minus_rho: f64,
    pub inf_r: f64,
    pub sup_r: f64,
    pub sup_h: f64,
    pub sup_grad_f: f64,
    /// `decay_norm(u - λ_j, μ)` per end.
    pub decay_norm: Vec<f64>,
    /// Mean of `R` over the outermost PDE ring per end.
    pub end_curvature: Vec<f64>,
    /// End limits `λ_j` of the factor.
    pub lambda: Vec<f64>,
    pub gauss_bonnet: f64,
    pub res_area: Option<f64>,
    pub res_curvature: Option<f64>,
    pub res_trace: f64,
    pub res_h: Option<f64>,
    /// `sup |∇R| t^{1/2}`; no threshold attached.
    pub shi: f64,
    pub dt: f64,
    pub newton_iters: usize,
}

impl TimeSeriesRecord {
    pub fn is_finite(&self) -> bool {
        let opt = |v: Option<f64>| v.is_none_or(f64::is_finite);
        [
            self.t,
            self.area,
            self.rbar,
            self.rho,
            self.sup_r_minus_rho,
            self.inf_r,
            self.sup_r,
            self.sup_h,
            self.sup_grad_f,
            self.gauss_bonnet,
            self.res_trace,
            self.shi,
            self.dt,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.decay_norm.iter().chain(&self.end_curvature).chain(&self.lambda).all(|v| v.is_finite())
            && opt(self.res_area)
            && opt(self.res_curvature)
            && opt(self.res_h)
    }
}

/// Weights `(w_prev, w_mid, w_next)` of the three-point first derivative at
/// the middle of a possibly nonuniform stencil.
pub fn central_weights(dt_prev: f64, dt_next: f64) -> (f64, f64, f64) {
    let (a, b) = (dt_prev, dt_next);
    (-b / (a * (a + b)), (b - a) / (a * b), a / (b * (a + b)))
}

/// First derivative of a sampled series at every sample: three-point
/// central on the interior, three-point one-sided at both ends.
pub fn differentiate(t: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = t.len();
    if n < 3 || y.len() != n {
        return Err(FlowError::Parameter("at least three samples are required".into()));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FlowError::Parameter("sample times must increase strictly".into()));
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (wp, wm, wn) = central_weights(t[i] - t[i - 1], t[i + 1] - t[i]);
        d[i] = wp * y[i - 1] + wm * y[i] + wn * y[i + 1];
    }
    // one-sided quadratic through the first / last three samples
    let one_sided = |x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64| {
        let (h1, h2) = (x1 - x0, x2 - x0);
        let c1 = h2 / (h1 * (h2 - h1));
        let c2 = -h1 / (h2 * (h2 - h1));
        c1 * (y1 - y0) + c2 * (y2 - y0)
    };
    d[0] = one_sided(t[0], t[1], t[2], y[0], y[1], y[2]);
    d[n - 1] = one_sided(t[n - 1], t[n - 2], t[n - 3], y[n - 1], y[n - 2], y[n - 3]);
    Ok(d)
}

/// `(A' - (ρA - 4πχ)) / (|ρ| A)` per sample. With `ρ = 0` the
/// normalization falls back to `A`.
pub fn area_ode_residual(series: &[TimeSeriesRecord], chi: f64) -> Result<Vec<f64>> {
    let t: Vec<f64> = series.iter().map(|r| r.t).collect();
    let a: Vec<f64> = series.iter().map(|r| r.area).collect();
    let d = differentiate(&t, &a)?;
    Ok(series
        .iter()
        .zip(d)
        .map(|(r, da)| {
            let norm = if r.rho != 0.0 { r.rho.abs() * r.area } else { r.area };
            (da - (r.rho * r.area - 4.0 * PI * chi)) / norm
        })
        .collect())
}

/// Closed-form area `4πχ/ρ + (A₀ - 4πχ/ρ) e^{ρt}` (`A₀ - 4πχ t` at `ρ = 0`).
pub fn area_law(a0: f64, rho: f64, chi: f64, t: f64) -> f64 {
    if rho == 0.0 {
        a0 - 4.0 * PI * chi * t
    } else {
        let ainf = 4.0 * PI * chi / rho;
        ainf + (a0 - ainf) * (rho * t).exp()
    }
}

/// `∂_t R - Δ_g R - R (R - ρ)` at the middle snapshot for uniform spacing.
pub fn curvature_evolution_residual(
    r_prev: &ScalarField,
    r_now: &ScalarField,
    r_next: &ScalarField,
    metric: &ConformalMetric,
    rho: f64,
    dt: f64,
) -> Result<ScalarField> {
    curvature_evolution_residual_nonuniform(r_prev, r_now, r_next, metric, rho, dt, dt)
}

pub fn curvature_evolution_residual_nonuniform(
    r_prev: &ScalarField,
    r_now: &ScalarField,
    r_next: &ScalarField,
    metric: &ConformalMetric,
    rho: f64,
    dt_prev: f64,
    dt_next: f64,
) -> Result<ScalarField> {
    if !(r_prev.same_atlas(r_now) && r_now.same_atlas(r_next) && r_now.same_atlas(&metric.u)) {
        return Err(FlowError::Parameter("snapshots live on different grids".into()));
    }
    let (wp, wm, wn) = central_weights(dt_prev, dt_next);
    let lap = laplacian(r_now, metric);
    let mut out = r_now.clone();
    let combine = |o: &mut [f64], p: &[f64], m: &[f64], n: &[f64], l: &[f64]| {
        for i in 0..o.len() {
            let rt = wp * p[i] + wm * m[i] + wn * n[i];
            o[i] = rt - l[i] - m[i] * (m[i] - rho);
        }
    };
    combine(&mut out.core, &r_prev.core, &r_now.core, &r_next.core, &lap.core);
    for j in 0..out.cusps.len() {
        combine(&mut out.cusps[j], &r_prev.cusps[j], &r_now.cusps[j], &r_next.cusps[j], &lap.cusps[j]);
    }
    out.bump();
    Ok(out)
}

/// `∂_t h - (Δ_g h - 2|Z|² + (2R̄ - ρ) h)` at the middle snapshot.
#[allow(clippy::too_many_arguments)]
pub fn h_evolution_residual(
    h_prev: &ScalarField,
    h_now: &ScalarField,
    h_next: &ScalarField,
    z_now: &ScalarField,
    metric: &ConformalMetric,
    rbar: f64,
    rho: f64,
    dt_prev: f64,
    dt_next: f64,
) -> Result<ScalarField> {
    if !(h_prev.same_atlas(h_now) && h_now.same_atlas(h_next) && h_now.same_atlas(z_now)) {
        return Err(FlowError::Parameter("snapshots live on different grids".into()));
    }
    let (wp, wm, wn) = central_weights(dt_prev, dt_next);
    let lap = laplacian(h_now, metric);
    let c = 2.0 * rbar - rho;
    let mut out = h_now.clone();
    let combine = |o: &mut [f64], p: &[f64], m: &[f64], n: &[f64], l: &[f64], z: &[f64]| {
        for i in 0..o.len() {
            let ht = wp * p[i] + wm * m[i] + wn * n[i];
            o[i] = ht - (l[i] - 2.0 * z[i] + c * m[i]);
        }
    };
    combine(&mut out.core, &h_prev.core, &h_now.core, &h_next.core, &lap.core, &z_now.core);
    for j in 0..out.cusps.len() {
        combine(&mut out.cusps[j], &h_prev.cusps[j], &h_now.cusps[j], &h_next.cusps[j], &lap.cusps[j], &z_now.cusps[j]);
    }
    out.bump();
    Ok(out)
}

/// Interior sup norm used for residual channels: nodes two or more cells
/// away from any interpolation or end node.
pub fn residual_sup(f: &ScalarField) -> f64 {
    f.interior_values(2).into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub amplitude: f64,
    /// Positive means decay.
    pub rate: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Least-squares fit of `ln y = ln C - rate t` over samples with `t` in
/// `[t0, t1]`. A flat channel has `r² = 1` by convention.
pub fn fit_exponential_rate(t: &[f64], y: &[f64], window: (f64, f64)) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(tt, _)| **tt >= window.0 && **tt <= window.1)
        .map(|(a, b)| (*a, *b))
        .collect();
    if pts.len() < 2 {
        return Err(FlowError::Parameter("fewer than two samples in the fit window".into()));
    }
    if let Some((tt, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(FlowError::Parameter(format!("nonpositive value {v} at t = {tt}")));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let mut stt = 0.0;
    let mut stl = 0.0;
    let mut sll = 0.0;
    for (tt, v) in &pts {
        let (dt, dl) = (tt - mt, v.ln() - ml);
        stt += dt * dt;
        stl += dt * dl;
        sll += dl * dl;
    }
    if stt == 0.0 {
        return Err(FlowError::Parameter("fit window has zero time extent".into()));
    }
    let slope = stl / stt;
    let r2 = if sll <= 1e-30 * n { 1.0 } else { stl * stl / (stt * sll) };
    Ok(RateFit { amplitude: (ml - slope * mt).exp(), rate: -slope, r2, samples: pts.len() })
}

/// First time from which `sup(R) < 0` holds, the start of rate-fit windows.
pub fn transient_end(series: &[TimeSeriesRecord]) -> Option<f64> {
    series.iter().position(|r| r.sup_r < 0.0).map(|i| series[i].t)
}

/// One sampled time of the cusp perturbation `v = u - λ_j` on one end.
#[derive(Clone, Debug)]
pub struct EndSnapshot {
    pub t: f64,
    /// `(s, |v|)` pairs.
    pub values: Vec<(f64, f64)>,
}

impl EndSnapshot {
    /// `|u - limit|` at every node of `end` with `s >= s_lo + 1`, the range
    /// the decay norm looks at.
    pub fn capture(u: &ScalarField, end: usize, limit: f64, t: f64) -> Self {
        let ch = &u.atlas().cusps[end];
        let mut values = Vec::new();
        for i in 0..ch.n_s {
            let s = ch.s(i);
            if s >= ch.s_lo + 1.0 {
                values.extend(u.ring(end, i).iter().map(|v| (s, (v - limit).abs())));
            }
        }
        Self { t, values }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BarrierViolation {
    pub t: f64,
    pub s: f64,
    pub value: f64,
    pub barrier: f64,
}

/// Checks `|v| ≤ C e^{At} min{1, (s/s₀)^{-μ}}` over every sample; returns the
/// first violation in time order.
pub fn barrier_check(history: &[EndSnapshot], a: f64, c: f64, s0: f64, mu: f64) -> (bool, Option<BarrierViolation>) {
    for snap in history {
        let amp = c * (a * snap.t).exp();
        for &(s, v) in &snap.values {
            let barrier = amp * (s / s0).powf(-mu).min(1.0);
            if v.abs() > barrier {
                return (false, Some(BarrierViolation { t: snap.t, s, value: v.abs(), barrier }));
            }
        }
    }
    (true, None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub pass: bool,
    /// `max(0, -inf R)` over the series.
    pub c_lower: f64,
    /// `max (sup R - R̄) e^{|ρ| t}` over the first quarter of the series, doubled.
    pub c_upper: f64,
    /// Worst ratio of `sup R - R̄` to `c_upper e^{-|ρ|t}` over the whole series.
    pub worst_ratio: f64,
}

/// Two-sided curvature bounds `-C ≤ R ≤ C e^{-|ρ|t} + R̄`: the lower constant
/// is the observed infimum, the upper constant is fitted on the first
/// quarter of the series (times two) and must then hold everywhere.
pub fn bounds_check(series: &[TimeSeriesRecord], rho: f64) -> BoundsReport {
    let c_lower = series.iter().map(|r| (-r.inf_r).max(0.0)).fold(0.0, f64::max);
    let excess = |r: &TimeSeriesRecord| (r.sup_r - r.rbar) * (rho.abs() * r.t).exp();
    let head = series.len().div_ceil(4).max(1).min(series.len());
    let c_upper = 2.0 * series[..head].iter().map(excess).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    let mut pass = c_lower.is_finite();
    for r in series {
        let e = excess(r);
        if e > c_upper {
            pass = false;
        }
        if c_upper > 0.0 {
            worst = worst.max(e / c_upper);
        } else if e > 0.0 {
            worst = f64::INFINITY;
        }
    }
    BoundsReport { pass, c_lower, c_upper, worst_ratio: worst }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64, area: f64, rho: f64) -> TimeSeriesRecord {
        TimeSeriesRecord {
            t,
            area,
            rbar: rho,
            rho,
            sup_r_minus_rho: 0.0,
            inf_r: rho,
            sup_r: rho,
            sup_h: 0.0,
            sup_grad_f: 0.0,
            decay_norm: vec![0.0],
            end_curvature: vec![rho],
            lambda: vec![1.0],
            gauss_bonnet: 0.0,
            res_area: None,
            res_curvature: None,
            res_trace: 0.0,
            res_h: None,
            shi: 0.0,
            dt: 0.1,
            newton_iters: 1,
        }
    }

    #[test]
    fn pure_exponential_rate_is_recovered() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let fit = fit_exponential_rate(&t, &y, (0.0, 10.0)).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-6);
        assert!((fit.amplitude - 3.0).abs() < 1e-6);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_has_zero_rate() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let fit = fit_exponential_rate(&t, &[0.7; 10], (0.0, 9.0)).unwrap();
        assert!(fit.rate.abs() < 1e-14);
    }

    #[test]
    fn fit_rejects_nonpositive_values() {
        assert!(fit_exponential_rate(&[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0], (0.0, 2.0)).is_err());
    }

    #[test]
    fn area_residual_of_closed_form_is_second_order() {
        let chi = -1.0;
        let rho = -1.0;
        let mut worst = Vec::new();
        for dt in [0.1, 0.05] {
            let series: Vec<_> = (0..=(2.0 / dt) as usize)
                .map(|i| {
                    let t = i as f64 * dt;
                    record(t, area_law(20.0, rho, chi, t), rho)
                })
                .collect();
            let res = area_ode_residual(&series, chi).unwrap();
            worst.push(res[1..res.len() - 1].iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        assert!(worst[0] < 1e-2);
        assert!(worst[0] / worst[1] > 3.5);
    }

    #[test]
    fn area_residual_vanishes_at_the_fixed_point() {
        let rho = -2.0;
        let a = 4.0 * PI * -1.0 / rho;
        let series: Vec<_> = (0..5).map(|i| record(i as f64, a, rho)).collect();
        for r in area_ode_residual(&series, -1.0).unwrap() {
            assert!(r.abs() < 1e-15);
        }
        assert!(area_ode_residual(&series[..2], -1.0).is_err());
    }

    #[test]
    fn nonuniform_derivative_is_exact_for_quadratics() {
        let t = [0.0, 0.1, 0.35, 0.5, 0.9];
        let y: Vec<f64> = t.iter().map(|t| 1.0 + 2.0 * t - 3.0 * t * t).collect();
        let d = differentiate(&t, &y).unwrap();
        for (tt, dd) in t.iter().zip(d) {
            assert!((dd - (2.0 - 6.0 * tt)).abs() < 1e-12);
        }
    }

    #[test]
    fn barrier_cases() {
        let zero = vec![EndSnapshot { t: 0.0, values: vec![(1.0, 0.0), (5.0, 0.0)] }];
        assert!(barrier_check(&zero, 1.0, 1e-9, 1.0, 2.0).0);
        let snaps: Vec<_> = [0.0, 0.1]
            .iter()
            .map(|&t| EndSnapshot { t, values: (1..40).map(|i| (i as f64 * 0.2, (i as f64 * 0.2).powf(-2.0).min(1.0))).collect() })
            .collect();
        assert!(barrier_check(&snaps, 1.0, 1.1, 1.0, 2.0).0);
        let (ok, v) = barrier_check(&snaps, 1.0, 0.5, 1.0, 2.0);
        assert!(!ok);
        assert_eq!(v.unwrap().t, 0.0);
    }

    #[test]
    fn bounds_flag_growth() {
        let rho = -1.0;
        let decaying: Vec<_> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.5;
                let mut r = record(t, 1.0, rho);
                r.sup_r = rho + 0.5 * (-t).exp();
                r
            })
            .collect();
        assert!(bounds_check(&decaying, rho).pass);
        let growing: Vec<_> = decaying
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.sup_r = rho + 0.5 * (0.3 * r.t).exp();
                r
            })
            .collect();
        assert!(!bounds_check(&growing, rho).pass);
        let stationary: Vec<_> = (0..10).map(|i| record(i as f64, 1.0, rho)).collect();
        let rep = bounds_check(&stationary, rho);
        assert!(rep.pass && rep.c_upper == 0.0);
    }
}
