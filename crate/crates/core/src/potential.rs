//! The potential `Δf = R - R̄` with cusp asymptotics `f ≈ c_j s + β_j` on
//! each end, and Hamilton's quantities `h = Δf + |∇f|²` and `|Z|²`.

use crate::error::{FlowError, Result};
use crate::field::{interior_mask, ScalarField};
use crate::geometry::{CuspChart, NodeClass};
use crate::linear::{CompositeSystem, EndRow, SolverKind};
use crate::metric::ConformalMetric;
use crate::operators::{
    dot, fill_interpolation_nodes, gradient_norm_sq, integrate, laplacian, quadrature_weights, scalar_curvature,
    suppress_theta_noise, total_area, THETA_NOISE_FLOOR,
};

#[derive(Clone, Debug)]
pub struct PotentialSolution {
    pub f: ScalarField,
    /// Zero-mode slope `∂_s f` imposed at `s_hi` per end.
    pub c: Vec<f64>,
    /// `f̄(s_hi) - c_j s_hi` per end.
    pub beta: Vec<f64>,
    /// `|∫ f dA|`.
    pub mean_residual: f64,
    /// `sup |∇f|_g`.
    pub grad_bound: f64,
    /// `∫ q dA / A` removed from the right-hand side before solving.
    pub projected_mass: f64,
    /// Lagrange multiplier of the mean-zero row; the constant by which the
    /// discrete problem was incompatible after projection.
    pub multiplier: f64,
    /// `sup |Δf - q_projected - multiplier|` at interior nodes.
    pub residual: f64,
}

/// End limit of the total factor: ring mean of `u` on the outermost ring.
pub fn end_factor(metric: &ConformalMetric, end: usize) -> f64 {
    let n = metric.atlas().cusps[end].n_s;
    metric.u.ring_mean(end, n - 1)
}

/// Solves `Δ_g f = R - R̄` with `∂_s f̄(s_hi) = c_j = -u_j^∞ (R_j^∞ - R̄)`,
/// `R_j^∞ = -2 / u_j^∞`, nonzero modes vanishing at `s_hi`, and `∫ f dA = 0`.
pub fn solve_potential(metric: &ConformalMetric) -> Result<PotentialSolution> {
    let r = scalar_curvature(metric);
    let area = total_area(metric);
    let rbar = integrate(&r, metric) / area;
    let q = r.map(|v| v - rbar);
    let slopes: Vec<f64> = (0..metric.atlas().ends())
        .map(|j| {
            let uinf = end_factor(metric, j);
            -uinf * (-2.0 / uinf - rbar)
        })
        .collect();
    solve_poisson(metric, &q, &slopes)
}

/// Solves `Δ_g f = q` with the given zero-mode end slopes, nonzero modes
/// vanishing at `s_hi`, after projecting `q` to discrete mean zero.
pub fn solve_poisson(metric: &ConformalMetric, q: &ScalarField, slopes: &[f64]) -> Result<PotentialSolution> {
    let atlas = metric.atlas().clone();
    if slopes.len() != atlas.ends() {
        return Err(FlowError::Parameter("one slope per end is required".into()));
    }
    let area = total_area(metric);
    let projected_mass = integrate(q, metric) / area;
    let qp = q.map(|v| v - projected_mass);

    let zero = ScalarField::zeros(&atlas);
    let rows = vec![EndRow::ZeroModeSlope; atlas.ends()];
    let sys = CompositeSystem::assemble(metric, &zero, &rows, true);
    let end: Vec<Vec<f64>> = atlas
        .cusps
        .iter()
        .zip(slopes)
        .map(|(ch, &c)| {
            let mut v = vec![0.0; ch.n_theta()];
            v[0] = c;
            v
        })
        .collect();
    let b = qp.map(|v| -v);
    let rhs = sys.rhs(&b, &end, 0.0);
    let fac = sys.factorize(SolverKind::Direct)?;
    let (x, _) = fac.solve(&rhs)?;
    let (mut f, mult) = sys.to_field(&x);
    suppress_theta_noise(&mut f, 0.0);
    // rows read -Δf + λ = -q, so Δf = q + λ
    let multiplier = mult.unwrap_or(0.0);

    let lap = laplacian(&f, metric);
    let mask = interior_mask(&atlas, 0);
    let mut residual: f64 = 0.0;
    for k in 0..atlas.core.len() {
        if mask.core[k] {
            residual = residual.max((lap.core[k] - qp.core[k] - multiplier).abs());
        }
    }
    for (j, ch) in atlas.cusps.iter().enumerate() {
        let nt = ch.n_theta();
        for i in mask.cusp_rings[j].clone() {
            for m in 0..nt {
                let idx = i * nt + m;
                residual = residual.max((lap.cusps[j][idx] - qp.cusps[j][idx] - multiplier).abs());
            }
        }
    }

    let beta = atlas
        .cusps
        .iter()
        .enumerate()
        .map(|(j, ch)| f.ring_mean(j, ch.n_s - 1) - slopes[j] * ch.s_hi)
        .collect();
    let mean_residual = integrate(&f, metric).abs();
    let g = gradient_norm_sq(&f, metric);
    let grad_bound = active_max(&g).sqrt();
    Ok(PotentialSolution {
        f,
        c: slopes.to_vec(),
        beta,
        mean_residual,
        grad_bound,
        projected_mass,
        multiplier,
        residual,
    })
}

fn active_max(f: &ScalarField) -> f64 {
    let atlas = f.atlas();
    let mut m: f64 = 0.0;
    for (k, v) in f.core.iter().enumerate() {
        if atlas.core.class[k] == NodeClass::Interior {
            m = m.max(*v);
        }
    }
    for (j, ch) in atlas.cusps.iter().enumerate() {
        let nt = ch.n_theta();
        for v in &f.cusps[j][nt..] {
            m = m.max(*v);
        }
    }
    m
}

/// Discrete divergence theorem for a solved potential: `∫ Δf dA` over the
/// truncated surface against the zero-mode flux `Σ_j 2π e^{-s_hi} c_j`
/// leaving through the cut, relative to `∫ |Δf| dA`.
pub fn flux_balance(sol: &PotentialSolution, metric: &ConformalMetric) -> f64 {
    let atlas = metric.atlas();
    let lap = laplacian(&sol.f, metric);
    let mut w = quadrature_weights(metric);
    let mut flux = 0.0;
    for (j, ch) in atlas.cusps.iter().enumerate() {
        let nt = ch.n_theta();
        let tail = (-ch.s_hi).exp() * 2.0 * std::f64::consts::PI / nt as f64;
        let last = (ch.n_s - 1) * nt;
        for m in 0..nt {
            w.cusps[j][last + m] -= tail * metric.u.cusps[j][last + m];
        }
        flux += 2.0 * std::f64::consts::PI * (-ch.s_hi).exp() * sol.c[j];
    }
    let total = dot(&w, &lap);
    let scale = dot(&w, &lap.map(f64::abs));
    (total - flux).abs() / scale.max(f64::MIN_POSITIVE)
}

/// Zero-mode problem `(∂_s² - ∂_s) w = u q0` on one end, integrated inward
/// from `s_hi` as a first-order system for `p = w'` with `p(s_hi) = c`,
/// `c = -u(s_hi) q0(s_hi)`, normalized so that `w(s_hi) = c s_hi`.
pub fn zero_mode_solve(chart: &CuspChart, q0: &[f64], u_tot: &[f64]) -> Result<Vec<f64>> {
    let n = chart.n_s;
    if q0.len() != n || u_tot.len() != n {
        return Err(FlowError::Parameter("zero-mode data must be sampled on every ring".into()));
    }
    let d = q0[n - 1];
    let dev = |i: usize| (q0[i] - d).abs();
    let near: f64 = (0..n).map(dev).fold(0.0, f64::max);
    let far: f64 = (0..n).filter(|&i| chart.s(i) >= 0.5 * (chart.s_lo + chart.s_hi)).map(dev).fold(0.0, f64::max);
    if far > 0.25 * near + 1e-12 {
        return Err(FlowError::Parameter("zero-mode source does not settle to a constant".into()));
    }
    let h = chart.h_s;
    let g: Vec<f64> = (0..n).map(|i| u_tot[i] * q0[i]).collect();
    let c = -g[n - 1];
    // p(s) = e^{s - s_hi} c - e^{s} ∫_s^{s_hi} e^{-σ} g dσ, with g linear per cell
    let mut p = vec![0.0; n];
    p[n - 1] = c;
    let mut acc = 0.0;
    let em = (-h).exp_m1();
    for i in (0..n - 1).rev() {
        let a = (-chart.s(i)).exp();
        // ∫ over [s_i, s_i + h] of e^{-σ}(g_i (1 - t/h) + g_{i+1} t/h)
        let w_left = a * (h + em) / h;
        let w_right = a * (-em - h * (-h).exp()) / h;
        acc += g[i] * w_left + g[i + 1] * w_right;
        p[i] = (chart.s(i) - chart.s_hi).exp() * c - chart.s(i).exp() * acc;
    }
    let mut w = vec![0.0; n];
    w[n - 1] = c * chart.s_hi;
    for i in (0..n - 1).rev() {
        w[i] = w[i + 1] - 0.5 * h * (p[i] + p[i + 1]);
    }
    Ok(w)
}

/// `sup_s e^{s} max_{k≠0} |f̂_k(s)|` on one end, `|f̂_k|` the amplitude of the
/// `cos kθ, sin kθ` pair.
pub fn nonzero_mode_decay_check(f: &ScalarField, end: usize) -> Result<f64> {
    let ch = f.atlas().cusps.get(end).ok_or_else(|| FlowError::Parameter(format!("no end {end}")))?;
    let nt = ch.n_theta();
    let mut modal = vec![0.0; nt];
    let mut out: f64 = 0.0;
    for i in 0..ch.n_s {
        ch.fourier.analyze(f.ring(end, i), &mut modal);
        let mut amp: f64 = modal[nt - 1].abs();
        for k in 1..nt / 2 {
            amp = amp.max(modal[2 * k - 1].hypot(modal[2 * k]));
        }
        out = out.max(ch.s(i).exp() * amp);
    }
    Ok(out)
}

/// `h = Δf + |∇f|²`.
pub fn hamilton_h(f: &ScalarField, metric: &ConformalMetric) -> ScalarField {
    let l = laplacian(f, metric);
    let g = gradient_norm_sq(f, metric);
    l.zip_map(&g, |a, b| a + b)
}

/// `|∇²f - ½ Δf g|²_g`. Core: flat coordinates with `g = W |dx|²`. Cusp:
/// cylinder coordinates `τ = e^s` with `g = u τ^{-2}(dτ² + dθ²)`.
pub fn traceless_hessian_normsq(f: &ScalarField, metric: &ConformalMetric) -> ScalarField {
    let atlas = metric.atlas().clone();
    let mut out = ScalarField::zeros(&atlas);
    let core = &atlas.core;
    let n = core.n;
    let h = core.h;
    let psi: Vec<f64> = (0..core.len())
        .map(|k| if core.class[k] == NodeClass::Inactive { 0.0 } else { 0.5 * metric.core_factor(k).ln() })
        .collect();
    for k in 0..core.len() {
        if core.class[k] != NodeClass::Interior {
            continue;
        }
        let (i, j) = (k / n, k % n);
        let at = |di: isize, dj: isize| {
            let ii = (i as isize + di).rem_euclid(n as isize) as usize;
            let jj = (j as isize + dj).rem_euclid(n as isize) as usize;
            ii * n + jj
        };
        let [xp, xm, yp, ym] = core.neighbors(k);
        let fx = (f.core[xp] - f.core[xm]) / (2.0 * h);
        let fy = (f.core[yp] - f.core[ym]) / (2.0 * h);
        let fxx = (f.core[xp] - 2.0 * f.core[k] + f.core[xm]) / (h * h);
        let fyy = (f.core[yp] - 2.0 * f.core[k] + f.core[ym]) / (h * h);
        let fxy = (f.core[at(1, 1)] - f.core[at(1, -1)] - f.core[at(-1, 1)] + f.core[at(-1, -1)]) / (4.0 * h * h);
        let px = (psi[xp] - psi[xm]) / (2.0 * h);
        let py = (psi[yp] - psi[ym]) / (2.0 * h);
        let a = 0.5 * (fxx - fyy) - (px * fx - py * fy);
        let b = fxy - (px * fy + py * fx);
        let w = metric.core_factor(k);
        out.core[k] = 2.0 * (a * a + b * b) / (w * w);
    }

    for (end, ch) in atlas.cusps.iter().enumerate() {
        let nt = ch.n_theta();
        let hs = ch.h_s;
        let data = &f.cusps[end];
        let lu: Vec<f64> = metric.u.cusps[end].iter().map(|v| v.ln()).collect();
        let mut ft = vec![0.0; nt];
        let mut ftt = vec![0.0; nt];
        let mut lt = vec![0.0; nt];
        let mut fst = vec![0.0; nt];
        let mut dp = vec![0.0; nt];
        let mut dev = vec![0.0; nt];
        for i in 1..ch.n_s - 1 {
            let s = ch.s(i);
            let es = s.exp();
            let ring = &data[i * nt..(i + 1) * nt];
            let mean = ring.iter().sum::<f64>() / nt as f64;
            for m in 0..nt {
                dev[m] = ring[m] - mean;
            }
            ch.fourier.d1(&dev, &mut ft);
            let scale = ring.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            ch.fourier.d2_filtered(&dev, &mut ftt, THETA_NOISE_FLOOR * scale);
            ch.fourier.d1(&lu[i * nt..(i + 1) * nt], &mut lt);
            for m in 0..nt {
                dp[m] = (data[(i + 1) * nt + m] - data[(i - 1) * nt + m]) / (2.0 * hs);
            }
            ch.fourier.d1(&dp, &mut fst);
            for m in 0..nt {
                let idx = i * nt + m;
                let fs = dp[m];
                let fss = (data[idx + nt] - 2.0 * data[idx] + data[idx - nt]) / (hs * hs);
                let ls = (lu[idx + nt] - lu[idx - nt]) / (2.0 * hs);
                let u = metric.u.cusps[end][idx];
                // e^{2s} a and e^{2s} b of the flat-gauge formulas
                let a2 = 0.5 * (fss - fs - es * es * ftt[m]) - (0.5 * ls - 1.0) * fs + 0.5 * es * es * lt[m] * ft[m];
                let b2 = es * (fst[m] - (0.5 * ls - 1.0) * ft[m] - 0.5 * lt[m] * fs);
                out.cusps[end][idx] = 2.0 * (a2 * a2 + b2 * b2) / (u * u);
            }
        }
        let n = ch.n_s;
        for m in 0..nt {
            out.cusps[end][(n - 1) * nt + m] = out.cusps[end][(n - 2) * nt + m];
        }
    }
    fill_interpolation_nodes(&mut out);
    out
}
