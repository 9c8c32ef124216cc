//! Normalized Ricci flow `∂_t g = (ρ - R) g` in log-factor form
//! `∂_t φ = ρ - R(φ)`, `u = e^φ` relative to the background, integrated by
//! backward Euler with Newton iterations and step-doubling control.
//!
//! The end limits `λ_j` follow `dλ/dt = ρλ + 2`, the asymptotic constant
//! part of the flow on an end whose background curvature is `-2`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    central_weights, curvature_evolution_residual_nonuniform, h_evolution_residual, residual_sup,
    TimeSeriesRecord,
};
use crate::error::{FlowError, Result};
use crate::field::ScalarField;
use crate::linear::{CompositeSystem, EndRow, Factorization, SolverKind};
use crate::metric::{BackgroundMetric, ConformalMetric};
use crate::operators::{
    decay_norm_from, gradient_norm_sq, integrate, laplacian, scalar_curvature, sup_over, suppress_theta_noise,
    total_area,
};
use crate::potential::{hamilton_h, solve_potential, traceless_hessian_normsq};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// `ρ = 4πχ / A₀`, which keeps the area fixed.
    AreaPreserving,
    /// `ρ` taken from the config; must be negative.
    Explicit,
    /// `ρ = 0`, short-time runs only.
    Unnormalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndBc {
    /// Zero mode pinned to the end-limit ODE, other modes zero.
    DirichletOde,
    /// Homogeneous Neumann on every mode.
    NeumannZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Direct,
    Schwarz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub rho_mode: RhoMode,
    /// Used with [`RhoMode::Explicit`].
    pub rho: Option<f64>,
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Step-doubling error bound on `sup |Δφ|`.
    pub tol: f64,
    /// `false` gives plain backward Euler at `dt_init`.
    pub adaptive: bool,
    /// Richardson-extrapolate accepted doubled steps.
    pub extrapolate: bool,
    pub t_final: f64,
    pub end_bc: EndBc,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Emit a record every `cadence` accepted steps.
    pub cadence: usize,
    /// Stop once `sup |R - ρ|` falls below this; 0 disables.
    pub stop_tol: f64,
    pub solver: SolverChoice,
    pub schwarz_tol: f64,
    pub schwarz_max_sweeps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            rho_mode: RhoMode::Explicit,
            rho: Some(-1.0),
            dt_init: 0.01,
            dt_max: 0.25,
            dt_min: 1e-8,
            tol: 1e-4,
            adaptive: true,
            extrapolate: true,
            t_final: 10.0,
            end_bc: EndBc::DirichletOde,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            cadence: 1,
            stop_tol: 1e-6,
            solver: SolverChoice::Schwarz,
            schwarz_tol: 1e-10,
            schwarz_max_sweeps: 50,
        }
    }
}

/// Longest horizon accepted for unnormalized runs.
pub const UNNORMALIZED_MAX_T: f64 = 1.0;

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(FlowError::Parameter(format!("{name} must be positive, got {v}")))
            }
        };
        pos("dt_init", self.dt_init)?;
        pos("dt_max", self.dt_max)?;
        pos("dt_min", self.dt_min)?;
        pos("tol", self.tol)?;
        pos("newton_tol", self.newton_tol)?;
        pos("schwarz_tol", self.schwarz_tol)?;
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(FlowError::Parameter(format!("t_final must be finite and nonnegative, got {}", self.t_final)));
        }
        if self.dt_min > self.dt_init || self.dt_init > self.dt_max {
            return Err(FlowError::Parameter("need dt_min <= dt_init <= dt_max".into()));
        }
        if self.newton_max_iter == 0 || self.cadence == 0 || self.schwarz_max_sweeps == 0 {
            return Err(FlowError::Parameter("iteration caps and cadence must be at least 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(FlowError::Parameter("stop_tol must be nonnegative".into()));
        }
        match self.rho_mode {
            RhoMode::Explicit => match self.rho {
                Some(r) if r < 0.0 && r.is_finite() => {}
                other => {
                    return Err(FlowError::Parameter(format!("explicit rho must be negative, got {other:?}")));
                }
            },
            RhoMode::Unnormalized if self.t_final > UNNORMALIZED_MAX_T => {
                return Err(FlowError::Parameter(format!(
                    "unnormalized runs are short-time only (t_final <= {UNNORMALIZED_MAX_T})"
                )));
            }
            _ => {}
        }
        Ok(())
    }

    fn solver_kind(&self) -> SolverKind {
        match self.solver {
            SolverChoice::Direct => SolverKind::Direct,
            SolverChoice::Schwarz => SolverKind::Schwarz { tol: self.schwarz_tol, max_sweeps: self.schwarz_max_sweeps },
        }
    }

    /// The normalization constant this config selects for `metric`.
    pub fn resolve_rho(&self, metric: &ConformalMetric) -> f64 {
        match self.rho_mode {
            RhoMode::AreaPreserving => rho_area_preserving(metric),
            RhoMode::Explicit => self.rho.unwrap_or(-1.0),
            RhoMode::Unnormalized => 0.0,
        }
    }
}

/// `4πχ / A`.
pub fn rho_area_preserving(metric: &ConformalMetric) -> f64 {
    4.0 * PI * metric.atlas().spec.euler_characteristic() / total_area(metric)
}

/// Exact end limit of the factor: `dU/dt = ρU + 2`, `U(0) = 2/σ`.
pub fn end_limit(sigma: f64, rho: f64, t: f64) -> f64 {
    let x = rho * t;
    // 2(e^{ρt} - 1)/ρ written so that ρ → 0 is continuous
    let growth = if x == 0.0 { 2.0 * t } else { 2.0 * t * x.exp_m1() / x };
    (2.0 / sigma) * x.exp() + growth
}

/// One backward-Euler step of `dU/dt = ρU + 2`.
pub fn end_limit_step(u: f64, rho: f64, dt: f64) -> f64 {
    (u + 2.0 * dt) / (1.0 - rho * dt)
}

/// `t ↦ (τ, e^{ρτ})` with `τ = -log(1 - ρt)/ρ`; maps an unnormalized
/// trajectory to the normalized one by `g̃(τ) = e^{ρτ} g(t)`.
pub fn normalize_transform(t: f64, rho: f64) -> Result<(f64, f64)> {
    let arg = -rho * t;
    if !(1.0 + arg > 0.0) {
        return Err(FlowError::Domain(format!("1 - ρt = {} is not positive", 1.0 + arg)));
    }
    if rho == 0.0 {
        return Ok((t, 1.0));
    }
    let tau = -arg.ln_1p() / rho;
    Ok((tau, 1.0 / (1.0 + arg)))
}

/// Inverse of [`normalize_transform`]: `t = (1 - e^{-ρτ})/ρ`.
pub fn denormalize_time(tau: f64, rho: f64) -> f64 {
    if rho == 0.0 {
        tau
    } else {
        -(-rho * tau).exp_m1() / rho
    }
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    /// `log u`, `u` relative to the background.
    pub phi: ScalarField,
    pub lambda: Vec<f64>,
    /// Co-evolved potential.
    pub f: ScalarField,
    pub rho: f64,
    pub area: f64,
    pub curvature: ScalarField,
    pub rbar: f64,
    /// Step size to try next.
    pub dt: f64,
    background: Arc<BackgroundMetric>,
}

impl FlowState {
    /// Initializes `φ = log u₀`, `λ` from the metric's end limits and `f`
    /// from the potential solver.
    pub fn new(initial: &ConformalMetric, config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        let rho = config.resolve_rho(initial);
        let f = solve_potential(initial)?.f;
        Self::with_potential(initial, rho, f, config.dt_init)
    }

    pub fn with_potential(initial: &ConformalMetric, rho: f64, f: ScalarField, dt: f64) -> Result<Self> {
        let mut phi = initial.log_u();
        suppress_theta_noise(&mut phi, 1.0);
        let mut state = Self {
            t: 0.0,
            phi,
            lambda: initial.end_limits.clone(),
            f,
            rho,
            area: 0.0,
            curvature: ScalarField::zeros(initial.atlas()),
            rbar: 0.0,
            dt,
            background: initial.background.clone(),
        };
        state.refresh();
        Ok(state)
    }

    pub fn background(&self) -> &Arc<BackgroundMetric> {
        &self.background
    }

    pub fn metric(&self) -> ConformalMetric {
        metric_of(&self.background, &self.phi, &self.lambda)
    }

    pub fn u(&self) -> ScalarField {
        self.phi.map(f64::exp)
    }

    /// `sup |R - ρ|` over active nodes.
    pub fn curvature_defect(&self) -> f64 {
        let rho = self.rho;
        sup_over(self.phi.atlas(), &self.curvature, |r| (r - rho).abs())
    }

    fn refresh(&mut self) {
        let m = self.metric();
        self.curvature = scalar_curvature(&m);
        self.area = total_area(&m);
        self.rbar = integrate(&self.curvature, &m) / self.area;
    }
}

fn metric_of(bg: &Arc<BackgroundMetric>, phi: &ScalarField, lambda: &[f64]) -> ConformalMetric {
    ConformalMetric { background: bg.clone(), u: phi.map(f64::exp), end_limits: lambda.to_vec() }
}

fn end_modes(f: &ScalarField, end: usize, ring: usize) -> Vec<f64> {
    let ch = &f.atlas().cusps[end];
    let mut m = vec![0.0; ch.n_theta()];
    ch.fourier.analyze(f.ring(end, ring), &mut m);
    m
}

/// Modal data driving the end rows of a Newton correction toward the
/// boundary condition.
fn end_correction(phi: &ScalarField, lambda: &[f64], bc: EndBc) -> Vec<Vec<f64>> {
    let atlas = phi.atlas();
    atlas
        .cusps
        .iter()
        .enumerate()
        .map(|(j, ch)| {
            let n = ch.n_s;
            let last = end_modes(phi, j, n - 1);
            match bc {
                EndBc::DirichletOde => {
                    let mut d: Vec<f64> = last.iter().map(|v| -v).collect();
                    d[0] += lambda[j].ln();
                    d
                }
                EndBc::NeumannZero => {
                    let a = end_modes(phi, j, n - 2);
                    let b = end_modes(phi, j, n - 3);
                    (0..last.len()).map(|k| -(1.5 * last[k] - 2.0 * a[k] + 0.5 * b[k]) / ch.h_s).collect()
                }
            }
        })
        .collect()
}

fn end_rows(bc: EndBc, ends: usize) -> Vec<EndRow> {
    vec![
        match bc {
            EndBc::DirichletOde => EndRow::Dirichlet,
            EndBc::NeumannZero => EndRow::Neumann,
        };
        ends
    ]
}

/// Max of `|a - b|` over active nodes.
fn active_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    let d = a.zip_map(b, |x, y| x - y);
    sup_over(a.atlas(), &d, f64::abs)
}

/// A factorized Jacobian, reused while it still contracts.
type Chord = (CompositeSystem, Factorization);

/// Result of one implicit stage.
struct Stage {
    phi: ScalarField,
    lambda: Vec<f64>,
    iters: usize,
    chord: Option<Chord>,
}

/// Newton iteration for `G(φ) = 0` with Jacobian `a - Δ_g`; `residual`
/// returns `(a, -G)` at the current iterate. The factorization is reused
/// while the corrections contract quickly.
fn newton(
    bg: &Arc<BackgroundMetric>,
    mut phi: ScalarField,
    lambda: &[f64],
    bc: EndBc,
    config: &FlowConfig,
    warm: Option<Chord>,
    residual: impl Fn(&ConformalMetric, &ScalarField) -> (ScalarField, ScalarField),
) -> Result<(ScalarField, usize, Chord)> {
    let rows = end_rows(bc, lambda.len());
    let mut fac: Option<Chord> = warm;
    let mut last = f64::INFINITY;
    for it in 1..=config.newton_max_iter {
        let metric = metric_of(bg, &phi, lambda);
        let (a, b) = residual(&metric, &phi);
        let refresh = fac.is_none();
        if refresh {
            let sys = CompositeSystem::assemble(&metric, &a, &rows, false);
            let f = sys.factorize(config.solver_kind())?;
            fac = Some((sys, f));
        }
        let (sys, f) = fac.as_ref().expect("factorization present");
        let rhs = sys.rhs(&b, &end_correction(&phi, lambda, bc), 0.0);
        let (x, _) = f.solve(&rhs)?;
        let (delta, _) = sys.to_field(&x);
        let size = sup_over(phi.atlas(), &delta, f64::abs);
        if !size.is_finite() {
            return Err(FlowError::Convergence("Newton correction is not finite".into()));
        }
        phi = phi.zip_map(&delta, |p, d| p + d);
        suppress_theta_noise(&mut phi, 1.0);
        if size <= config.newton_tol {
            return Ok((phi, it, fac.expect("factorization present")));
        }
        if size > 0.25 * last {
            fac = None;
        }
        if size > 1e3 * last.min(1.0) && it > 2 {
            return Err(FlowError::Convergence(format!("Newton diverging, correction {size:.3e}")));
        }
        last = size;
    }
    Err(FlowError::Convergence(format!(
        "Newton did not reach {:.1e} in {} iterations (last correction {last:.3e})",
        config.newton_tol, config.newton_max_iter
    )))
}

/// One backward-Euler stage from `(φ₀, λ₀)` over `dt`.
fn be_stage(
    bg: &Arc<BackgroundMetric>,
    phi0: &ScalarField,
    lam0: &[f64],
    rho: f64,
    dt: f64,
    config: &FlowConfig,
    warm: Option<Chord>,
) -> Result<Stage> {
    let lam_ode: Vec<f64> = lam0.iter().map(|&l| end_limit_step(l, rho, dt)).collect();
    let (phi, iters, chord) = newton(bg, phi0.clone(), &lam_ode, config.end_bc, config, warm, |m, phi| {
        let r = scalar_curvature(m);
        let a = r.map(|r| 1.0 / dt - r);
        let mut b = phi.zip_map(phi0, |p, q| -(p - q) / dt);
        b = b.zip_map(&r, |g, r| g + rho - r);
        (a, b)
    })?;
    let lambda = match config.end_bc {
        EndBc::DirichletOde => lam_ode,
        EndBc::NeumannZero => {
            (0..lam0.len()).map(|j| phi.ring_mean(j, phi.atlas().cusps[j].n_s - 1).exp()).collect()
        }
    };
    Ok(Stage { phi, lambda, iters, chord: Some(chord) })
}

/// Advances `f` by one backward-Euler step of `∂_t f = Δ_g f + R̄ f` on the
/// metric of `state`, with the end slope `c_j = 2 + λ_j R̄`.
pub fn co_evolve_potential(state: &FlowState, f_prev: &ScalarField, dt: f64, config: &FlowConfig) -> Result<ScalarField> {
    let metric = state.metric();
    let atlas = metric.atlas().clone();
    let a = ScalarField::constant(&atlas, 1.0 / dt - state.rbar);
    let rows = vec![EndRow::ZeroModeSlope; atlas.ends()];
    let sys = CompositeSystem::assemble(&metric, &a, &rows, false);
    let end: Vec<Vec<f64>> = atlas
        .cusps
        .iter()
        .enumerate()
        .map(|(j, ch)| {
            let mut v = vec![0.0; ch.n_theta()];
            v[0] = 2.0 + state.lambda[j] * state.rbar;
            v
        })
        .collect();
    let b = f_prev.map(|v| v / dt);
    let rhs = sys.rhs(&b, &end, 0.0);
    let (x, _) = sys.factorize(config.solver_kind())?.solve(&rhs)?;
    let mut f = sys.to_field(&x).0;
    suppress_theta_noise(&mut f, 0.0);
    Ok(f)
}

/// Outcome of one accepted step.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub dt: f64,
    pub newton_iters: usize,
    pub rejected: usize,
    pub error_estimate: f64,
}

/// Advances the state by one accepted step, never past `t_final`.
pub fn step(state: &mut FlowState, config: &FlowConfig) -> Result<StepInfo> {
    let bg = state.background.clone();
    let mut dt = state.dt.min(config.dt_max).min(config.t_final - state.t);
    if !(dt > 0.0) {
        return Err(FlowError::Parameter("no time left before t_final".into()));
    }
    let mut rejected = 0;
    loop {
        if dt < config.dt_min {
            return Err(FlowError::Convergence(format!("step size {dt:.3e} fell below dt_min at t = {}", state.t)));
        }
        let attempt = if config.adaptive {
            doubled_step(&bg, state, dt, config)
        } else {
            be_stage(&bg, &state.phi, &state.lambda, state.rho, dt, config, None).map(|s| (s, 0.0, state.dt))
        };
        match attempt {
            Ok((stage, err, next_dt)) => {
                if config.adaptive && err > config.tol {
                    rejected += 1;
                    dt = next_dt.min(0.5 * dt);
                    continue;
                }
                let f_prev = std::mem::replace(&mut state.f, ScalarField::zeros(state.phi.atlas()));
                let remaining = config.t_final - state.t - dt;
                state.t = if remaining.abs() <= 1e-12 * config.t_final.max(1.0) { config.t_final } else { state.t + dt };
                state.phi = stage.phi;
                state.lambda = stage.lambda;
                state.refresh();
                state.f = co_evolve_potential(state, &f_prev, dt, config)?;
                state.dt = if config.adaptive { next_dt } else { config.dt_init };
                return Ok(StepInfo { dt, newton_iters: stage.iters, rejected, error_estimate: err });
            }
            Err(FlowError::Convergence(_)) | Err(FlowError::Solver(_)) if config.adaptive || dt * 0.5 >= config.dt_min => {
                rejected += 1;
                dt *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
}

fn doubled_step(bg: &Arc<BackgroundMetric>, state: &FlowState, dt: f64, config: &FlowConfig) -> Result<(Stage, f64, f64)> {
    let full = be_stage(bg, &state.phi, &state.lambda, state.rho, dt, config, None)?;
    let mut h1 = be_stage(bg, &state.phi, &state.lambda, state.rho, 0.5 * dt, config, None)?;
    // same step size: the first half's Jacobian is a good chord for the second
    let h2 = be_stage(bg, &h1.phi, &h1.lambda, state.rho, 0.5 * dt, config, h1.chord.take())?;
    let err = active_diff(&h2.phi, &full.phi);
    let factor = if err > 0.0 { (0.9 * (config.tol / err).sqrt()).clamp(0.2, 2.0) } else { 2.0 };
    let next = (dt * factor).min(config.dt_max);
    let iters = full.iters + h1.iters + h2.iters;
    let stage = if config.extrapolate {
        Stage {
            phi: {
                let mut p = h2.phi.zip_map(&full.phi, |a, b| 2.0 * a - b);
                suppress_theta_noise(&mut p, 1.0);
                p
            },
            lambda: h2.lambda.iter().zip(&full.lambda).map(|(a, b)| (2.0 * a.ln() - b.ln()).exp()).collect(),
            iters,
            chord: None,
        }
    } else {
        Stage { iters, ..h2 }
    };
    Ok((stage, err, next))
}

/// Everything the record of one state needs.
#[derive(Clone)]
struct Snapshot {
    t: f64,
    metric: ConformalMetric,
    lambda: Vec<f64>,
    r: ScalarField,
    h: ScalarField,
    z: ScalarField,
    area: f64,
    rbar: f64,
    dt: f64,
    iters: usize,
    grad_f: f64,
    trace: f64,
}

fn snapshot(state: &FlowState, dt: f64, iters: usize) -> Snapshot {
    let metric = state.metric();
    let lap_f = laplacian(&state.f, &metric);
    let trace = lap_f.zip_map(&state.curvature, |l, r| l - (r - state.rbar));
    let h = hamilton_h(&state.f, &metric);
    let z = traceless_hessian_normsq(&state.f, &metric);
    let g = gradient_norm_sq(&state.f, &metric);
    Snapshot {
        t: state.t,
        lambda: state.lambda.clone(),
        r: state.curvature.clone(),
        grad_f: sup_over(metric.atlas(), &g, |v| v).max(0.0).sqrt(),
        trace: residual_sup(&trace),
        metric,
        h,
        z,
        area: state.area,
        rbar: state.rbar,
        dt,
        iters,
    }
}

fn make_record(cur: &Snapshot, prev: Option<&Snapshot>, next: Option<&Snapshot>, rho: f64) -> Result<TimeSeriesRecord> {
    let atlas = cur.metric.atlas().clone();
    let chi = atlas.spec.euler_characteristic();
    let mu = atlas.spec.mu;
    let mut res_area = None;
    let mut res_curvature = None;
    let mut res_h = None;
    if let (Some(p), Some(n)) = (prev, next) {
        let (dp, dn) = (cur.t - p.t, n.t - cur.t);
        let (wp, wm, wn) = central_weights(dp, dn);
        let da = wp * p.area + wm * cur.area + wn * n.area;
        let norm = if rho != 0.0 { rho.abs() * cur.area } else { cur.area };
        res_area = Some((da - (rho * cur.area - 4.0 * PI * chi)) / norm);
        let rc = curvature_evolution_residual_nonuniform(&p.r, &cur.r, &n.r, &cur.metric, rho, dp, dn)?;
        res_curvature = Some(residual_sup(&rc));
        let rh = h_evolution_residual(&p.h, &cur.h, &n.h, &cur.z, &cur.metric, cur.rbar, rho, dp, dn)?;
        res_h = Some(residual_sup(&rh));
    }
    let u = &cur.metric.u;
    let decay: Vec<f64> = (0..atlas.ends())
        .map(|j| decay_norm_from(u, j, cur.lambda[j], mu, atlas.cusps[j].s_lo + 1.0))
        .collect();
    let end_curvature = atlas.cusps.iter().enumerate().map(|(j, ch)| cur.r.ring_mean(j, ch.n_s - 2)).collect();
    let grad_r = gradient_norm_sq(&cur.r, &cur.metric);
    Ok(TimeSeriesRecord {
        t: cur.t,
        area: cur.area,
        rbar: cur.rbar,
        rho,
        sup_r_minus_rho: sup_over(&atlas, &cur.r, |r| (r - rho).abs()),
        inf_r: -sup_over(&atlas, &cur.r, |r| -r),
        sup_r: sup_over(&atlas, &cur.r, |r| r),
        sup_h: sup_over(&atlas, &cur.h, |v| v),
        sup_grad_f: cur.grad_f,
        decay_norm: decay,
        end_curvature,
        lambda: cur.lambda.clone(),
        gauss_bonnet: cur.rbar * cur.area - 4.0 * PI * chi,
        res_area,
        res_curvature,
        res_trace: cur.trace,
        res_h,
        shi: sup_over(&atlas, &grad_r, |v| v).max(0.0).sqrt() * cur.t.sqrt(),
        dt: cur.dt,
        newton_iters: cur.iters,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// `sup |R - ρ|` fell below the stop tolerance.
    Converged,
    ReachedFinalTime,
}

pub struct RunOutput {
    pub records: Vec<TimeSeriesRecord>,
    pub state: FlowState,
    pub status: RunStatus,
    pub steps: usize,
}

/// A failed run keeps what it produced so far.
pub struct RunFailure {
    pub error: FlowError,
    pub records: Vec<TimeSeriesRecord>,
    pub state: Box<FlowState>,
}

impl std::fmt::Debug for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run failed at t = {}: {}", self.state.t, self.error)
    }
}

/// Integrates from `initial` to `t_final` or until `sup |R - ρ| < stop_tol`.
/// Every state's record is finished once its successor exists, so
/// time-derivative channels are centered; records therefore reach the
/// observer one step late.
pub fn run(
    initial: &ConformalMetric,
    config: &FlowConfig,
    observer: impl FnMut(&TimeSeriesRecord),
) -> std::result::Result<RunOutput, RunFailure> {
    let state = FlowState::new(initial, config).map_err(|error| {
        let rho = config.resolve_rho(initial);
        let f = ScalarField::zeros(initial.atlas());
        let state = FlowState::with_potential(initial, rho, f, config.dt_init).expect("state from a valid metric");
        RunFailure { error, records: Vec::new(), state: Box::new(state) }
    })?;
    run_from(state, config, observer)
}

/// [`run`] from an existing state.
pub fn run_from(
    mut state: FlowState,
    config: &FlowConfig,
    mut observer: impl FnMut(&TimeSeriesRecord),
) -> std::result::Result<RunOutput, RunFailure> {
    if let Err(error) = config.validate() {
        return Err(RunFailure { error, records: Vec::new(), state: Box::new(state) });
    }
    let rho = state.rho;
    let mut records = Vec::new();
    let mut prev: Option<Snapshot> = None;
    let mut cur = snapshot(&state, 0.0, 0);
    let mut index = 0usize;
    let mut emit = |rec: Result<TimeSeriesRecord>, idx: usize, last: bool, records: &mut Vec<TimeSeriesRecord>| -> Result<()> {
        let rec = rec?;
        if idx % config.cadence == 0 || last {
            observer(&rec);
            records.push(rec);
        }
        Ok(())
    };
    let fail = |error: FlowError, records: Vec<TimeSeriesRecord>, state: FlowState| RunFailure {
        error,
        records,
        state: Box::new(state),
    };

    let converged = |s: &FlowState| config.stop_tol > 0.0 && s.curvature_defect() < config.stop_tol;
    let mut status = RunStatus::ReachedFinalTime;
    let mut steps = 0;
    if converged(&state) {
        status = RunStatus::Converged;
    } else {
        while state.t < config.t_final {
            let info = match step(&mut state, config) {
                Ok(i) => i,
                Err(e) => {
                    let rec = make_record(&cur, prev.as_ref(), None, rho);
                    let _ = emit(rec, index, true, &mut records);
                    return Err(fail(e, records, state));
                }
            };
            steps += 1;
            let next = snapshot(&state, info.dt, info.newton_iters);
            let rec = make_record(&cur, prev.as_ref(), Some(&next), rho);
            if let Err(e) = emit(rec, index, false, &mut records) {
                return Err(fail(e, records, state));
            }
            index += 1;
            prev = Some(std::mem::replace(&mut cur, next));
            if converged(&state) {
                status = RunStatus::Converged;
                break;
            }
        }
    }
    let rec = make_record(&cur, prev.as_ref(), None, rho);
    if let Err(e) = emit(rec, index, true, &mut records) {
        return Err(fail(e, records, state));
    }
    Ok(RunOutput { records, state, status, steps })
}

/// The constant-curvature metric `R ≡ ρ` in the conformal class of
/// `initial`, with end limits `-2/ρ`: flow until `sup |R - ρ| < 1e-3`, then
/// Newton on `R(φ) = ρ`.
pub fn uniformize(initial: &ConformalMetric, rho: f64, config: &FlowConfig) -> Result<ConformalMetric> {
    if !(rho < 0.0) {
        return Err(FlowError::Parameter(format!("uniformization needs ρ < 0, got {rho}")));
    }
    let pre = FlowConfig {
        rho_mode: RhoMode::Explicit,
        rho: Some(rho),
        stop_tol: 1e-3,
        t_final: 60.0 / rho.abs(),
        end_bc: EndBc::DirichletOde,
        ..config.clone()
    };
    let zero = ScalarField::zeros(initial.atlas());
    let mut state = FlowState::with_potential(initial, rho, zero, pre.dt_init)?;
    while state.curvature_defect() >= pre.stop_tol && state.t < pre.t_final {
        // the potential is irrelevant here; step() still co-evolves it
        step(&mut state, &pre)?;
    }
    let bg = state.background.clone();
    let limits = vec![-2.0 / rho; state.lambda.len()];
    let fine = FlowConfig { newton_tol: 1e-13, newton_max_iter: 60, ..pre };
    let (phi, _, _) = newton(&bg, state.phi.clone(), &limits, EndBc::DirichletOde, &fine, None, |m, _| {
        let r = scalar_curvature(m);
        (r.map(|r| -r), r.map(|r| rho - r))
    })?;
    let metric = metric_of(&bg, &phi, &limits);
    ConformalMetric::new(&bg, metric.u, limits)
}
