//! Punctured flat torus, its cusp charts and the fixed background metric.
//!
//! The core chart is the unit square with periodic identification and an
//! `n x n` node grid. Each puncture carries a cusp chart with coordinates
//! `(s, θ)`, where the Euclidean distance to the puncture is `r = exp(-e^s)`.
//! In these coordinates the background metric is exactly `ds² + e^{-2s} dθ²`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::fourier::Fourier;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub punctures: Vec<[f64; 2]>,
    /// Initial asymptotic curvature magnitude per end: the initial metric
    /// approaches `(2/σ_j)` times the cusp model.
    pub sigma: Vec<f64>,
    pub mu: f64,
}

impl SurfaceSpec {
    pub fn new(punctures: Vec<[f64; 2]>, sigma: Vec<f64>, mu: f64) -> Result<Self> {
        let spec = Self { punctures, sigma, mu };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.punctures.is_empty() {
            return Err(FlowError::Domain("at least one puncture is required".into()));
        }
        if self.sigma.len() != self.punctures.len() {
            return Err(FlowError::Domain(format!(
                "{} punctures but {} end curvatures",
                self.punctures.len(),
                self.sigma.len()
            )));
        }
        for (j, p) in self.punctures.iter().enumerate() {
            if !(0.0..1.0).contains(&p[0]) || !(0.0..1.0).contains(&p[1]) {
                return Err(FlowError::Domain(format!("puncture {j} outside the unit square")));
            }
        }
        for (j, &s) in self.sigma.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(FlowError::Domain(format!("end {j}: sigma must be positive, got {s}")));
            }
        }
        if !(self.mu.is_finite() && self.mu > 1.0) {
            return Err(FlowError::Domain(format!("decay exponent mu must exceed 1, got {}", self.mu)));
        }
        Ok(())
    }

    pub fn ends(&self) -> usize {
        self.punctures.len()
    }

    /// Torus minus ℓ points.
    pub fn euler_characteristic(&self) -> f64 {
        -(self.punctures.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub core_n: usize,
    pub n_s: usize,
    pub n_theta: usize,
    pub s_lo: f64,
    pub s_hi: f64,
    /// Width in `s` of the chart overlap; the core hole sits at `s_lo + overlap`.
    pub overlap: f64,
    /// Euclidean radius where the background becomes flat.
    pub blend_outer_radius: f64,
    /// Log of the flat core factor, `ŵ = e^{2C}` away from the punctures.
    pub core_log_factor: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            core_n: 128,
            n_s: 256,
            n_theta: 16,
            s_lo: 0.1,
            s_hi: 8.0,
            overlap: 0.5,
            blend_outer_radius: 0.47,
            core_log_factor: 1.0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FlowError::Parameter(m));
        if self.core_n < 16 {
            return bad(format!("core_n = {} is too small", self.core_n));
        }
        if self.n_s < 16 {
            return bad(format!("n_s = {} is too small", self.n_s));
        }
        if self.n_theta < 4 || self.n_theta % 2 != 0 {
            return bad(format!("n_theta must be even and >= 4, got {}", self.n_theta));
        }
        if !(self.s_lo.is_finite() && self.s_hi.is_finite() && self.s_lo < self.s_hi) {
            return bad("need s_lo < s_hi".into());
        }
        if self.s_lo <= -2.0 {
            return bad("s_lo too small: cusp footprint would cover the torus".into());
        }
        if !(self.overlap > 0.0 && self.s_lo + self.overlap < self.s_hi - 1.0) {
            return bad("overlap must be positive and leave room for the cusp interior".into());
        }
        let r_lo = radius_of(self.s_lo);
        if !(self.blend_outer_radius > r_lo && self.blend_outer_radius < 0.5) {
            return bad(format!(
                "blend_outer_radius must lie in ({r_lo:.4}, 0.5), got {}",
                self.blend_outer_radius
            ));
        }
        Ok(())
    }

    pub fn s_hole(&self) -> f64 {
        self.s_lo + self.overlap
    }

    pub fn h_s(&self) -> f64 {
        (self.s_hi - self.s_lo) / (self.n_s - 1) as f64
    }
}

/// `r = exp(-e^s)`.
pub fn radius_of(s: f64) -> f64 {
    (-s.exp()).exp()
}

/// Inverse of [`radius_of`] for `0 < r < 1`.
pub fn s_of_radius(r: f64) -> f64 {
    (-r.ln()).ln()
}

/// Quintic smoothstep on `[0, 1]` with value, first and second derivative.
pub fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let v = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let d1 = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        let d2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
        (v, d1, d2)
    }
}

/// Radial log-factor of the background around one puncture, as a function
/// of `y = log r`: the cusp profile `-y - log(-y)` inside, the constant `C`
/// outside, glued by a smoothstep in `y`.
#[derive(Clone, Copy, Debug)]
pub struct RadialBlend {
    pub y_in: f64,
    pub y_out: f64,
    pub c: f64,
}

impl RadialBlend {
    /// Returns `(ψ, ψ_y, ψ_yy)`.
    pub fn eval(&self, y: f64) -> (f64, f64, f64) {
        let d = self.y_out - self.y_in;
        let (st, s1, s2) = smoothstep((y - self.y_in) / d);
        let b = 1.0 - st;
        let b1 = -s1 / d;
        let b2 = -s2 / (d * d);
        if b == 0.0 {
            return (self.c, 0.0, 0.0);
        }
        let pc = -y - (-y).ln();
        let pc1 = -1.0 - 1.0 / y;
        let pc2 = 1.0 / (y * y);
        let psi = self.c + b * (pc - self.c);
        let psi1 = b1 * (pc - self.c) + b * pc1;
        let psi2 = b2 * (pc - self.c) + 2.0 * b1 * pc1 + b * pc2;
        (psi, psi1, psi2)
    }

    /// Background curvature `R̂ = -2 e^{-2ψ-2y} ψ_yy`.
    pub fn curvature(&self, y: f64) -> f64 {
        let (psi, _, psi2) = self.eval(y);
        -2.0 * (-2.0 * psi - 2.0 * y).exp() * psi2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartId {
    Core,
    Cusp(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SurfacePoint {
    Core { x: f64, y: f64 },
    Cusp { end: usize, s: f64, theta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    /// Active node whose value is interpolated from a cusp chart.
    Fringe,
    /// Inside a core hole; carries a display value only.
    Inactive,
}

/// Local polar data of a core node near a puncture.
#[derive(Clone, Copy, Debug)]
pub struct Near {
    pub end: usize,
    pub r: f64,
    pub theta: f64,
}

/// Interpolation from a cusp chart: cubic Lagrange in `s`, trigonometric in θ.
#[derive(Clone, Debug)]
pub struct CuspStencil {
    pub end: usize,
    pub ring: usize,
    pub ws: [f64; 4],
    pub w_theta: Vec<f64>,
    pub basis: Vec<f64>,
}

/// Bicubic Lagrange interpolation from the core grid.
#[derive(Clone, Copy, Debug)]
pub struct CoreStencil {
    pub nodes: [usize; 16],
    pub w: [f64; 16],
}

#[derive(Clone, Debug)]
pub struct CoreChart {
    pub n: usize,
    pub h: f64,
    pub class: Vec<NodeClass>,
    pub near: Vec<Option<Near>>,
    /// Weight of the cusp side of the partition of unity at each node.
    pub chi: Vec<f64>,
}

impl CoreChart {
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    pub fn coords(&self, k: usize) -> [f64; 2] {
        [(k / self.n) as f64 * self.h, (k % self.n) as f64 * self.h]
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn neighbors(&self, k: usize) -> [usize; 4] {
        let n = self.n;
        let (i, j) = (k / n, k % n);
        [
            ((i + 1) % n) * n + j,
            ((i + n - 1) % n) * n + j,
            i * n + (j + 1) % n,
            i * n + (j + n - 1) % n,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct CuspChart {
    pub end: usize,
    pub center: [f64; 2],
    pub s_lo: f64,
    pub s_hi: f64,
    pub s_hole: f64,
    pub n_s: usize,
    pub h_s: f64,
    pub fourier: Fourier,
    /// Product-trapezoid weights of `∫ g(s) e^{-s} ds` per ring.
    pub ring_weight: Vec<f64>,
    /// `∫ hat_i(s) χ(s) e^{-s} ds`, the ring weight with the partition of
    /// unity folded in exactly.
    pub quad_weight: Vec<f64>,
    /// `(e^{-s_i} - e^{-s_{i+1}}) / h` between ring `i` and `i+1`.
    pub flux: Vec<f64>,
    /// Partition-of-unity weight per ring.
    pub chi: Vec<f64>,
    pub pou_lo: f64,
    pub pou_hi: f64,
}

impl CuspChart {
    pub fn n_theta(&self) -> usize {
        self.fourier.len()
    }

    pub fn s(&self, i: usize) -> f64 {
        self.s_lo + i as f64 * self.h_s
    }

    pub fn len(&self) -> usize {
        self.n_s * self.n_theta()
    }

    pub fn is_empty(&self) -> bool {
        self.n_s == 0
    }

    pub fn pou(&self, s: f64) -> f64 {
        smoothstep((s - self.pou_lo) / (self.pou_hi - self.pou_lo)).0
    }

    /// Cubic Lagrange stencil in `s` (rings `ring..ring+4`).
    pub fn s_stencil(&self, s: f64) -> (usize, [f64; 4]) {
        let t = (s - self.s_lo) / self.h_s;
        let base = (t.floor() as isize - 1).clamp(0, self.n_s as isize - 4) as usize;
        let x = t - base as f64;
        (base, lagrange4(x))
    }

    /// Core-plane position of `(s, θ)`: the puncture plus `r (cos θ, sin θ)`,
    /// `r = exp(-e^s)`, reduced to the unit square.
    pub fn to_core(&self, s: f64, theta: f64) -> Result<[f64; 2]> {
        if !(s >= self.s_lo && s <= self.s_hi) {
            return Err(FlowError::Domain(format!(
                "s = {s} outside [{}, {}] on end {}",
                self.s_lo, self.s_hi, self.end
            )));
        }
        Ok(cusp_to_core(self.center, s, theta))
    }

    pub fn stencil(&self, s: f64, theta: f64) -> CuspStencil {
        let (ring, ws) = self.s_stencil(s);
        CuspStencil {
            end: self.end,
            ring,
            ws,
            w_theta: self.fourier.interp_weights(theta),
            basis: self.fourier.basis_at(theta),
        }
    }
}

/// 8-point Gauss–Legendre on `[a, b]`; exact far below round-off for the
/// piecewise-smooth ring weight integrands (split at the smoothstep ends).
fn gauss_legendre(g: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
    const W: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    let sub = 16;
    let h = (b - a) / sub as f64;
    let mut total = 0.0;
    for k in 0..sub {
        let c = a + (k as f64 + 0.5) * h;
        let r = 0.5 * h;
        for (x, w) in X.iter().zip(&W) {
            total += w * r * (g(c - r * x) + g(c + r * x));
        }
    }
    total
}

/// Weights of cubic Lagrange interpolation through nodes 0,1,2,3 at `x`.
pub fn lagrange4(x: f64) -> [f64; 4] {
    [
        -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0,
        x * (x - 2.0) * (x - 3.0) / 2.0,
        -x * (x - 1.0) * (x - 3.0) / 2.0,
        x * (x - 1.0) * (x - 2.0) / 6.0,
    ]
}

/// Periodic displacement reduced to `[-1/2, 1/2)`.
pub fn wrap(d: f64) -> f64 {
    d - (d + 0.5).floor()
}

#[derive(Clone, Debug)]
pub struct FringeNode {
    pub node: usize,
    pub class: NodeClass,
    pub stencil: CuspStencil,
}

/// The core chart, the cusp charts and every precomputed inter-chart map.
#[derive(Debug)]
pub struct ChartAtlas {
    pub spec: SurfaceSpec,
    pub grid: GridConfig,
    pub core: CoreChart,
    pub cusps: Vec<CuspChart>,
    pub blends: Vec<RadialBlend>,
    /// Core nodes filled from a cusp chart (fringe and inactive).
    pub fringe: Vec<FringeNode>,
    /// Per end, per θ node: stencil for the innermost ring.
    pub ring0: Vec<Vec<CoreStencil>>,
}

impl ChartAtlas {
    /// Checks `spec` and `grid` together without allocating anything.
    pub fn check_layout(spec: &SurfaceSpec, grid: &GridConfig) -> Result<()> {
        spec.validate()?;
        grid.validate()?;
        let ends = spec.ends();
        let r_out = grid.blend_outer_radius;
        for a in 0..ends {
            for b in a + 1..ends {
                let d = periodic_distance(spec.punctures[a], spec.punctures[b]);
                if d <= 2.0 * r_out {
                    return Err(FlowError::Domain(format!(
                        "punctures {a} and {b} are {d:.4} apart; footprints of radius {r_out} overlap"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn new(spec: SurfaceSpec, grid: GridConfig) -> Result<Arc<Self>> {
        Self::check_layout(&spec, &grid)?;
        let ends = spec.ends();
        let r_out = grid.blend_outer_radius;

        let n = grid.core_n;
        let h = 1.0 / n as f64;
        let s_hole = grid.s_hole();
        let r_hole = radius_of(s_hole);
        let r_lo = radius_of(grid.s_lo);
        let h_s = grid.h_s();

        let pou_lo = grid.s_lo + 0.25 * grid.overlap;
        let pou_hi = grid.s_lo + 0.75 * grid.overlap;
        let blends: Vec<RadialBlend> = (0..ends)
            .map(|_| RadialBlend { y_in: -grid.s_lo.exp(), y_out: r_out.ln(), c: grid.core_log_factor })
            .collect();

        let cusps: Vec<CuspChart> = spec
            .punctures
            .iter()
            .enumerate()
            .map(|(end, &center)| {
                let mut ring_weight = vec![0.0; grid.n_s];
                let mut chi = vec![0.0; grid.n_s];
                let left = |a: f64| a * (-(-h_s).exp_m1() - h_s * (-h_s).exp()) / h_s;
                let right = |a: f64| a * (h_s + (-h_s).exp_m1()) / h_s;
                for i in 0..grid.n_s {
                    let s = grid.s_lo + i as f64 * h_s;
                    if i > 0 {
                        ring_weight[i] += left((-(s - h_s)).exp());
                    }
                    if i + 1 < grid.n_s {
                        ring_weight[i] += right((-s).exp());
                    }
                    chi[i] = smoothstep((s - pou_lo) / (pou_hi - pou_lo)).0;
                }
                let quad_weight = (0..grid.n_s)
                    .map(|i| {
                        let si = grid.s_lo + i as f64 * h_s;
                        let g = |s: f64| {
                            (1.0 - (s - si).abs() / h_s)
                                * smoothstep((s - pou_lo) / (pou_hi - pou_lo)).0
                                * (-s).exp()
                        };
                        let mut w = 0.0;
                        if i > 0 {
                            w += gauss_legendre(&g, si - h_s, si);
                        }
                        if i + 1 < grid.n_s {
                            w += gauss_legendre(&g, si, si + h_s);
                        }
                        w
                    })
                    .collect();
                let flux = (0..grid.n_s - 1)
                    .map(|i| -(-(grid.s_lo + i as f64 * h_s)).exp() * (-h_s).exp_m1() / h_s)
                    .collect();
                CuspChart {
                    end,
                    center,
                    s_lo: grid.s_lo,
                    s_hi: grid.s_hi,
                    s_hole,
                    n_s: grid.n_s,
                    h_s,
                    fourier: Fourier::new(grid.n_theta),
                    ring_weight,
                    quad_weight,
                    flux,
                    chi,
                    pou_lo,
                    pou_hi,
                }
            })
            .collect();

        let mut class = vec![NodeClass::Interior; n * n];
        let mut near = vec![None; n * n];
        let mut chi = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let x = [i as f64 * h, j as f64 * h];
                for (end, p) in spec.punctures.iter().enumerate() {
                    let dx = wrap(x[0] - p[0]);
                    let dy = wrap(x[1] - p[1]);
                    let r = dx.hypot(dy);
                    if r < r_out {
                        near[k] = Some(Near { end, r, theta: dy.atan2(dx).rem_euclid(2.0 * PI) });
                        if r < r_hole {
                            class[k] = NodeClass::Inactive;
                        }
                        if r < r_lo {
                            chi[k] = if r > 0.0 { cusps[end].pou(s_of_radius(r)) } else { 1.0 };
                        }
                    }
                }
            }
        }
        let core0 = CoreChart { n, h, class: class.clone(), near: near.clone(), chi: chi.clone() };
        for k in 0..n * n {
            if class[k] == NodeClass::Interior
                && core0.neighbors(k).iter().any(|&q| class[q] == NodeClass::Inactive)
            {
                class[k] = NodeClass::Fringe;
            }
        }
        let core = CoreChart { class, ..core0 };

        let mut fringe = Vec::new();
        for k in 0..n * n {
            let c = core.class[k];
            if c == NodeClass::Interior {
                continue;
            }
            let nr = core.near[k].expect("non-interior node lies near a puncture");
            let cusp = &cusps[nr.end];
            let s = if nr.r > 0.0 { s_of_radius(nr.r).min(cusp.s_hi) } else { cusp.s_hi };
            if c == NodeClass::Fringe && !(s > cusp.s_lo + 2.0 * h_s && s < cusp.s_hi - 2.0 * h_s) {
                return Err(FlowError::Parameter(format!("fringe node at s = {s:.4} has no interior cusp stencil")));
            }
            fringe.push(FringeNode { node: k, class: c, stencil: cusp.stencil(s, nr.theta) });
        }

        let mut ring0 = Vec::with_capacity(ends);
        for cusp in &cusps {
            let mut per = Vec::with_capacity(cusp.n_theta());
            for &th in cusp.fourier.theta() {
                let x = cusp_to_core(cusp.center, cusp.s_lo, th);
                let st = core_stencil(&core, x);
                if st.nodes.iter().any(|&q| core.class[q] != NodeClass::Interior) {
                    return Err(FlowError::Parameter(
                        "innermost cusp ring touches the core hole; increase overlap or core_n".into(),
                    ));
                }
                per.push(st);
            }
            ring0.push(per);
        }

        Ok(Arc::new(Self { spec, grid, core, cusps, blends, fringe, ring0 }))
    }

    pub fn ends(&self) -> usize {
        self.cusps.len()
    }

    /// Map a point between charts. Fails outside the chart overlap.
    pub fn map_point(&self, p: SurfacePoint, to: ChartId) -> Result<SurfacePoint> {
        match (p, to) {
            (SurfacePoint::Core { .. }, ChartId::Core) => Ok(p),
            (SurfacePoint::Cusp { end, .. }, ChartId::Cusp(e)) if end == e => Ok(p),
            (SurfacePoint::Core { x, y }, ChartId::Cusp(e)) => {
                let cusp = self.cusp(e)?;
                let dx = wrap(x - cusp.center[0]);
                let dy = wrap(y - cusp.center[1]);
                let r = dx.hypot(dy);
                if r == 0.0 {
                    return Err(FlowError::Domain("point is the puncture itself".into()));
                }
                let s = s_of_radius(r);
                if !(s >= cusp.s_lo && s <= cusp.s_hole) {
                    return Err(FlowError::Domain(format!("s = {s:.6} lies outside the overlap of end {e}")));
                }
                Ok(SurfacePoint::Cusp { end: e, s, theta: dy.atan2(dx).rem_euclid(2.0 * PI) })
            }
            (SurfacePoint::Cusp { end, s, theta }, ChartId::Core) => {
                let cusp = self.cusp(end)?;
                if !(s >= cusp.s_lo && s <= cusp.s_hole) {
                    return Err(FlowError::Domain(format!("s = {s:.6} lies outside the overlap of end {end}")));
                }
                let [x, y] = cusp_to_core(cusp.center, s, theta);
                Ok(SurfacePoint::Core { x, y })
            }
            (SurfacePoint::Cusp { end, .. }, ChartId::Cusp(e)) => {
                Err(FlowError::Domain(format!("cusp charts {end} and {e} do not overlap")))
            }
        }
    }

    fn cusp(&self, e: usize) -> Result<&CuspChart> {
        self.cusps.get(e).ok_or_else(|| FlowError::Domain(format!("no end {e}")))
    }

    /// Polar data around the nearest puncture, if within the blend radius.
    pub fn locate(&self, x: [f64; 2]) -> Option<Near> {
        for (end, p) in self.spec.punctures.iter().enumerate() {
            let dx = wrap(x[0] - p[0]);
            let dy = wrap(x[1] - p[1]);
            let r = dx.hypot(dy);
            if r < self.grid.blend_outer_radius {
                return Some(Near { end, r, theta: dy.atan2(dx).rem_euclid(2.0 * PI) });
            }
        }
        None
    }

    /// Background log-factor `ψ̂` and curvature `R̂` at a core point.
    pub fn background_at(&self, x: [f64; 2]) -> (f64, f64) {
        match self.locate(x) {
            Some(nr) if nr.r > 0.0 => {
                let b = &self.blends[nr.end];
                let y = nr.r.ln();
                (b.eval(y).0, b.curvature(y))
            }
            Some(_) => (f64::INFINITY, -2.0),
            None => (self.grid.core_log_factor, 0.0),
        }
    }

    /// Number of core nodes that are solved for (interior or fringe).
    pub fn core_active(&self) -> usize {
        self.core.class.iter().filter(|c| **c != NodeClass::Inactive).count()
    }
}

/// Core-plane position of cusp coordinates `(s, θ)` on `chart`.
pub fn chart_map(chart: &CuspChart, s: f64, theta: f64) -> Result<[f64; 2]> {
    chart.to_core(s, theta)
}

pub fn cusp_to_core(center: [f64; 2], s: f64, theta: f64) -> [f64; 2] {
    let r = radius_of(s);
    [
        (center[0] + r * theta.cos()).rem_euclid(1.0),
        (center[1] + r * theta.sin()).rem_euclid(1.0),
    ]
}

pub fn periodic_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    wrap(a[0] - b[0]).hypot(wrap(a[1] - b[1]))
}

pub fn core_stencil(core: &CoreChart, x: [f64; 2]) -> CoreStencil {
    let n = core.n as isize;
    let tx = x[0] / core.h;
    let ty = x[1] / core.h;
    let ix = tx.floor() as isize - 1;
    let iy = ty.floor() as isize - 1;
    let wx = lagrange4(tx - ix as f64);
    let wy = lagrange4(ty - iy as f64);
    let mut nodes = [0usize; 16];
    let mut w = [0.0; 16];
    for a in 0..4 {
        for b in 0..4 {
            let i = (ix + a as isize).rem_euclid(n) as usize;
            let j = (iy + b as isize).rem_euclid(n) as usize;
            nodes[a * 4 + b] = i * core.n + j;
            w[a * 4 + b] = wx[a] * wy[b];
        }
    }
    CoreStencil { nodes, w }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_atlas() -> Arc<ChartAtlas> {
        let spec = SurfaceSpec::new(vec![[0.5, 0.5]], vec![2.0], 2.0).unwrap();
        let grid = GridConfig { core_n: 64, n_s: 96, n_theta: 8, ..GridConfig::default() };
        ChartAtlas::new(spec, grid).unwrap()
    }

    #[test]
    fn chart_map_round_trip() {
        let atlas = small_atlas();
        for &(s, th) in &[(0.15, 0.3), (0.4, 2.0), (0.55, 5.9)] {
            let p = SurfacePoint::Cusp { end: 0, s, theta: th };
            let q = atlas.map_point(p, ChartId::Core).unwrap();
            match atlas.map_point(q, ChartId::Cusp(0)).unwrap() {
                SurfacePoint::Cusp { s: s2, theta: t2, .. } => {
                    assert!((s - s2).abs() < 1e-12);
                    assert!((th - t2).abs() < 1e-12);
                }
                _ => unreachable!(),
            }
        }
        let far = SurfacePoint::Core { x: 0.0, y: 0.0 };
        assert!(atlas.map_point(far, ChartId::Cusp(0)).is_err());
        let deep = SurfacePoint::Cusp { end: 0, s: 3.0, theta: 0.0 };
        assert!(atlas.map_point(deep, ChartId::Core).is_err());
    }

    #[test]
    fn cusp_profile_is_hyperbolic() {
        let b = RadialBlend { y_in: -1.2, y_out: -0.8, c: 1.0 };
        for &y in &[-1.3, -3.0, -40.0] {
            assert!((b.curvature(y) + 2.0).abs() < 1e-12);
        }
        assert_eq!(b.curvature(-0.5), 0.0);
    }

    #[test]
    fn overlapping_footprints_rejected() {
        let spec = SurfaceSpec::new(vec![[0.5, 0.5], [0.6, 0.5]], vec![1.0, 1.0], 2.0).unwrap();
        assert!(ChartAtlas::new(spec, GridConfig::default()).is_err());
    }

    #[test]
    fn bad_spec_rejected() {
        assert!(SurfaceSpec::new(vec![], vec![], 2.0).is_err());
        assert!(SurfaceSpec::new(vec![[0.5, 0.5]], vec![-1.0], 2.0).is_err());
        assert!(SurfaceSpec::new(vec![[0.5, 0.5]], vec![1.0], 1.0).is_err());
    }

    #[test]
    fn classes_are_consistent() {
        let atlas = small_atlas();
        let core = &atlas.core;
        for k in 0..core.len() {
            if core.class[k] == NodeClass::Interior {
                assert!(core.neighbors(k).iter().all(|&q| core.class[q] != NodeClass::Inactive));
            } else {
                assert!(core.chi[k] == 1.0);
            }
        }
    }
}
