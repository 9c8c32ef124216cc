//! Composite linear systems over all charts.
//!
//! Unknowns: core nodes outside the holes (nodal), then for each end the
//! cusp values in the real Fourier basis, ring by ring. Working modally in θ
//! keeps the zero mode free of round-off from the `e^{2s} ∂_θ²` term, which
//! grows like `e^{2 s_hi}`.
//!
//! Rows, one per unknown:
//! * core interior nodes and cusp rings `1..n_s-1`: `a x - Δ_g x = b`,
//!   scaled by a positive per-row factor;
//! * core fringe nodes: value minus the cusp interpolant;
//! * innermost cusp ring: modal coefficients minus the analysed core
//!   interpolant;
//! * outermost cusp ring: end conditions.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{FlowError, Result};
use crate::field::ScalarField;
use crate::geometry::{ChartAtlas, NodeClass};
use crate::metric::ConformalMetric;
use crate::operators::quadrature_weights;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndRow {
    /// Every mode prescribed.
    Dirichlet,
    /// Zero mode: one-sided `∂_s` prescribed; other modes prescribed values.
    ZeroModeSlope,
    /// Every mode: one-sided `∂_s` prescribed.
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverKind {
    Direct,
    /// Alternating Schwarz between the core and the cusp charts, i.e. block
    /// Gauss–Seidel on the composite matrix with factorized chart blocks.
    Schwarz { tol: f64, max_sweeps: usize },
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub core_unknown: Vec<usize>,
    pub core_nodes: Vec<usize>,
    pub cusp_offset: Vec<usize>,
    pub n: usize,
}

impl Layout {
    pub fn new(atlas: &ChartAtlas) -> Self {
        let mut core_unknown = vec![usize::MAX; atlas.core.len()];
        let mut core_nodes = Vec::new();
        for k in 0..atlas.core.len() {
            if atlas.core.class[k] != NodeClass::Inactive {
                core_unknown[k] = core_nodes.len();
                core_nodes.push(k);
            }
        }
        let mut off = core_nodes.len();
        let mut cusp_offset = Vec::new();
        for ch in &atlas.cusps {
            cusp_offset.push(off);
            off += ch.len();
        }
        Self { core_unknown, core_nodes, cusp_offset, n: off }
    }

    pub fn cusp(&self, atlas: &ChartAtlas, end: usize, ring: usize, k: usize) -> usize {
        self.cusp_offset[end] + ring * atlas.cusps[end].n_theta() + k
    }

    /// Unknown ranges per chart: core first, then each end.
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut v = vec![0..self.core_nodes.len()];
        for (j, &o) in self.cusp_offset.iter().enumerate() {
            let end = self.cusp_offset.get(j + 1).copied().unwrap_or(self.n);
            v.push(o..end);
        }
        v
    }
}

/// Assembled composite matrix with the row scales needed to build right
/// hand sides.
pub struct CompositeSystem {
    atlas: Arc<ChartAtlas>,
    pub layout: Layout,
    triplets: Vec<Triplet<usize, usize, f64>>,
    scale_core: Vec<f64>,
    scale_cusp: Vec<Vec<f64>>,
    end_rows: Vec<EndRow>,
    bordered: bool,
}

impl CompositeSystem {
    /// Assembles `a x - Δ_g x` with the given end rows. With `bordered`, a
    /// multiplier column (the row scale) and the quadrature row `∫ x dA`
    /// are appended, which makes the pure Laplacian invertible.
    pub fn assemble(metric: &ConformalMetric, a: &ScalarField, end_rows: &[EndRow], bordered: bool) -> Self {
        let atlas = metric.atlas().clone();
        assert_eq!(end_rows.len(), atlas.ends());
        let layout = Layout::new(&atlas);
        let mut t: Vec<Triplet<usize, usize, f64>> = Vec::new();
        let core = &atlas.core;
        let mut scale_core = vec![0.0; core.len()];
        let h2 = core.h * core.h;
        let border = layout.n;

        for (r, &k) in layout.core_nodes.iter().enumerate() {
            match core.class[k] {
                NodeClass::Interior => {
                    let s = metric.core_factor(k) * h2;
                    scale_core[k] = s;
                    t.push(Triplet::new(r, r, s * a.core[k] + 4.0));
                    for q in core.neighbors(k) {
                        t.push(Triplet::new(r, layout.core_unknown[q], -1.0));
                    }
                    if bordered {
                        t.push(Triplet::new(r, border, s));
                    }
                }
                NodeClass::Fringe => {
                    t.push(Triplet::new(r, r, 1.0));
                }
                NodeClass::Inactive => unreachable!(),
            }
        }
        for fr in &atlas.fringe {
            if fr.class != NodeClass::Fringe {
                continue;
            }
            let r = layout.core_unknown[fr.node];
            let st = &fr.stencil;
            for (da, &wa) in st.ws.iter().enumerate() {
                for (j, &bj) in st.basis.iter().enumerate() {
                    let v = wa * bj;
                    if v != 0.0 {
                        t.push(Triplet::new(r, layout.cusp(&atlas, st.end, st.ring + da, j), -v));
                    }
                }
            }
        }

        let mut scale_cusp = Vec::new();
        for (end, ch) in atlas.cusps.iter().enumerate() {
            let nt = ch.n_theta();
            let n = ch.n_s;
            let h = ch.h_s;
            let fo = &ch.fourier;
            let mut scale = vec![0.0; ch.len()];
            let idx = |i: usize, k: usize| layout.cusp(&atlas, end, i, k);

            // innermost ring from the core
            for k in 0..nt {
                let r = idx(0, k);
                t.push(Triplet::new(r, r, 1.0));
                for m in 0..nt {
                    let am = fo.analysis(k, m);
                    if am == 0.0 {
                        continue;
                    }
                    let st = &atlas.ring0[end][m];
                    for (&q, &w) in st.nodes.iter().zip(&st.w) {
                        t.push(Triplet::new(r, layout.core_unknown[q], -am * w));
                    }
                }
            }

            for i in 1..n - 1 {
                let s = ch.s(i);
                let es = s.exp();
                let sigma = h * ch.ring_weight[i] * es;
                let e2s = (2.0 * s).exp();
                let mut d = vec![0.0; nt];
                for m in 0..nt {
                    let sc = sigma * metric.u.cusps[end][i * nt + m];
                    scale[i * nt + m] = sc;
                    d[m] = sc * a.cusps[end][i * nt + m];
                }
                let fp = es * ch.flux[i];
                let fm = es * ch.flux[i - 1];
                for k in 0..nt {
                    let r = idx(i, k);
                    for j in 0..nt {
                        let mut v = 0.0;
                        for m in 0..nt {
                            v += fo.analysis(k, m) * d[m] * fo.synth(m, j);
                        }
                        if j == k {
                            let kk = fo.wavenumber(k);
                            v += fp + fm + sigma * e2s * kk * kk;
                        }
                        if v != 0.0 {
                            t.push(Triplet::new(r, idx(i, j), v));
                        }
                    }
                    t.push(Triplet::new(r, idx(i + 1, k), -fp));
                    t.push(Triplet::new(r, idx(i - 1, k), -fm));
                    if bordered {
                        let v: f64 = (0..nt).map(|m| fo.analysis(k, m) * scale[i * nt + m]).sum();
                        if v != 0.0 {
                            t.push(Triplet::new(r, border, v));
                        }
                    }
                }
            }

            for k in 0..nt {
                let r = idx(n - 1, k);
                let slope = match end_rows[end] {
                    EndRow::Dirichlet => false,
                    EndRow::ZeroModeSlope => k == 0,
                    EndRow::Neumann => true,
                };
                if slope {
                    t.push(Triplet::new(r, idx(n - 1, k), 1.5 / h));
                    t.push(Triplet::new(r, idx(n - 2, k), -2.0 / h));
                    t.push(Triplet::new(r, idx(n - 3, k), 0.5 / h));
                } else {
                    t.push(Triplet::new(r, r, 1.0));
                }
            }
            scale_cusp.push(scale);
        }

        if bordered {
            let w = quadrature_weights(metric);
            for (r, &k) in layout.core_nodes.iter().enumerate() {
                if w.core[k] != 0.0 {
                    t.push(Triplet::new(border, r, w.core[k]));
                }
            }
            for (end, ch) in atlas.cusps.iter().enumerate() {
                let nt = ch.n_theta();
                for i in 0..ch.n_s {
                    for j in 0..nt {
                        let v: f64 = (0..nt).map(|m| w.cusps[end][i * nt + m] * ch.fourier.synth(m, j)).sum();
                        if v != 0.0 {
                            t.push(Triplet::new(border, layout.cusp(&atlas, end, i, j), v));
                        }
                    }
                }
            }
        }

        Self { atlas, layout, triplets: t, scale_core, scale_cusp, end_rows: end_rows.to_vec(), bordered }
    }

    pub fn dim(&self) -> usize {
        self.layout.n + usize::from(self.bordered)
    }

    pub fn end_rows(&self) -> &[EndRow] {
        &self.end_rows
    }

    /// Right-hand side from `b` at PDE nodes, zero interpolation data and
    /// modal end data (`end[j][k]`). The bordered row gets `border`.
    pub fn rhs(&self, b: &ScalarField, end: &[Vec<f64>], border: f64) -> Vec<f64> {
        let atlas = &self.atlas;
        let mut v = vec![0.0; self.dim()];
        for (r, &k) in self.layout.core_nodes.iter().enumerate() {
            if atlas.core.class[k] == NodeClass::Interior {
                v[r] = self.scale_core[k] * b.core[k];
            }
        }
        for (j, ch) in atlas.cusps.iter().enumerate() {
            let nt = ch.n_theta();
            for i in 1..ch.n_s - 1 {
                for k in 0..nt {
                    let mut acc = 0.0;
                    for m in 0..nt {
                        acc += ch.fourier.analysis(k, m) * self.scale_cusp[j][i * nt + m] * b.cusps[j][i * nt + m];
                    }
                    v[self.layout.cusp(atlas, j, i, k)] = acc;
                }
            }
            for k in 0..nt {
                v[self.layout.cusp(atlas, j, ch.n_s - 1, k)] = end[j][k];
            }
        }
        if self.bordered {
            v[self.layout.n] = border;
        }
        v
    }

    /// Solution vector to a nodal field; returns the multiplier if bordered.
    pub fn to_field(&self, x: &[f64]) -> (ScalarField, Option<f64>) {
        let atlas = &self.atlas;
        let mut f = ScalarField::zeros(atlas);
        for (r, &k) in self.layout.core_nodes.iter().enumerate() {
            f.core[k] = x[r];
        }
        for (j, ch) in atlas.cusps.iter().enumerate() {
            let nt = ch.n_theta();
            let o = self.layout.cusp_offset[j];
            for i in 0..ch.n_s {
                ch.fourier.synthesize(&x[o + i * nt..o + (i + 1) * nt], &mut f.cusps[j][i * nt..(i + 1) * nt]);
            }
        }
        f.fill_inactive();
        (f, self.bordered.then(|| x[self.layout.n]))
    }

    pub fn from_field(&self, f: &ScalarField) -> Vec<f64> {
        let atlas = &self.atlas;
        let mut x = vec![0.0; self.dim()];
        for (r, &k) in self.layout.core_nodes.iter().enumerate() {
            x[r] = f.core[k];
        }
        for (j, ch) in atlas.cusps.iter().enumerate() {
            let nt = ch.n_theta();
            let o = self.layout.cusp_offset[j];
            for i in 0..ch.n_s {
                ch.fourier.analyze(&f.cusps[j][i * nt..(i + 1) * nt], &mut x[o + i * nt..o + (i + 1) * nt]);
            }
        }
        x
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for t in &self.triplets {
            y[t.row] += t.val * x[t.col];
        }
        y
    }

    pub fn factorize(&self, kind: SolverKind) -> Result<Factorization> {
        faer::set_global_parallelism(faer::Par::Seq);
        match kind {
            SolverKind::Direct if self.bordered => self.factorize_bordered(),
            SolverKind::Direct => {
                let n = self.dim();
                let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &self.triplets)
                    .map_err(|e| FlowError::Solver(format!("{e:?}")))?;
                let lu = m.sp_lu().map_err(|e| FlowError::Solver(format!("{e:?}")))?;
                Ok(Factorization { inner: Inner::Direct(lu), n })
            }
            SolverKind::Schwarz { tol, max_sweeps } => {
                if self.bordered {
                    return Err(FlowError::Solver("bordered systems need the direct solver".into()));
                }
                let ranges = self.layout.blocks();
                let block_of = |i: usize| ranges.iter().position(|r| r.contains(&i)).unwrap();
                let mut inner: Vec<Vec<Triplet<usize, usize, f64>>> = vec![Vec::new(); ranges.len()];
                let mut coupling: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); ranges.len()];
                for t in &self.triplets {
                    let br = block_of(t.row);
                    let bc = block_of(t.col);
                    let lo = ranges[br].start;
                    if br == bc {
                        inner[br].push(Triplet::new(t.row - lo, t.col - lo, t.val));
                    } else {
                        coupling[br].push((t.row - lo, t.col, t.val));
                    }
                }
                let mut blocks = Vec::new();
                for (b, r) in ranges.iter().enumerate() {
                    let len = r.len();
                    let m = SparseColMat::<usize, f64>::try_new_from_triplets(len, len, &inner[b])
                        .map_err(|e| FlowError::Solver(format!("{e:?}")))?;
                    blocks.push(m.sp_lu().map_err(|e| FlowError::Solver(format!("{e:?}")))?);
                }
                let mut interface: Vec<usize> = Vec::new();
                for (b, c) in coupling.iter().enumerate() {
                    interface.extend(c.iter().map(|e| e.0 + ranges[b].start));
                }
                interface.sort_unstable();
                interface.dedup();
                Ok(Factorization {
                    inner: Inner::Schwarz {
                        ranges,
                        blocks,
                        coupling,
                        interface,
                        triplets: self.triplets.clone(),
                        tol,
                        max_sweeps,
                    },
                    n: self.dim(),
                })
            }
        }
    }
}

impl CompositeSystem {
    /// The dense border row and column wreck the fill of a sparse LU, so the
    /// bordered system is reduced to the sparse block with one PDE row `p`
    /// replaced by `x_p = 0`, plus a 2x2 solve for the multiplier and the
    /// kernel component.
    fn factorize_bordered(&self) -> Result<Factorization> {
        let n = self.layout.n;
        let p = (0..self.layout.core_nodes.len())
            .find(|&r| self.atlas.core.class[self.layout.core_nodes[r]] == NodeClass::Interior)
            .ok_or_else(|| FlowError::Solver("no interior core row to pin".into()))?;
        let mut sparse = Vec::with_capacity(self.triplets.len());
        let mut row_p = Vec::new();
        let mut column = vec![0.0; n];
        let mut weights = Vec::new();
        for t in &self.triplets {
            if t.row == n {
                weights.push((t.col, t.val));
            } else if t.col == n {
                column[t.row] += t.val;
            } else if t.row == p {
                row_p.push((t.col, t.val));
            } else {
                sparse.push(*t);
            }
        }
        sparse.push(Triplet::new(p, p, 1.0));
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &sparse)
            .map_err(|e| FlowError::Solver(format!("{e:?}")))?;
        let lu = m.sp_lu().map_err(|e| FlowError::Solver(format!("{e:?}")))?;
        let solve = |v: &[f64]| -> Vec<f64> {
            let x = lu.solve(&Mat::from_fn(n, 1, |i, _| v[i]));
            (0..n).map(|i| x[(i, 0)]).collect()
        };
        let c_p = column[p];
        column[p] = 0.0;
        let h = solve(&column);
        let mut e = vec![0.0; n];
        e[p] = 1.0;
        let z = solve(&e);
        let bordered = Bordered { p, row_p, weights, c_p, h, z };
        if bordered.coefficients().iter().flatten().any(|v| !v.is_finite()) {
            return Err(FlowError::Solver("singular bordered reduction".into()));
        }
        Ok(Factorization { inner: Inner::Bordered(lu, bordered), n: n + 1 })
    }
}

struct Bordered {
    p: usize,
    row_p: Vec<(usize, f64)>,
    weights: Vec<(usize, f64)>,
    c_p: f64,
    h: Vec<f64>,
    z: Vec<f64>,
}

impl Bordered {
    fn row(&self, x: &[f64]) -> f64 {
        self.row_p.iter().map(|&(c, v)| v * x[c]).sum()
    }

    fn weigh(&self, x: &[f64]) -> f64 {
        self.weights.iter().map(|&(c, v)| v * x[c]).sum()
    }

    fn coefficients(&self) -> [[f64; 2]; 2] {
        [[self.c_p - self.row(&self.h), self.row(&self.z)], [-self.weigh(&self.h), self.weigh(&self.z)]]
    }

    /// `x = g - m h + α z` where `g` solves the pinned system.
    fn solve(&self, lu: &Lu<usize, f64>, rhs: &[f64]) -> Vec<f64> {
        let n = self.h.len();
        let mut b = Mat::from_fn(n, 1, |i, _| rhs[i]);
        b[(self.p, 0)] = 0.0;
        let y = lu.solve(&b);
        let g: Vec<f64> = (0..n).map(|i| y[(i, 0)]).collect();
        let [[a, b1], [c, d]] = self.coefficients();
        let r0 = rhs[self.p] - self.row(&g);
        let r1 = rhs[n] - self.weigh(&g);
        let det = a * d - b1 * c;
        let m = (r0 * d - b1 * r1) / det;
        let alpha = (a * r1 - c * r0) / det;
        let mut x: Vec<f64> = (0..n).map(|i| g[i] - m * self.h[i] + alpha * self.z[i]).collect();
        x.push(m);
        x
    }
}

enum Inner {
    Direct(Lu<usize, f64>),
    Bordered(Lu<usize, f64>, Bordered),
    Schwarz {
        ranges: Vec<std::ops::Range<usize>>,
        blocks: Vec<Lu<usize, f64>>,
        coupling: Vec<Vec<(usize, usize, f64)>>,
        interface: Vec<usize>,
        triplets: Vec<Triplet<usize, usize, f64>>,
        tol: f64,
        max_sweeps: usize,
    },
}

pub struct Factorization {
    inner: Inner,
    n: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SolveStats {
    pub sweeps: usize,
    pub interface_residual: f64,
}

impl Factorization {
    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        assert_eq!(rhs.len(), self.n);
        match &self.inner {
            Inner::Direct(lu) => {
                let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
                let x = lu.solve(&b);
                let v: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(FlowError::Solver("non-finite solution".into()));
                }
                Ok((v, SolveStats::default()))
            }
            Inner::Bordered(lu, b) => {
                let v = b.solve(lu, rhs);
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(FlowError::Solver("non-finite solution".into()));
                }
                Ok((v, SolveStats::default()))
            }
            Inner::Schwarz { ranges, blocks, coupling, interface, triplets, tol, max_sweeps } => {
                let mut x = vec![0.0; self.n];
                let mut res = f64::INFINITY;
                for sweep in 1..=*max_sweeps {
                    for (b, r) in ranges.iter().enumerate() {
                        let mut local = Mat::from_fn(r.len(), 1, |i, _| rhs[r.start + i]);
                        for &(row, col, v) in &coupling[b] {
                            local[(row, 0)] -= v * x[col];
                        }
                        let y = blocks[b].solve(&local);
                        for i in 0..r.len() {
                            x[r.start + i] = y[(i, 0)];
                        }
                    }
                    let mut ax = vec![0.0; self.n];
                    for t in triplets {
                        ax[t.row] += t.val * x[t.col];
                    }
                    res = interface.iter().map(|&i| (rhs[i] - ax[i]).abs()).fold(0.0, f64::max);
                    if !res.is_finite() {
                        break;
                    }
                    if res <= *tol {
                        return Ok((x, SolveStats { sweeps: sweep, interface_residual: res }));
                    }
                }
                Err(FlowError::Solver(format!(
                    "alternating Schwarz stalled after {max_sweeps} sweeps, interface residual {res:.3e}"
                )))
            }
        }
    }
}

/// Total weight `2π e^{-s_hi}` of the analytic tail of one end.
pub fn tail_weight(s_hi: f64) -> f64 {
    2.0 * PI * (-s_hi).exp()
}
