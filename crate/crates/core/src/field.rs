use std::sync::Arc;

use crate::error::{FlowError, Result};
use crate::geometry::{ChartAtlas, NodeClass, SurfacePoint};

/// Nodal values on every chart of an atlas. Cusp arrays are ring-major:
/// index `i * n_theta + m` for ring `i`, angle node `m`.
#[derive(Clone, Debug)]
pub struct ScalarField {
    atlas: Arc<ChartAtlas>,
    pub core: Vec<f64>,
    pub cusps: Vec<Vec<f64>>,
    generation: u64,
}

impl ScalarField {
    pub fn constant(atlas: &Arc<ChartAtlas>, c: f64) -> Self {
        Self {
            atlas: atlas.clone(),
            core: vec![c; atlas.core.len()],
            cusps: atlas.cusps.iter().map(|ch| vec![c; ch.len()]).collect(),
            generation: 0,
        }
    }

    pub fn zeros(atlas: &Arc<ChartAtlas>) -> Self {
        Self::constant(atlas, 0.0)
    }

    /// Evaluates `f` at every core node outside the holes and every cusp
    /// node, then fills the hole nodes from the cusp charts.
    pub fn from_fn(atlas: &Arc<ChartAtlas>, f: impl Fn(SurfacePoint) -> f64) -> Self {
        let mut out = Self::zeros(atlas);
        for k in 0..atlas.core.len() {
            if atlas.core.class[k] != NodeClass::Inactive {
                let [x, y] = atlas.core.coords(k);
                out.core[k] = f(SurfacePoint::Core { x, y });
            }
        }
        for (end, ch) in atlas.cusps.iter().enumerate() {
            let nt = ch.n_theta();
            for i in 0..ch.n_s {
                let s = ch.s(i);
                for (m, &theta) in ch.fourier.theta().iter().enumerate() {
                    out.cusps[end][i * nt + m] = f(SurfacePoint::Cusp { end, s, theta });
                }
            }
        }
        out.fill_inactive();
        out
    }

    /// Wraps raw chart arrays, checking their lengths against the atlas.
    pub fn from_parts(atlas: &Arc<ChartAtlas>, core: Vec<f64>, cusps: Vec<Vec<f64>>) -> Result<Self> {
        let shapes_match = core.len() == atlas.core.len()
            && cusps.len() == atlas.cusps.len()
            && cusps.iter().zip(&atlas.cusps).all(|(v, ch)| v.len() == ch.len());
        if !shapes_match {
            return Err(FlowError::Format("field arrays do not match the atlas".into()));
        }
        Ok(Self { atlas: atlas.clone(), core, cusps, generation: 0 })
    }

    pub fn atlas(&self) -> &Arc<ChartAtlas> {
        &self.atlas
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn bump(&mut self) {
        self.generation += 1;
    }

    pub fn same_atlas(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.atlas, &other.atlas)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.core.iter_mut().for_each(|v| *v = f(*v));
        out.cusps.iter_mut().flatten().for_each(|v| *v = f(*v));
        out.generation = 0;
        out
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(self.same_atlas(other), "fields live on different atlases");
        let mut out = self.clone();
        for (a, b) in out.core.iter_mut().zip(&other.core) {
            *a = f(*a, *b);
        }
        for (ca, cb) in out.cusps.iter_mut().zip(&other.cusps) {
            for (a, b) in ca.iter_mut().zip(cb) {
                *a = f(*a, *b);
            }
        }
        out.generation = 0;
        out
    }

    pub fn ring(&self, end: usize, i: usize) -> &[f64] {
        let nt = self.atlas.cusps[end].n_theta();
        &self.cusps[end][i * nt..(i + 1) * nt]
    }

    pub fn ring_mean(&self, end: usize, i: usize) -> f64 {
        let r = self.ring(end, i);
        r.iter().sum::<f64>() / r.len() as f64
    }

    /// Values at the nodes of the discrete PDE (core interior, cusp rings
    /// `1..n_s-1`) that are at least `margin` stencil widths away from any
    /// chart boundary, together with a chart tag.
    pub fn interior_values(&self, margin: usize) -> Vec<f64> {
        let mut out = Vec::new();
        let mask = interior_mask(&self.atlas, margin);
        for (k, &v) in self.core.iter().enumerate() {
            if mask.core[k] {
                out.push(v);
            }
        }
        for (end, ch) in self.atlas.cusps.iter().enumerate() {
            let nt = ch.n_theta();
            for i in mask.cusp_rings[end].clone() {
                out.extend_from_slice(&self.cusps[end][i * nt..(i + 1) * nt]);
            }
        }
        out
    }

    /// Max of `|v|` over nodes carrying an independent value (core interior
    /// and fringe, all cusp nodes).
    pub fn sup_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (k, v) in self.core.iter().enumerate() {
            if self.atlas.core.class[k] != NodeClass::Inactive {
                m = m.max(v.abs());
            }
        }
        for v in self.cusps.iter().flatten() {
            m = m.max(v.abs());
        }
        m
    }

    /// Fills hole nodes of the core by interpolation from the cusp charts.
    pub(crate) fn fill_inactive(&mut self) {
        let atlas = self.atlas.clone();
        for fr in &atlas.fringe {
            if fr.class == NodeClass::Inactive {
                self.core[fr.node] = self.eval_cusp_stencil(&fr.stencil);
            }
        }
    }

    pub(crate) fn eval_cusp_stencil(&self, st: &crate::geometry::CuspStencil) -> f64 {
        let ch = &self.atlas.cusps[st.end];
        let nt = ch.n_theta();
        let data = &self.cusps[st.end];
        let mut v = 0.0;
        for (a, &wa) in st.ws.iter().enumerate() {
            let base = (st.ring + a) * nt;
            let ring: f64 = st.w_theta.iter().zip(&data[base..base + nt]).map(|(w, x)| w * x).sum();
            v += wa * ring;
        }
        v
    }

    pub(crate) fn eval_core_stencil(&self, st: &crate::geometry::CoreStencil) -> f64 {
        st.nodes.iter().zip(&st.w).map(|(&k, w)| w * self.core[k]).sum()
    }
}

/// Which nodes count as "interior" for residual sups.
pub struct InteriorMask {
    pub core: Vec<bool>,
    pub cusp_rings: Vec<std::ops::Range<usize>>,
}

pub fn interior_mask(atlas: &ChartAtlas, margin: usize) -> InteriorMask {
    let core = &atlas.core;
    let mut ok: Vec<bool> = core.class.iter().map(|c| *c == NodeClass::Interior).collect();
    for _ in 0..margin {
        let prev = ok.clone();
        for k in 0..core.len() {
            if prev[k] && core.neighbors(k).iter().any(|&q| !prev[q]) {
                ok[k] = false;
            }
        }
    }
    let cusp_rings = atlas.cusps.iter().map(|ch| (1 + margin)..(ch.n_s - 1 - margin)).collect();
    InteriorMask { core: ok, cusp_rings }
}
