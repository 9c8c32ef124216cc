use std::sync::Arc;

use crate::error::{FlowError, Result};
use crate::field::ScalarField;
use crate::geometry::{ChartAtlas, NodeClass};

/// The fixed complete background: flat in the core, the exact cusp model on
/// every cusp chart, glued by a radial blend outside the cusp footprints.
#[derive(Debug)]
pub struct BackgroundMetric {
    atlas: Arc<ChartAtlas>,
    /// `ŵ` at core nodes (the background is `ŵ |dx|²`).
    pub w_core: Vec<f64>,
    pub curvature_core: Vec<f64>,
}

impl BackgroundMetric {
    pub fn new(atlas: &Arc<ChartAtlas>) -> Arc<Self> {
        let n = atlas.core.len();
        let mut w_core = vec![0.0; n];
        let mut curvature_core = vec![-2.0; n];
        for k in 0..n {
            if atlas.core.class[k] == NodeClass::Inactive {
                continue;
            }
            let (psi, r) = atlas.background_at(atlas.core.coords(k));
            w_core[k] = (2.0 * psi).exp();
            curvature_core[k] = r;
        }
        Arc::new(Self { atlas: atlas.clone(), w_core, curvature_core })
    }

    pub fn atlas(&self) -> &Arc<ChartAtlas> {
        &self.atlas
    }

    /// `R̂` on every chart; exactly `-2` on the cusp charts.
    pub fn curvature(&self) -> ScalarField {
        let mut f = ScalarField::constant(&self.atlas, -2.0);
        f.core.copy_from_slice(&self.curvature_core);
        f
    }
}

/// `g = u · ĝ` with `u > 0` and per-end limits `u → u_j^∞`.
#[derive(Clone, Debug)]
pub struct ConformalMetric {
    pub background: Arc<BackgroundMetric>,
    pub u: ScalarField,
    pub end_limits: Vec<f64>,
}

impl ConformalMetric {
    pub fn new(background: &Arc<BackgroundMetric>, u: ScalarField, end_limits: Vec<f64>) -> Result<Self> {
        if !Arc::ptr_eq(u.atlas(), background.atlas()) {
            return Err(FlowError::Parameter("factor and background use different atlases".into()));
        }
        if end_limits.len() != background.atlas().ends() {
            return Err(FlowError::Parameter("one end limit per puncture is required".into()));
        }
        if let Some(v) = end_limits.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(FlowError::Domain(format!("end limit {v} is not positive")));
        }
        let bad = u
            .core
            .iter()
            .enumerate()
            .filter(|(k, _)| background.atlas().core.class[*k] != NodeClass::Inactive)
            .map(|(_, v)| *v)
            .chain(u.cusps.iter().flatten().copied())
            .find(|v| !(v.is_finite() && *v > 0.0));
        if let Some(v) = bad {
            return Err(FlowError::Domain(format!("conformal factor must be positive, found {v}")));
        }
        Ok(Self { background: background.clone(), u, end_limits })
    }

    /// The background itself (`u ≡ 1`, limits 1).
    pub fn background_only(background: &Arc<BackgroundMetric>) -> Self {
        let atlas = background.atlas();
        Self {
            background: background.clone(),
            u: ScalarField::constant(atlas, 1.0),
            end_limits: vec![1.0; atlas.ends()],
        }
    }

    pub fn atlas(&self) -> &Arc<ChartAtlas> {
        self.background.atlas()
    }

    /// Total factor against `|dx|²` at a core node.
    pub fn core_factor(&self, k: usize) -> f64 {
        self.background.w_core[k] * self.u.core[k]
    }

    pub fn log_u(&self) -> ScalarField {
        self.u.map(f64::ln)
    }
}
