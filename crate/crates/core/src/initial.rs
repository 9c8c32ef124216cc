//! Initial conformal factors: end limits `2/σ_j` blended into the core,
//! compact core bumps, and decaying angular perturbations on the ends.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::field::ScalarField;
use crate::geometry::{cusp_to_core, periodic_distance, radius_of, s_of_radius, smoothstep, SurfacePoint};
use crate::metric::{BackgroundMetric, ConformalMetric};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    /// `amplitude · exp(1 - 1/(1 - q²))`, `q` the distance over the radius.
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let q = periodic_distance(x, self.center) / self.radius;
        if q >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - 1.0 / (1.0 - q * q)).exp()
        }
    }
}

/// `a s^{-μ} cos(kθ)` on one end, switched on smoothly over `[s_lo, s_lo + 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndPerturbation {
    pub amplitude: f64,
    pub k: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    #[serde(default)]
    pub bumps: Vec<Bump>,
    /// One entry per end; missing entries mean no perturbation.
    #[serde(default)]
    pub ends: Vec<EndPerturbation>,
}

impl InitialData {
    pub fn validate(&self) -> Result<()> {
        for b in &self.bumps {
            if !(b.radius > 0.0 && b.radius < 0.5) {
                return Err(FlowError::Parameter(format!("bump radius {} must lie in (0, 0.5)", b.radius)));
            }
            if !(b.amplitude > -1.0) {
                return Err(FlowError::Parameter(format!("bump amplitude {} must exceed -1", b.amplitude)));
            }
        }
        Ok(())
    }

    /// Factor relative to the background:
    /// `u₀ = κ (1 + Σ bumps) + Σ_j χ(s) a_j s^{-μ} cos(k_j θ)`, where `κ`
    /// equals `2/σ_j` on end `j` and 1 away from the punctures.
    pub fn build(&self, background: &Arc<BackgroundMetric>) -> Result<ConformalMetric> {
        self.validate()?;
        let atlas = background.atlas().clone();
        let spec = &atlas.spec;
        let mu = spec.mu;
        for b in &self.bumps {
            if spec.punctures.iter().any(|p| periodic_distance(*p, b.center) < b.radius) {
                return Err(FlowError::Parameter(format!(
                    "bump at {:?} covers a puncture and would change its end limit",
                    b.center
                )));
            }
        }
        let limits: Vec<f64> = spec.sigma.iter().map(|s| 2.0 / s).collect();
        let r_lo = radius_of(atlas.grid.s_lo);
        let r_out = atlas.grid.blend_outer_radius;
        let s_lo = atlas.grid.s_lo;
        let pert = |end: usize, s: f64, theta: f64| {
            self.ends.get(end).map_or(0.0, |p| {
                smoothstep(s - s_lo).0 * p.amplitude * s.powf(-mu) * (p.k as f64 * theta).cos()
            })
        };
        let u = ScalarField::from_fn(&atlas, |p| match p {
            SurfacePoint::Core { x, y } => {
                let pos = [x, y];
                let bumps: f64 = self.bumps.iter().map(|b| b.eval(pos)).sum();
                match atlas.locate(pos) {
                    Some(nr) => {
                        let beta = 1.0 - smoothstep((nr.r - r_lo) / (r_out - r_lo)).0;
                        let kappa = 1.0 + beta * (limits[nr.end] - 1.0);
                        let v = if nr.r > 0.0 && nr.r < r_lo { pert(nr.end, s_of_radius(nr.r), nr.theta) } else { 0.0 };
                        kappa * (1.0 + bumps) + v
                    }
                    None => 1.0 + bumps,
                }
            }
            SurfacePoint::Cusp { end, s, theta } => {
                let pos = cusp_to_core(spec.punctures[end], s, theta);
                let bumps: f64 = self.bumps.iter().map(|b| b.eval(pos)).sum();
                limits[end] * (1.0 + bumps) + pert(end, s, theta)
            }
        });
        ConformalMetric::new(background, u, limits)
    }
}
