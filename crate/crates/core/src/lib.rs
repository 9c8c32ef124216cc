//! Normalized Ricci flow on flat tori with finitely many punctures, each
//! opened up into a complete hyperbolic cusp.

pub mod diagnostics;
pub mod error;
pub mod field;
pub mod flow;
pub mod fourier;
pub mod geometry;
pub mod initial;
pub mod linear;
pub mod metric;
pub mod operators;
pub mod potential;

pub use error::{FlowError, Result};
pub use field::ScalarField;
pub use geometry::{ChartAtlas, ChartId, GridConfig, SurfacePoint, SurfaceSpec};
pub use metric::{BackgroundMetric, ConformalMetric};
