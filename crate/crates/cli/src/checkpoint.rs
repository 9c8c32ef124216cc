//! Field dumps: one line of JSON describing the charts, then the raw arrays
//! as little-endian `f64`.
//!
//! Each field is stored as the core chart (`n * n` values, index `i * n + j`
//! at `x = i/n, y = j/n`) followed by every cusp chart in end order
//! (`n_s * n_theta` values, ring-major, node `m` at `θ = 2πm / n_theta`).

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use cuspflow::flow::FlowState;
use cuspflow::{BackgroundMetric, ChartAtlas, ConformalMetric, GridConfig, ScalarField, SurfaceSpec};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "cuspflow-field";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartShape {
    pub name: String,
    pub shape: [usize; 2],
    /// Coordinate range of each axis; the periodic ones are half-open.
    pub bounds: [[f64; 2]; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub dtype: String,
    pub surface: SurfaceSpec,
    pub grid: GridConfig,
    pub charts: Vec<ChartShape>,
    pub fields: Vec<String>,
    pub t: f64,
    pub rho: f64,
    pub lambda: Vec<f64>,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    /// One flat array per entry of `header.fields`.
    pub data: Vec<Vec<f64>>,
}

fn charts(atlas: &ChartAtlas) -> Vec<ChartShape> {
    let n = atlas.core.n;
    let mut out = vec![ChartShape { name: "core".into(), shape: [n, n], bounds: [[0.0, 1.0], [0.0, 1.0]] }];
    for ch in &atlas.cusps {
        out.push(ChartShape {
            name: format!("cusp{}", ch.end),
            shape: [ch.n_s, ch.n_theta()],
            bounds: [[ch.s_lo, ch.s_hi], [0.0, 2.0 * PI]],
        });
    }
    out
}

fn flatten(f: &ScalarField) -> Vec<f64> {
    let mut v = f.core.clone();
    for c in &f.cusps {
        v.extend_from_slice(c);
    }
    v
}

impl Checkpoint {
    pub fn new(atlas: &ChartAtlas, fields: &[(&str, &ScalarField)], t: f64, rho: f64, lambda: Vec<f64>, dt: f64) -> Self {
        Self {
            header: Header {
                format: FORMAT.into(),
                version: VERSION,
                endianness: "little".into(),
                dtype: "f64".into(),
                surface: atlas.spec.clone(),
                grid: atlas.grid.clone(),
                charts: charts(atlas),
                fields: fields.iter().map(|(n, _)| n.to_string()).collect(),
                t,
                rho,
                lambda,
                dt,
            },
            data: fields.iter().map(|(_, f)| flatten(f)).collect(),
        }
    }

    /// `phi = log u` and the co-evolved potential `f`.
    pub fn from_state(state: &FlowState) -> Self {
        Self::new(
            state.phi.atlas(),
            &[("phi", &state.phi), ("f", &state.f)],
            state.t,
            state.rho,
            state.lambda.clone(),
            state.dt,
        )
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for field in &self.data {
            for v in field {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end()).context("bad checkpoint header")?;
        ensure!(header.format == FORMAT, "not a field dump (format `{}`)", header.format);
        ensure!(header.version == VERSION, "unsupported field dump version {}", header.version);
        ensure!(header.endianness == "little" && header.dtype == "f64", "unsupported element type");
        let per_field: usize = header.charts.iter().map(|c| c.shape[0] * c.shape[1]).sum();
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let expected = per_field * header.fields.len() * 8;
        if bytes.len() != expected {
            bail!("checkpoint body has {} bytes, header implies {expected}", bytes.len());
        }
        let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let data = values.chunks(per_field.max(1)).map(<[f64]>::to_vec).collect();
        Ok(Self { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).with_context(|| format!("cannot open checkpoint {}", path.display()))?;
        Self::read(file).with_context(|| format!("cannot read checkpoint {}", path.display()))
    }

    pub fn atlas(&self) -> Result<Arc<ChartAtlas>> {
        let atlas = ChartAtlas::new(self.header.surface.clone(), self.header.grid.clone())?;
        ensure!(charts(&atlas) == self.header.charts, "chart shapes in the header do not match its grid");
        Ok(atlas)
    }

    pub fn field(&self, atlas: &Arc<ChartAtlas>, name: &str) -> Result<ScalarField> {
        let i = self.header.fields.iter().position(|f| f == name).with_context(|| format!("no field `{name}`"))?;
        let flat = &self.data[i];
        let core_len = atlas.core.len();
        ensure!(flat.len() >= core_len, "field `{name}` is truncated");
        let mut cusps = Vec::new();
        let mut at = core_len;
        for ch in &atlas.cusps {
            ensure!(flat.len() >= at + ch.len(), "field `{name}` is truncated");
            cusps.push(flat[at..at + ch.len()].to_vec());
            at += ch.len();
        }
        Ok(ScalarField::from_parts(atlas, flat[..core_len].to_vec(), cusps)?)
    }

    /// The metric `e^phi · ĝ` with the stored end limits.
    pub fn metric(&self) -> Result<ConformalMetric> {
        let atlas = self.atlas()?;
        let bg = BackgroundMetric::new(&atlas);
        let u = self.field(&atlas, "phi")?.map(f64::exp);
        Ok(ConformalMetric::new(&bg, u, self.header.lambda.clone())?)
    }
}
