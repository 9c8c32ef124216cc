//! Run configuration: a TOML file plus dotted-path overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cuspflow::flow::FlowConfig;
use cuspflow::initial::InitialData;
use cuspflow::{ChartAtlas, GridConfig, SurfaceSpec};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Environment variable that relative output directories are resolved against.
pub const OUTPUT_ROOT_VAR: &str = "CUSPFLOW_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub surface: SurfaceSpec,
    #[serde(default)]
    pub discretization: GridConfig,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Checkpoint,
    Svg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Keep every `cadence`-th record in the CSV; the last one is always kept.
    pub cadence: usize,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("runs/default"),
            cadence: 1,
            formats: vec![Format::Csv, Format::Json, Format::Checkpoint, Format::Svg],
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

impl RunConfig {
    /// Reads `path`, applies `key=value` overrides and validates everything
    /// that can be checked without building the grid.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text, overrides).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let config: Self = if overrides.is_empty() {
            // keeps line and column in the diagnostic
            toml::from_str(text).map_err(|e| anyhow!("{e}"))?
        } else {
            let mut table: Table = text.parse().map_err(|e| anyhow!("{e}"))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| anyhow!("field `{}`: {}", e.path(), e.inner()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ChartAtlas::check_layout(&self.surface, &self.discretization)?;
        self.initial.validate()?;
        if self.initial.ends.len() > self.surface.ends() {
            bail!("initial.ends has {} entries for {} ends", self.initial.ends.len(), self.surface.ends());
        }
        self.flow.validate()?;
        if self.output.cadence == 0 {
            bail!("output.cadence must be at least 1");
        }
        Ok(())
    }

    /// The output directory, resolved against `CUSPFLOW_OUTPUT_ROOT` when relative.
    pub fn output_dir(&self) -> PathBuf {
        resolve_output(&self.output.directory)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// `a.b.c=value`. The value is read as a TOML value and falls back to a bare
/// string, so `flow.rho_mode=area_preserving` works without quotes.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override `{assignment}` has an empty key segment");
    }
    let value = match format!("v = {}", raw.trim()).parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{p}` is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
