//! The four subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use cuspflow::diagnostics::{fit_exponential_rate, transient_end, RateFit, TimeSeriesRecord};
use cuspflow::flow::{run, RunStatus};
use cuspflow::geometry::periodic_distance;
use cuspflow::operators::{gauss_bonnet_defect, green_identity_residual, integrate, laplacian, sup_over};
use cuspflow::potential::{flux_balance, solve_potential};
use cuspflow::{BackgroundMetric, ChartAtlas, ConformalMetric, ScalarField, SurfacePoint};
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{Format, RunConfig};
use crate::series;
use crate::svg::{line_chart, Series};

/// Maps to the process exit code: 1 for bad input, 2 for failures at run time.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Runtime(e) => e,
        }
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;

fn invalid<T>(r: Result<T>) -> Outcome<T> {
    r.map_err(Failure::Validation)
}

fn runtime<T>(r: Result<T>) -> Outcome<T> {
    r.map_err(Failure::Runtime)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn build(config: &RunConfig) -> Result<(Arc<ChartAtlas>, Arc<BackgroundMetric>, ConformalMetric)> {
    let atlas = ChartAtlas::new(config.surface.clone(), config.discretization.clone())?;
    let bg = BackgroundMetric::new(&atlas);
    let initial = config.initial.build(&bg)?;
    Ok((atlas, bg, initial))
}

#[derive(Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: &str, value: f64, tolerance: f64) -> Check {
    Check { name: name.into(), value, tolerance, pass: value.is_finite() && value <= tolerance }
}

/// Core point farthest from every puncture, on a coarse scan.
fn far_point(atlas: &ChartAtlas) -> [f64; 2] {
    let mut best = ([0.0, 0.0], -1.0);
    for i in 0..20 {
        for j in 0..20 {
            let p = [(i as f64 + 0.5) / 20.0, (j as f64 + 0.5) / 20.0];
            let d = atlas.spec.punctures.iter().map(|&q| periodic_distance(p, q)).fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (p, d);
            }
        }
    }
    best.0
}

/// Operator self-tests on the configured grid.
pub fn self_tests(atlas: &Arc<ChartAtlas>, bg: &Arc<BackgroundMetric>, initial: &ConformalMetric) -> Vec<Check> {
    let m = ConformalMetric::background_only(bg);
    let mut out = Vec::new();

    let lc = laplacian(&ScalarField::constant(atlas, 3.0), initial);
    out.push(check("laplacian_of_constant", sup_over(atlas, &lc, f64::abs), 1e-9));

    // Δ s = -1 on the cusp model
    let s_field = ScalarField::from_fn(atlas, |p| match p {
        SurfacePoint::Cusp { s, .. } => s,
        SurfacePoint::Core { .. } => 0.0,
    });
    let ls = laplacian(&s_field, &m);
    let mut err: f64 = 0.0;
    for (end, ch) in atlas.cusps.iter().enumerate() {
        for i in 2..ch.n_s - 2 {
            for v in ls.ring(end, i) {
                err = err.max((v + 1.0).abs());
            }
        }
    }
    out.push(check("laplacian_of_cusp_coordinate", err, 1e-8));

    // exact for compactly supported core functions
    let c = far_point(atlas);
    let reach = atlas.spec.punctures.iter().map(|&q| periodic_distance(c, q)).fold(f64::INFINITY, f64::min)
        - atlas.grid.blend_outer_radius;
    let radius = (0.5 * reach).clamp(0.02, 0.2);
    let bump = |dx: f64, dy: f64| {
        ScalarField::from_fn(atlas, move |p| match p {
            SurfacePoint::Core { x, y } => {
                let q = periodic_distance([x, y], [c[0] + dx, c[1] + dy]) / radius;
                if q < 1.0 {
                    (1.0 - 1.0 / (1.0 - q * q)).exp()
                } else {
                    0.0
                }
            }
            SurfacePoint::Cusp { .. } => 0.0,
        })
    };
    let (a, b) = (bump(0.0, 0.0), bump(0.25 * radius, 0.1 * radius));
    let scale = integrate(&laplacian(&b, &m).zip_map(&a, |l, v| (l * v).abs()), &m).max(1e-300);
    out.push(check("green_identity", green_identity_residual(&a, &b, &m).abs() / scale, 1e-10));

    let chi = atlas.spec.euler_characteristic().abs().max(1.0);
    out.push(check("gauss_bonnet_background", gauss_bonnet_defect(&m).abs(), 5e-3 * chi));
    out.push(check("gauss_bonnet_initial", gauss_bonnet_defect(initial).abs(), 5e-3 * chi));
    out
}

pub fn validate(config_path: &Path, overrides: &[String]) -> Outcome<bool> {
    let config = invalid(RunConfig::load(config_path, overrides))?;
    let (atlas, bg, initial) = invalid(build(&config))?;
    let checks = self_tests(&atlas, &bg, &initial);
    let pass = checks.iter().all(|c| c.pass);
    let report = json!({
        "config": config_path.display().to_string(),
        "pass": pass,
        "checks": checks,
    });
    let dir = config.output_dir();
    runtime(std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display())))?;
    runtime(write_json(&dir.join("validate.json"), &report))?;
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    Ok(pass)
}

#[derive(Serialize)]
struct Fit {
    window: [f64; 2],
    #[serde(flatten)]
    fit: RateFit,
}

fn fit_channel(records: &[TimeSeriesRecord], t0: f64, y: impl Fn(&TimeSeriesRecord) -> f64) -> Option<Fit> {
    let t1 = records.last()?.t;
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let v: Vec<f64> = records.iter().map(y).collect();
    fit_exponential_rate(&t, &v, (t0, t1)).ok().map(|fit| Fit { window: [t0, t1], fit })
}

fn summary(records: &[TimeSeriesRecord], status: &str, steps: usize, error: Option<String>) -> serde_json::Value {
    let first = records.first();
    let last = records.last();
    let t0 = transient_end(records);
    let rates = t0.map(|t0| {
        json!({
            "sup_r_minus_rho": fit_channel(records, t0, |r| r.sup_r_minus_rho),
            "sup_h": fit_channel(records, t0, |r| r.sup_h),
        })
    });
    json!({
        "format": "cuspflow-summary",
        "version": 1,
        "status": status,
        "error": error,
        "steps": steps,
        "records": records.len(),
        "t": last.map(|r| r.t),
        "rho": last.map(|r| r.rho),
        "final": last.map(|r| json!({
            "sup_r_minus_rho": r.sup_r_minus_rho,
            "sup_h": r.sup_h,
            "sup_grad_f": r.sup_grad_f,
            "gauss_bonnet": r.gauss_bonnet,
            "end_curvature": r.end_curvature,
            "decay_norm": r.decay_norm,
        })),
        "area": {
            "initial": first.map(|r| r.area),
            "final": last.map(|r| r.area),
        },
        "lambda": {
            "initial": first.map(|r| r.lambda.clone()),
            "final": last.map(|r| r.lambda.clone()),
        },
        "transient_end": t0,
        "rates": rates,
    })
}

fn plots(dir: &Path, records: &[TimeSeriesRecord]) -> Result<()> {
    let pts = |f: &dyn Fn(&TimeSeriesRecord) -> f64| records.iter().map(|r| (r.t, f(r))).collect::<Vec<_>>();
    let one = |name: &str, f: &dyn Fn(&TimeSeriesRecord) -> f64| vec![Series { name: name.into(), points: pts(f) }];
    let ends = records.first().map_or(0, |r| r.lambda.len());
    let charts = [
        ("sup_r_minus_rho", line_chart("sup |R - ρ|", "t", &one("sup |R - ρ|", &|r| r.sup_r_minus_rho), true)),
        ("sup_h", line_chart("sup h", "t", &one("sup h", &|r| r.sup_h), true)),
        ("area", line_chart("area", "t", &one("A(t)", &|r| r.area), false)),
        ("gauss_bonnet", line_chart("Gauss-Bonnet defect", "t", &one("∫R dA - 4πχ", &|r| r.gauss_bonnet), false)),
        (
            "end_curvature",
            line_chart(
                "end curvature",
                "t",
                &(0..ends)
                    .map(|j| Series { name: format!("end {j}"), points: pts(&|r| r.end_curvature[j]) })
                    .collect::<Vec<_>>(),
                false,
            ),
        ),
    ];
    for (name, svg) in charts {
        let path = dir.join(format!("plot_{name}.svg"));
        std::fs::write(&path, svg).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

pub const FAILURE_MARKER: &str = "FAILED.json";

/// Runs the flow and writes its artifacts; returns the output directory.
pub fn run_command(config_path: &Path, overrides: &[String]) -> Outcome<PathBuf> {
    let config = invalid(RunConfig::load(config_path, overrides))?;
    let (atlas, _bg, initial) = invalid(build(&config))?;
    let dir = config.output_dir();
    runtime(std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display())))?;
    let _ = std::fs::remove_file(dir.join(FAILURE_MARKER));
    runtime(config.to_toml().and_then(|t| Ok(std::fs::write(dir.join("config.toml"), t)?)))?;
    let out = &config.output;
    let ends = atlas.spec.ends();

    let result = run(&initial, &config.flow, |_| {});
    let (records, state, status, steps, error) = match result {
        Ok(o) => {
            let status = match o.status {
                RunStatus::Converged => "converged",
                RunStatus::ReachedFinalTime => "reached_final_time",
            };
            (o.records, o.state, status, o.steps, None)
        }
        Err(f) => (f.records, *f.state, "failed", 0, Some(f.error.to_string())),
    };
    if out.wants(Format::Csv) {
        runtime(series::write(&dir.join("timeseries.csv"), ends, &series::thin(&records, out.cadence)))?;
    }
    if out.wants(Format::Checkpoint) {
        runtime(Checkpoint::from_state(&state).save(&dir.join("checkpoint_final.bin")))?;
    }
    if out.wants(Format::Svg) {
        runtime(plots(&dir, &records))?;
    }
    if let Some(e) = error {
        let marker = json!({
            "error": e,
            "t": state.t,
            "dt": state.dt,
            "lambda": state.lambda,
            "area": state.area,
            "records": records.len(),
            "last_record": records.last(),
        });
        runtime(write_json(&dir.join(FAILURE_MARKER), &marker))?;
        return Err(Failure::Runtime(anyhow!("flow failed at t = {}: {e}", state.t)));
    }
    if out.wants(Format::Json) {
        runtime(write_json(&dir.join("summary.json"), &summary(&records, status, steps, None)))?;
    }
    Ok(dir)
}

pub fn potential_command(config_path: &Path, overrides: &[String], checkpoint: &Path) -> Outcome<PathBuf> {
    let config = invalid(RunConfig::load(config_path, overrides))?;
    let ck = runtime(Checkpoint::load(checkpoint))?;
    let metric = runtime(ck.metric())?;
    let sol = runtime(solve_potential(&metric).map_err(anyhow::Error::from))?;
    let area = integrate(&ScalarField::constant(metric.atlas(), 1.0), &metric);
    let report = json!({
        "checkpoint": checkpoint.display().to_string(),
        "t": ck.header.t,
        "c": sol.c,
        "beta": sol.beta,
        "sup_grad_f": sol.grad_bound,
        "integral_f": integrate(&sol.f, &metric),
        "area": area,
        "mean_residual": sol.mean_residual,
        "residual": sol.residual,
        "flux_balance": flux_balance(&sol, &metric),
        "multiplier": sol.multiplier,
    });
    let dir = config.output_dir();
    runtime(std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display())))?;
    let dump = Checkpoint::new(metric.atlas(), &[("f", &sol.f)], ck.header.t, ck.header.rho, ck.header.lambda.clone(), 0.0);
    runtime(dump.save(&dir.join("potential.bin")))?;
    runtime(write_json(&dir.join("potential.json"), &report))?;
    Ok(dir)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.6e}"))
}

/// Markdown report built from the artifacts of `dir`; written to `report.md`.
pub fn report_command(dir: &Path) -> Outcome<String> {
    if !dir.is_dir() {
        return Err(Failure::Validation(anyhow!("{} is not a directory", dir.display())));
    }
    let mut unreadable = Vec::new();
    let read_json = |name: &str, unreadable: &mut Vec<String>| -> Option<serde_json::Value> {
        let p = dir.join(name);
        if !p.exists() {
            return None;
        }
        match std::fs::read_to_string(&p).map_err(anyhow::Error::from).and_then(|t| Ok(serde_json::from_str(&t)?)) {
            Ok(v) => Some(v),
            Err(e) => {
                unreadable.push(format!("{name}: {e}"));
                None
            }
        }
    };
    let summary = read_json("summary.json", &mut unreadable);
    let failure = read_json(FAILURE_MARKER, &mut unreadable);
    let csv_path = dir.join("timeseries.csv");
    let table = if csv_path.exists() {
        match series::read(&csv_path) {
            Ok(t) => Some(t),
            Err(e) => {
                unreadable.push(format!("timeseries.csv: {e:#}"));
                None
            }
        }
    } else {
        None
    };
    if !unreadable.is_empty() {
        return Err(Failure::Runtime(anyhow!("unreadable artifacts:\n  {}", unreadable.join("\n  "))));
    }
    let Some(table) = table else {
        return Err(Failure::Runtime(anyhow!("no timeseries.csv in {}", dir.display())));
    };

    let mut r = String::from("# Run report\n\n");
    let status = match (&summary, &failure) {
        (_, Some(f)) => format!("failed: {}", f["error"].as_str().unwrap_or("unknown error")),
        (Some(s), None) => s["status"].as_str().unwrap_or("unknown").to_string(),
        (None, None) => "incomplete (no summary)".into(),
    };
    r += &format!("Status: {status}\n\nRecords: {}\n\n", table.rows.len());

    r += "## Final state\n\n| quantity | value |\n|---|---|\n";
    for (label, col) in [
        ("t", "t"),
        ("sup abs(R - rho)", "sup_r_minus_rho"),
        ("sup h", "sup_h"),
        ("sup abs(grad f)", "sup_grad_f"),
        ("area", "area"),
        ("rho", "rho"),
    ] {
        r += &format!("| {label} | {} |\n", fmt(table.last(col)));
    }
    r += &format!("\nGauss-Bonnet defect (∫R dA - 4πχ): {}\n", fmt(table.last("gauss_bonnet")));
    if let (Some(a0), Some(a1)) = (table.column("area").and_then(|c| c.first().copied().flatten()), table.last("area")) {
        r += &format!("\nRelative area change: {}\n", fmt(Some((a1 - a0) / a0)));
    }

    r += "\n## Per-end curvature limits\n\n| end | lambda initial | lambda final | end curvature | decay norm |\n|---|---|---|---|---|\n";
    for j in 0..table.ends() {
        let first = table.column(&format!("lambda_{j}")).and_then(|c| c.first().copied().flatten());
        r += &format!(
            "| {j} | {} | {} | {} | {} |\n",
            fmt(first),
            fmt(table.last(&format!("lambda_{j}"))),
            fmt(table.last(&format!("end_curvature_{j}"))),
            fmt(table.last(&format!("decay_norm_{j}"))),
        );
    }

    r += "\n## Convergence\n\n";
    match summary.as_ref().filter(|_| failure.is_none()) {
        Some(s) => {
            let t0 = s["transient_end"].as_f64();
            r += &format!("Transient ends at t = {}\n\n| channel | rate | r² | samples |\n|---|---|---|---|\n", fmt(t0));
            for ch in ["sup_r_minus_rho", "sup_h"] {
                let f = &s["rates"][ch];
                r += &format!(
                    "| {ch} | {} | {} | {} |\n",
                    fmt(f["rate"].as_f64()),
                    fmt(f["r2"].as_f64()),
                    f["samples"].as_u64().map_or("n/a".into(), |v| v.to_string())
                );
            }
        }
        None => r += "MISSING: the run did not complete, so no rate fits are available.\n",
    }

    let mut svgs: Vec<String> = std::fs::read_dir(dir)
        .map(|it| {
            it.filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".svg"))
                .collect()
        })
        .unwrap_or_default();
    svgs.sort();
    if !svgs.is_empty() {
        r += "\n## Plots\n\n";
        for s in svgs {
            r += &format!("![{}]({s})\n\n", s.trim_end_matches(".svg"));
        }
    }
    runtime(std::fs::write(dir.join("report.md"), &r).map_err(anyhow::Error::from))?;
    Ok(r)
}
