//! Parameter sweeps with log-log slope summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{ReservoirConfig, RunConfig};
use crate::output::csv;
use crate::run::{execute, execute_task, Row, RunOutput};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    #[value(name = "N")]
    N,
    Lambda,
    T,
    Cutoff,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::N => "N",
            Axis::Lambda => "lambda",
            Axis::T => "t",
            Axis::Cutoff => "cutoff",
        }
    }
}

fn whole(axis: Axis, v: f64) -> Result<usize, CliError> {
    if v.fract() == 0.0 && v >= 1.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(CliError::Schema(format!("{} values must be positive integers, got {v}", axis.name())))
    }
}

/// The configuration at one sweep point.
pub fn apply_axis(cfg: &RunConfig, axis: Axis, v: f64) -> Result<RunConfig, CliError> {
    if !v.is_finite() {
        return Err(CliError::Schema(format!("sweep value {v} is not finite")));
    }
    let mut c = cfg.clone();
    match axis {
        Axis::N => c.numerics.n = vec![whole(axis, v)?],
        Axis::Lambda => c.model.lambda = v,
        Axis::T => {
            c.numerics.t = Some(vec![v]);
            c.numerics.t_grid = None;
        }
        Axis::Cutoff => {
            let cutoff = whole(axis, v)?;
            match &mut c.model.reservoir {
                ReservoirConfig::Fock { modes, .. } => modes.iter_mut().for_each(|m| m.cutoff = cutoff),
                ReservoirConfig::Finite { .. } => return Err(CliError::Schema("cutoff sweep needs a Fock reservoir".into())),
            }
        }
    }
    Ok(c)
}

/// Points `(x, y)` of one quantity across the sweep and its fitted slope.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// `(slope, intercept)` of `ln y` against `ln x`.
    pub fit: Option<(f64, f64)>,
}

/// Least-squares line through `(ln x, ln y)` over the positive points.
pub fn log_log_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub points: Vec<RunOutput>,
    pub series: Vec<Series>,
}

impl SweepOutput {
    pub fn rows(&self) -> Vec<Row> {
        self.points.iter().flat_map(|p| p.rows.iter().cloned()).collect()
    }

    pub fn failure(&self) -> Option<String> {
        self.points.iter().find_map(|p| p.failure.clone())
    }
}

fn series_name(axis: Axis, row: &Row, prefix: &str) -> String {
    let mut name = format!("{prefix}{}", row.task);
    if axis != Axis::N {
        let n = row.n_particles.map_or_else(|| "inf".to_string(), |n| n.to_string());
        let _ = write!(name, " N={n}");
    }
    if axis != Axis::T {
        let _ = write!(name, " t={}", row.t);
    }
    name
}

/// Quantities fitted at one point: `|value|`, or `|value - reference|` when
/// a reference task is given, plus `|oracle - dyson|` for comparisons.
fn point_series(axis: Axis, out: &RunOutput, reference: Option<&RunOutput>) -> Vec<(String, f64)> {
    let mut items = Vec::new();
    for row in &out.rows {
        match reference {
            Some(r) => {
                let matching = r.rows.iter().find(|q| q.t == row.t && (q.n_particles.is_none() || q.n_particles == row.n_particles));
                if let Some(q) = matching {
                    items.push((series_name(axis, row, &format!("|{} - {}| ", row.task, q.task)), (row.value - q.value).norm()));
                }
            }
            None => items.push((series_name(axis, row, "|value| "), row.value.norm())),
        }
    }
    let oracle: Vec<&Row> = out.rows.iter().filter(|r| r.task == "oracle").collect();
    for e in out.rows.iter().filter(|r| r.task == "dyson") {
        if let Some(o) = oracle.iter().find(|o| o.t == e.t && o.n_particles == e.n_particles) {
            items.push((series_name(axis, e, "|oracle - dyson| "), (o.value - e.value).norm()));
        }
    }
    items
}

/// Runs the configured task at every sweep value; points run in parallel and
/// are reported in input order.
pub fn sweep(cfg: &RunConfig, axis: Axis, values: &[f64], seed: Option<u64>) -> Result<SweepOutput, CliError> {
    if values.is_empty() {
        return Err(CliError::Schema("sweep needs at least one value".into()));
    }
    let configs: Vec<RunConfig> = values.iter().map(|&v| apply_axis(cfg, axis, v)).collect::<Result<_, _>>()?;
    let prepared = configs.iter().map(|c| c.prepare(seed)).collect::<Result<Vec<_>, _>>()?;
    let subtract = cfg.sweep.as_ref().and_then(|s| s.subtract);
    let results: Vec<Result<(RunOutput, Option<RunOutput>), CliError>> = prepared
        .par_iter()
        .map(|p| {
            let out = execute(p)?;
            let reference = subtract.map(|task| execute_task(p, task)).transpose()?;
            Ok((out, reference))
        })
        .collect();
    let mut points = Vec::new();
    let mut series: Vec<Series> = Vec::new();
    for (&x, r) in values.iter().zip(results) {
        let (out, reference) = r?;
        for (name, y) in point_series(axis, &out, reference.as_ref()) {
            match series.iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push((x, y)),
                None => series.push(Series { name, points: vec![(x, y)], fit: None }),
            }
        }
        points.push(out);
    }
    for s in &mut series {
        s.fit = log_log_fit(&s.points);
    }
    Ok(SweepOutput { axis, values: values.to_vec(), points, series })
}

pub fn slopes_csv(out: &SweepOutput) -> String {
    let mut s = String::from("series,points,slope,intercept\n");
    for series in &out.series {
        let (slope, intercept) = series.fit.map_or(("nan".to_string(), "nan".to_string()), |(a, b)| (format!("{a:e}"), format!("{b:e}")));
        let _ = writeln!(s, "\"{}\",{},{slope},{intercept}", series.name, series.points.len());
    }
    s
}

pub fn points_csv(out: &SweepOutput) -> String {
    let mut s = String::from("axis,axis_value,series,y\n");
    for series in &out.series {
        for (x, y) in &series.points {
            let _ = writeln!(s, "{},{x},\"{}\",{y:e}", out.axis.name(), series.name);
        }
    }
    s
}

pub fn summary(out: &SweepOutput) -> String {
    let mut s = format!("sweep over {} = {:?}\n\nlog-log slopes:\n", out.axis.name(), out.values);
    for series in &out.series {
        match series.fit {
            Some((slope, _)) => {
                let _ = writeln!(s, "  {:<60} slope {slope:+.4} over {} points", series.name, series.points.len());
            }
            None => {
                let _ = writeln!(s, "  {:<60} no fit (fewer than two positive points)", series.name);
            }
        }
    }
    s
}

pub fn write_sweep(dir: &Path, header: &[String], out: &SweepOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), csv(&out.rows()))?;
    fs::write(dir.join("sweep.csv"), points_csv(out))?;
    fs::write(dir.join("slopes.csv"), slopes_csv(out))?;
    let mut report = header.join("\n");
    report.push_str("\n\n");
    report.push_str(&summary(out));
    for (v, p) in out.values.iter().zip(&out.points) {
        for note in &p.notes {
            let _ = writeln!(report, "{} = {v}: {note}", out.axis.name());
        }
    }
    if let Some(f) = out.failure() {
        let _ = writeln!(report, "FAILED: {f}");
    }
    fs::write(dir.join("report.txt"), report)?;
    Ok(())
}
