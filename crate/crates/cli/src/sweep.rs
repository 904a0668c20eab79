use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_OK};
use crate::run::{execute, output_stem, write_outputs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub values: BTreeMap<String, Value>,
    pub label: String,
    pub status: String,
    pub exit_code: i32,
    pub merit: Option<f64>,
    pub gap: Option<f64>,
    pub grad_norm: Option<f64>,
    pub homp_iterations: usize,
    pub crn_iterations: usize,
    pub calls_f: u64,
    pub calls_jf: u64,
    pub calls_total: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axes: Vec<String>,
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of log(HOMP iterations) against log(axis value),
    /// present for a single numeric axis with every cell converged.
    pub loglog_slope: Option<f64>,
}

impl SweepReport {
    /// First non-zero cell exit code in cell order.
    pub fn exit_code(&self) -> i32 {
        self.rows.iter().map(|r| r.exit_code).find(|&c| c != EXIT_OK).unwrap_or(EXIT_OK)
    }
}

/// Sets `value` at a dotted path, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad grid path {path:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("grid path {path:?} runs through a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one part")
}

/// Cartesian product of the axes, last axis varying fastest.
pub fn grid_cells(grid: &BTreeMap<String, Vec<Value>>) -> Result<Vec<BTreeMap<String, Value>>, CliError> {
    if grid.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    let mut cells = vec![BTreeMap::new()];
    for (axis, values) in grid {
        if values.is_empty() {
            return Err(CliError::Config(format!("sweep axis {axis:?} has no values")));
        }
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.insert(axis.clone(), v.clone());
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

pub fn cell_configs(base: &RunConfig) -> Result<Vec<(BTreeMap<String, Value>, RunConfig)>, CliError> {
    let grid = base
        .grid
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs a grid".into()))?;
    let cells = grid_cells(grid)?;
    let mut template = serde_json::to_value(base).expect("config serializes");
    template.as_object_mut().expect("config is an object").remove("grid");
    let stem = base.output.name.clone().unwrap_or_else(|| "sweep".into());
    cells
        .into_iter()
        .enumerate()
        .map(|(i, cell)| {
            let mut v = template.clone();
            for (path, value) in &cell {
                set_path(&mut v, path, value.clone())?;
            }
            let mut cfg = RunConfig::from_value(v).map_err(|e| CliError::Config(format!("sweep cell {i}: {e}")))?;
            cfg.output.name = Some(format!("{stem}-cell{i:03}"));
            Ok((cell, cfg))
        })
        .collect()
}

/// Runs every cell in parallel; rows come back in cell order.
pub fn run_sweep(base: &RunConfig, dir: &Path) -> Result<SweepReport, CliError> {
    let cells = cell_configs(base)?;
    let rows = cells
        .par_iter()
        .enumerate()
        .map(|(i, (values, cfg))| run_cell(i, values, cfg, dir))
        .collect::<Result<Vec<_>, CliError>>()?;
    let axes: Vec<String> = base.grid.as_ref().map(|g| g.keys().cloned().collect()).unwrap_or_default();
    let loglog_slope = slope_for(&axes, &rows);
    Ok(SweepReport { axes, rows, loglog_slope })
}

fn run_cell(i: usize, values: &BTreeMap<String, Value>, cfg: &RunConfig, dir: &Path) -> Result<SweepRow, CliError> {
    match execute(cfg) {
        Ok(result) => {
            write_outputs(cfg, &result, dir)?;
            let s = &result.summary;
            Ok(SweepRow {
                cell: i,
                values: values.clone(),
                label: s.label.clone(),
                status: serde_json::to_value(s.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                exit_code: result.exit_code,
                merit: Some(s.merit),
                gap: s.gap,
                grad_norm: Some(s.grad_norm),
                homp_iterations: s.homp_iterations,
                crn_iterations: s.crn_iterations,
                calls_f: s.calls.f,
                calls_jf: s.calls.jf,
                calls_total: s.calls_total,
                error: s.error.clone(),
            })
        }
        // a bad cell is reported in its row rather than aborting the sweep
        Err(e) => Ok(SweepRow {
            cell: i,
            values: values.clone(),
            label: output_stem(cfg, "cell"),
            status: "CONFIG_ERROR".into(),
            exit_code: e.exit_code(),
            merit: None,
            gap: None,
            grad_norm: None,
            homp_iterations: 0,
            crn_iterations: 0,
            calls_f: 0,
            calls_jf: 0,
            calls_total: 0,
            error: Some(e.to_string()),
        }),
    }
}

fn slope_for(axes: &[String], rows: &[SweepRow]) -> Option<f64> {
    let [axis] = axes else { return None };
    let pts: Option<Vec<(f64, f64)>> = rows
        .iter()
        .map(|r| {
            let x = r.values.get(axis)?.as_f64()?;
            let y = r.homp_iterations as f64;
            (r.exit_code == EXIT_OK && x > 0.0 && y > 0.0).then(|| (x.ln(), y.ln()))
        })
        .collect();
    loglog_fit(&pts?)
}

/// Ordinary least-squares slope; `None` with fewer than two distinct abscissae.
pub fn loglog_fit(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn write_report(report: &SweepReport, dir: &Path, stem: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let json_path = dir.join(format!("{stem}.sweep.json"));
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| CliError::io(&json_path, e))?;

    let csv_path = dir.join(format!("{stem}.sweep.csv"));
    let err = |e: csv::Error| CliError::Config(format!("{}: {e}", csv_path.display()));
    let mut w = csv::Writer::from_path(&csv_path).map_err(err)?;
    let mut header = vec!["cell".to_string()];
    header.extend(report.axes.iter().cloned());
    header.extend(
        ["status", "exit_code", "merit", "gap", "grad_norm", "homp_iterations", "crn_iterations", "calls_F", "calls_JF", "calls_total"]
            .map(String::from),
    );
    w.write_record(&header).map_err(err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        let mut rec = vec![r.cell.to_string()];
        rec.extend(report.axes.iter().map(|a| match r.values.get(a) {
            Some(Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => String::new(),
        }));
        rec.extend([
            r.status.clone(),
            r.exit_code.to_string(),
            opt(r.merit),
            opt(r.gap),
            opt(r.grad_norm),
            r.homp_iterations.to_string(),
            r.crn_iterations.to_string(),
            r.calls_f.to_string(),
            r.calls_jf.to_string(),
            r.calls_total.to_string(),
        ]);
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    Ok(())
}
