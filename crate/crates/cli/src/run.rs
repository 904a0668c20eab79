use std::io::Write;
use std::path::{Path, PathBuf};

use saddle_core::drivers::{gradnorm_solve, hybrid_solve, merit_target_for_gap, restarted_homp};
use saddle_core::homp::homp_run;
use saddle_core::crn::crn_run;
use saddle_core::oracle::merit;
use saddle_core::point::{distance, norm_z, PointZ};
use saddle_core::problems::{duality_gap_exact, estimate_r0, ProblemInstance};
use saddle_core::trace::{IterationRecord, OracleCounts, Phase, RunLimits, RunStatus, RunTrace, TraceRecorder};
use saddle_core::{SolverError, SolverParams};
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, RunConfig, StartConfig};
use crate::error::{CliError, EXIT_BUDGET, EXIT_INNER, EXIT_OK};

pub const ENV_OUTPUT_DIR: &str = "SADDLE_OUTPUT_DIR";

/// Column order of the CSV trace export.
pub const CSV_COLUMNS: [&str; 8] = ["phase", "restart", "iter", "gamma", "f_norm", "dist_to_ref", "calls_F", "calls_JF"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub algorithm: Algorithm,
    pub status: RunStatus,
    pub error: Option<String>,
    pub final_point: PointZ,
    pub merit: f64,
    pub gap: Option<f64>,
    pub grad_norm: f64,
    pub dist_to_ref: Option<f64>,
    pub merit_target: Option<f64>,
    pub homp_iterations: usize,
    pub crn_iterations: usize,
    pub tensor_steps: usize,
    pub restarts: Option<usize>,
    pub calls: OracleCounts,
    pub calls_total: u64,
    pub params: SolverParams,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: Summary,
    pub trace: RunTrace,
    pub exit_code: i32,
}

struct Prepared {
    inst: ProblemInstance,
    params: SolverParams,
    start: PointZ,
}

fn config_err(e: SolverError) -> CliError {
    CliError::Config(e.to_string())
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let mut inst = cfg.load_instance()?;
    if let Some(p) = cfg.params.p {
        inst = inst.with_order(p);
    }
    let start = match &cfg.start {
        None => inst.default_start(),
        Some(StartConfig::Offset { radius, seed }) => inst.offset_start(*radius, *seed).map_err(config_err)?,
        Some(StartConfig::Point { x, y }) => PointZ::new(x.clone(), y.clone()).map_err(config_err)?,
    };
    let (n, m) = inst.dims();
    if start.n() != n || start.m() != m {
        return Err(CliError::Config(format!("start point must have blocks of size {n} and {m}")));
    }
    let mut params = cfg.params.apply(&inst.params);
    params.r0 = estimate_r0(&inst, &start, cfg.params.r0).map_err(config_err)?;
    params.validate().map_err(config_err)?;
    Ok(Prepared { inst, params, start })
}

fn exit_code_for(err: &SolverError) -> Option<i32> {
    match err {
        SolverError::BudgetExceeded(_) => Some(EXIT_BUDGET),
        SolverError::InvalidParams(_)
        | SolverError::UnsupportedOrder(_)
        | SolverError::MissingBound
        | SolverError::DimensionMismatch { .. }
        | SolverError::EmptyInput(_)
        | SolverError::NoClosedForm => None,
        _ => Some(EXIT_INNER),
    }
}

/// Runs the configured driver. Solver failures still produce a summary; only
/// configuration problems are returned as errors.
pub fn execute(cfg: &RunConfig) -> Result<RunResult, CliError> {
    let Prepared { inst, params, start } = prepare(cfg)?;
    let oracle = inst.oracle();
    let limits = RunLimits {
        max_iterations: cfg.budget.max_iterations,
        crn_max_iter: cfg.budget.crn_max_iter.unwrap_or(RunLimits::default().crn_max_iter),
    };
    let mut rec = TraceRecorder::new(inst.reference_solution.clone(), limits);
    let mut restarts = None;
    let mut merit_target = None;

    let outcome: Result<PointZ, SolverError> = match cfg.algorithm {
        Algorithm::Homp => {
            let t = cfg.homp_iterations.expect("validated");
            homp_run(oracle, &start, &params, t, 0, &mut rec).map(|o| o.average)
        }
        Algorithm::Restarted => restarted_homp(oracle, &start, &params, &mut rec).map(|o| {
            restarts = Some(o.schedule.n);
            o.point
        }),
        Algorithm::Hybrid => {
            merit_target = Some(merit_target_for_gap(&params, params.eps_gap));
            hybrid_solve(oracle, &start, &params, &mut rec).map(|o| {
                restarts = Some(o.restarts.schedule.n);
                o.point
            })
        }
        Algorithm::Gradnorm => gradnorm_solve(oracle, &start, params.eps_grad, params.r0, &params, &mut rec).map(|o| {
            restarts = Some(o.restarts.schedule.n);
            merit_target = Some(o.eps_merit);
            o.point
        }),
        Algorithm::CrnOnly => {
            let target = merit_target_for_gap(&params, params.eps_gap);
            merit_target = Some(target);
            crn_run(oracle, &start, target, &params, 0, &mut rec).map(|o| o.point)
        }
    };

    let (final_point, status, error, exit_code) = match outcome {
        Ok(z) => (z, RunStatus::Converged, None, EXIT_OK),
        Err(e) => {
            let code = exit_code_for(&e).ok_or_else(|| config_err(e.clone()))?;
            let z = rec.last_point().cloned().unwrap_or_else(|| start.clone());
            log::warn!("run stopped: {e}");
            (z, RunStatus::from_error(&e), Some(e.to_string()), code)
        }
    };
    let trace = rec.finish(final_point.clone(), status);
    let summary = summarize(cfg, &inst, &params, &trace, restarts, merit_target, error)?;
    Ok(RunResult {
        summary,
        trace,
        exit_code,
    })
}

fn summarize(
    cfg: &RunConfig,
    inst: &ProblemInstance,
    params: &SolverParams,
    trace: &RunTrace,
    restarts: Option<usize>,
    merit_target: Option<f64>,
    error: Option<String>,
) -> Result<Summary, CliError> {
    let oracle = inst.oracle();
    let z = &trace.final_point;
    let mut scratch = OracleCounts::default();
    let solver_err = |e: SolverError| CliError::Config(format!("evaluating final point: {e}"));
    let merit_value = merit(oracle, z, &mut scratch).map_err(solver_err)?;
    let gap = duality_gap_exact(inst, z).ok();
    let grad_norm = norm_z(&oracle.grad(z).map_err(solver_err)?);
    let dist_to_ref = match &inst.reference_solution {
        Some(r) => Some(distance(z, r).map_err(solver_err)?),
        None => None,
    };
    Ok(Summary {
        label: inst.label.clone(),
        algorithm: cfg.algorithm,
        status: trace.status,
        error,
        final_point: z.clone(),
        merit: merit_value,
        gap,
        grad_norm,
        dist_to_ref,
        merit_target,
        homp_iterations: trace.iterations_in(Phase::Homp),
        crn_iterations: trace.iterations_in(Phase::Crn),
        tensor_steps: trace.iterations_in(Phase::TensorStep),
        restarts,
        calls: trace.calls,
        calls_total: trace.calls.total(),
        params: params.clone(),
    })
}

/// Keeps every `every`-th record and always the last one.
pub fn thin(records: &[IterationRecord], every: usize) -> Vec<&IterationRecord> {
    let last = records.len().saturating_sub(1);
    records
        .iter()
        .enumerate()
        .filter(|(i, _)| i % every.max(1) == 0 || *i == last)
        .map(|(_, r)| r)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub trace: PathBuf,
    pub summary: PathBuf,
    pub csv: Option<PathBuf>,
}

/// Flag, then config, then `$SADDLE_OUTPUT_DIR`, then the working directory.
pub fn output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .or_else(|| std::env::var_os(ENV_OUTPUT_DIR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn output_stem(cfg: &RunConfig, label: &str) -> String {
    cfg.output
        .name
        .clone()
        .unwrap_or_else(|| format!("{label}-{}", cfg.algorithm.as_str().to_ascii_lowercase()))
}

pub fn write_outputs(cfg: &RunConfig, result: &RunResult, dir: &Path) -> Result<OutputPaths, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let stem = output_stem(cfg, &result.summary.label);
    let records = thin(&result.trace.records, cfg.record_every);

    let trace_path = dir.join(format!("{stem}.trace.jsonl"));
    let mut buf = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    std::fs::write(&trace_path, &buf).map_err(|e| CliError::io(&trace_path, e))?;

    let summary_path = dir.join(format!("{stem}.summary.json"));
    let mut text = serde_json::to_string_pretty(&result.summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(&summary_path, text).map_err(|e| CliError::io(&summary_path, e))?;

    let csv_path = if cfg.output.csv {
        let path = dir.join(format!("{stem}.csv"));
        write_csv(&path, &records)?;
        Some(path)
    } else {
        None
    };
    Ok(OutputPaths {
        trace: trace_path,
        summary: summary_path,
        csv: csv_path,
    })
}

fn write_csv(path: &Path, records: &[&IterationRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Config(format!("{}: {e}", path.display()));
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in records {
        w.write_record([
            r.phase.as_str().to_string(),
            r.restart_index.to_string(),
            r.iter.to_string(),
            r.gamma.to_string(),
            r.f_norm.to_string(),
            r.dist_to_ref.map(|d| d.to_string()).unwrap_or_default(),
            r.oracle_calls_cumulative.f.to_string(),
            r.oracle_calls_cumulative.jf.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// One-line human summary for standard output.
pub fn report_line(out: &mut impl Write, s: &Summary) -> std::io::Result<()> {
    writeln!(
        out,
        "{} {} {}: merit {:.3e}, |grad| {:.3e}, gap {}, HOMP {} / CRN {} iterations, {} oracle calls",
        s.label,
        s.algorithm.as_str(),
        serde_json::to_value(s.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        s.merit,
        s.grad_norm,
        s.gap.map(|g| format!("{g:.3e}")).unwrap_or_else(|| "n/a".into()),
        s.homp_iterations,
        s.crn_iterations,
        s.calls_total
    )
}
