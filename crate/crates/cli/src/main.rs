use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use saddle_cli::config::{load_instance, RunConfig};
use saddle_cli::error::{CliError, EXIT_OK};
use saddle_cli::run::{execute, output_dir, report_line, write_outputs};
use saddle_cli::sweep::{run_sweep, write_report};
use saddle_core::problems::{generate_instance, Family, FaultSpec, InstanceSpec, ProblemInstance};
use saddle_core::verify::{verify_instance, VerifyOptions};

#[derive(Parser)]
#[command(name = "saddle", version, about = "Solvers for strongly monotone min-max problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver configuration.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory and $SADDLE_OUTPUT_DIR.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Audit an instance's derivatives and declared constants.
    Verify {
        #[arg(long, conflicts_with = "instance", required_unless_present = "instance")]
        config: Option<PathBuf>,
        #[arg(long)]
        instance: Option<PathBuf>,
    },
    /// Run every cell of the config's grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Generate an instance file.
    Gen {
        #[arg(long)]
        family: Family,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        coupling: f64,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        spectrum_ratio: Option<f64>,
        /// Perturbs one gradient coordinate; for exercising `verify`.
        #[arg(long, requires = "fault_offset")]
        fault_index: Option<usize>,
        #[arg(long, requires = "fault_index")]
        fault_offset: Option<f64>,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn dispatch(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Solve { config, output_dir: flag } => solve(&config, flag.as_deref()),
        Command::Verify { config, instance } => verify(config.as_deref(), instance.as_deref()),
        Command::Sweep { config, output_dir: flag } => sweep(&config, flag.as_deref()),
        Command::Gen {
            family,
            seed,
            n,
            m,
            mu,
            coupling,
            tau,
            spectrum_ratio,
            fault_index,
            fault_offset,
            out,
        } => {
            let mut spec = InstanceSpec::new(family, seed, n, m, mu, coupling);
            if let Some(t) = tau {
                spec.tau = t;
            }
            if let Some(r) = spectrum_ratio {
                spec.spectrum_ratio = r;
            }
            let fault = fault_index.zip(fault_offset).map(|(grad_index, offset)| FaultSpec { grad_index, offset });
            gen(&spec, fault, out.as_deref())
        }
    }
}

fn solve(config: &Path, flag: Option<&Path>) -> Result<i32, CliError> {
    let cfg = RunConfig::from_path(config)?;
    let result = execute(&cfg)?;
    let paths = write_outputs(&cfg, &result, &output_dir(flag, &cfg))?;
    let mut out = std::io::stdout().lock();
    let _ = report_line(&mut out, &result.summary);
    let _ = writeln!(out, "summary: {}", paths.summary.display());
    if let Some(err) = &result.summary.error {
        eprintln!("error: {err}");
    }
    Ok(result.exit_code)
}

fn verify(config: Option<&Path>, instance: Option<&Path>) -> Result<i32, CliError> {
    let (inst, opts) = match config {
        Some(path) => {
            let cfg = RunConfig::from_path(path)?;
            (cfg.load_instance()?, cfg.verify.clone().unwrap_or_default())
        }
        None => (load_instance(None, instance)?, VerifyOptions::default()),
    };
    let report = verify_instance(&inst, &opts).map_err(|e| CliError::Config(format!("verify: {e}")))?;
    let mut out = std::io::stdout().lock();
    for c in &report.checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{tag} {:<22} measured {:.6e} bound {:.6e}", c.name, c.measured, c.bound);
    }
    if report.passed() {
        Ok(EXIT_OK)
    } else {
        let names: Vec<&str> = report.failed().map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(format!("{} ({})", names.join(", "), inst.label)))
    }
}

fn sweep(config: &Path, flag: Option<&Path>) -> Result<i32, CliError> {
    let cfg = RunConfig::from_path(config)?;
    let dir = output_dir(flag, &cfg);
    let report = run_sweep(&cfg, &dir)?;
    let stem = cfg.output.name.clone().unwrap_or_else(|| "sweep".into());
    write_report(&report, &dir, &stem)?;
    let mut out = std::io::stdout().lock();
    for r in &report.rows {
        let values = serde_json::to_string(&r.values).expect("values serialize");
        let _ = writeln!(
            out,
            "cell {:03} {values} {}: HOMP {} CRN {} calls {}",
            r.cell, r.status, r.homp_iterations, r.crn_iterations, r.calls_total
        );
    }
    if let Some(s) = report.loglog_slope {
        let _ = writeln!(out, "log-log slope of HOMP iterations: {s:.4}");
    }
    Ok(report.exit_code())
}

fn gen(spec: &InstanceSpec, fault: Option<FaultSpec>, out: Option<&Path>) -> Result<i32, CliError> {
    let mut inst = generate_instance(spec).map_err(|e| CliError::Config(format!("instance: {e}")))?;
    if fault.is_some() {
        inst = ProblemInstance::new(
            inst.problem.clone(),
            inst.params.clone(),
            inst.reference_solution.clone(),
            inst.label.clone(),
            inst.spec.clone(),
            fault,
        );
    }
    let mut text = inst.to_json();
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e))?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}
