use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use saddle_core::problems::{generate_instance, InstanceSpec, ProblemInstance};
use saddle_core::verify::VerifyOptions;
use saddle_core::ParamOverrides;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Algorithm {
    Homp,
    Restarted,
    Hybrid,
    Gradnorm,
    CrnOnly,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Homp => "HOMP",
            Algorithm::Restarted => "RESTARTED",
            Algorithm::Hybrid => "HYBRID",
            Algorithm::Gradnorm => "GRADNORM",
            Algorithm::CrnOnly => "CRN_ONLY",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Defaults to `$SADDLE_OUTPUT_DIR`, then the working directory.
    pub dir: Option<PathBuf>,
    /// File stem; defaults to `<instance label>-<algorithm>`.
    pub name: Option<String>,
    #[serde(default)]
    pub csv: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub max_iterations: Option<usize>,
    pub crn_max_iter: Option<usize>,
}

/// Where the run starts: the all-ones point unless one of these is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum StartConfig {
    /// `z* + radius u` for a seeded random unit direction `u`.
    Offset { radius: f64, seed: u64 },
    Point { x: Vec<f64>, y: Vec<f64> },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instance: Option<InstanceSpec>,
    pub instance_file: Option<PathBuf>,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default = "one")]
    pub record_every: usize,
    /// Iteration count of a single HOMP run; required for `HOMP`.
    pub homp_iterations: Option<usize>,
    pub start: Option<StartConfig>,
    /// Sweep axes: dotted config paths mapped to the values to try.
    pub grid: Option<BTreeMap<String, Vec<serde_json::Value>>>,
    pub verify: Option<VerifyOptions>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_str(&text)?;
        // relative instance files resolve against the config's directory
        if let (Some(file), Some(parent)) = (&cfg.instance_file, path.parent()) {
            if file.is_relative() {
                cfg.instance_file = Some(parent.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn from_str(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: serde_json::Value) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.instance, &self.instance_file) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either instance or instance_file, not both".into())),
            (None, None) => return Err(CliError::Config("an instance or instance_file is required".into())),
            _ => {}
        }
        if self.record_every == 0 {
            return Err(CliError::Config("record_every must be at least 1".into()));
        }
        if self.algorithm == Algorithm::Homp && self.homp_iterations.unwrap_or(0) == 0 {
            return Err(CliError::Config("HOMP needs homp_iterations >= 1".into()));
        }
        if self.algorithm == Algorithm::Gradnorm && self.params.p.is_some_and(|p| p != 2) {
            return Err(CliError::Config("GRADNORM needs p = 2".into()));
        }
        Ok(())
    }

    pub fn load_instance(&self) -> Result<ProblemInstance, CliError> {
        load_instance(self.instance.as_ref(), self.instance_file.as_deref())
    }
}

pub fn load_instance(spec: Option<&InstanceSpec>, file: Option<&Path>) -> Result<ProblemInstance, CliError> {
    match (spec, file) {
        (Some(spec), _) => generate_instance(spec).map_err(|e| CliError::Config(format!("instance: {e}"))),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            ProblemInstance::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
        (None, None) => Err(CliError::Config("no instance given".into())),
    }
}
