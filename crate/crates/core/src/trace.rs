//! Per-iteration records, cumulative oracle-call accounting and run budgets.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::point::{distance, norm_z, PointZ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Homp,
    Crn,
    TensorStep,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Homp => "HOMP",
            Phase::Crn => "CRN",
            Phase::TensorStep => "TENSOR_STEP",
        }
    }
}

/// Cumulative oracle calls by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounts {
    #[serde(rename = "F")]
    pub f: u64,
    #[serde(rename = "JF")]
    pub jf: u64,
    #[serde(rename = "G_VALUE")]
    pub g_value: u64,
}

impl OracleCounts {
    pub fn total(&self) -> u64 {
        self.f + self.jf + self.g_value
    }

    pub fn dominates(&self, earlier: &OracleCounts) -> bool {
        self.f >= earlier.f && self.jf >= earlier.jf && self.g_value >= earlier.g_value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub phase: Phase,
    pub restart_index: usize,
    pub iter: usize,
    pub gamma: f64,
    pub f_norm: f64,
    pub dist_to_ref: Option<f64>,
    pub oracle_calls_cumulative: OracleCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Converged,
    BudgetExceeded,
    InnerSolveFailed,
}

impl RunStatus {
    pub fn from_error(err: &SolverError) -> RunStatus {
        match err {
            SolverError::BudgetExceeded(_) => RunStatus::BudgetExceeded,
            _ => RunStatus::InnerSolveFailed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLimits {
    /// Cap on recorded iterations across all phases.
    pub max_iterations: Option<usize>,
    /// Outer iteration budget of a single CRN phase.
    pub crn_max_iter: usize,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            max_iterations: None,
            crn_max_iter: 100,
        }
    }
}

/// A completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub final_point: PointZ,
    pub status: RunStatus,
    pub calls: OracleCounts,
}

impl RunTrace {
    pub fn iterations_in(&self, phase: Phase) -> usize {
        self.records.iter().filter(|r| r.phase == phase).count()
    }
}

/// Accumulates records while a run is in progress.
#[derive(Debug, Clone)]
pub struct TraceRecorder {
    records: Vec<IterationRecord>,
    calls: OracleCounts,
    reference: Option<PointZ>,
    limits: RunLimits,
    last_point: Option<PointZ>,
}

impl Default for TraceRecorder {
    fn default() -> Self {
        TraceRecorder::new(None, RunLimits::default())
    }
}

impl TraceRecorder {
    pub fn new(reference: Option<PointZ>, limits: RunLimits) -> Self {
        TraceRecorder {
            records: Vec::new(),
            calls: OracleCounts::default(),
            reference,
            limits,
            last_point: None,
        }
    }

    pub fn with_reference(reference: PointZ) -> Self {
        TraceRecorder::new(Some(reference), RunLimits::default())
    }

    pub fn calls(&self) -> &OracleCounts {
        &self.calls
    }

    pub fn calls_mut(&mut self) -> &mut OracleCounts {
        &mut self.calls
    }

    pub fn limits(&self) -> &RunLimits {
        &self.limits
    }

    pub fn reference(&self) -> Option<&PointZ> {
        self.reference.as_ref()
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn last_point(&self) -> Option<&PointZ> {
        self.last_point.as_ref()
    }

    /// Fails with [`SolverError::BudgetExceeded`] once the iteration cap is reached.
    pub fn check_budget(&self) -> Result<()> {
        match self.limits.max_iterations {
            Some(cap) if self.records.len() >= cap => Err(SolverError::BudgetExceeded(cap)),
            _ => Ok(()),
        }
    }

    pub fn record(
        &mut self,
        phase: Phase,
        restart_index: usize,
        iter: usize,
        gamma: f64,
        f_value: &PointZ,
        point: &PointZ,
    ) -> Result<()> {
        let dist_to_ref = match &self.reference {
            Some(r) => Some(distance(point, r)?),
            None => None,
        };
        self.records.push(IterationRecord {
            phase,
            restart_index,
            iter,
            gamma,
            f_norm: norm_z(f_value),
            dist_to_ref,
            oracle_calls_cumulative: self.calls,
        });
        self.last_point = Some(point.clone());
        Ok(())
    }

    pub fn finish(self, final_point: PointZ, status: RunStatus) -> RunTrace {
        RunTrace {
            records: self.records,
            final_point,
            status,
            calls: self.calls,
        }
    }
}
