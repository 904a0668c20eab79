//! Higher-order methods for smooth strongly-convex-strongly-concave saddle
//! point problems.

pub mod crn;
pub mod drivers;
pub mod error;
pub mod homp;
pub mod linalg;
pub mod oracle;
pub mod params;
pub mod point;
pub mod problems;
pub mod trace;
pub mod verify;

pub use error::{Result, SolverError};
pub use oracle::SaddleOracle;
pub use params::{FirstOrderStep, ParamOverrides, SolverParams};
pub use point::PointZ;
pub use trace::{OracleCounts, Phase, RunLimits, RunStatus, RunTrace, TraceRecorder};
