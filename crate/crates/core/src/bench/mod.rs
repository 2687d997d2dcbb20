//! Workload generation, attack replays, the cycle cost model and sweeps.

pub mod attacks;
pub mod cost;
pub mod exec;
pub mod sweep;
pub mod workload;

pub use attacks::{attack_cwe122, attack_cwe416, Attack, AttackReport};
pub use cost::CostModel;
pub use exec::{execute, final_memory, run, RunMetrics, RunOutcome};
pub use sweep::{sweep, SweepRecord};
pub use workload::{generate, Op, Target, Trace, WorkloadSpec};
