use rayon::prelude::*;

use crate::bench::cost::CostModel;
use crate::bench::exec::{run, RunMetrics};
use crate::bench::workload::{generate, WorkloadSpec};
use crate::runtime::{Mode, RuntimeConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub heap_fraction: f64,
    pub mode: Mode,
    pub metrics: RunMetrics,
    /// Cycles relative to the baseline run of the same trace.
    pub normalized_time: f64,
}

/// Runs every `(fraction, mode)` cell on the same seeded trace per fraction.
///
/// Records come back in `fractions` order, then `modes` order.
pub fn sweep(
    fractions: &[f64],
    modes: &[Mode],
    cost: &CostModel,
    spec: &WorkloadSpec,
    config: &RuntimeConfig,
) -> Vec<SweepRecord> {
    fractions
        .par_iter()
        .map(|&fraction| {
            let trace = generate(&spec.clone().with_fraction(fraction));
            let baseline = run(&trace, Mode::Baseline, cost, config);
            modes
                .iter()
                .map(|&mode| {
                    let metrics = if mode == Mode::Baseline {
                        baseline.clone()
                    } else {
                        run(&trace, mode, cost, config)
                    };
                    let normalized_time = if baseline.total_cycles == 0 {
                        1.0
                    } else {
                        metrics.total_cycles as f64 / baseline.total_cycles as f64
                    };
                    SweepRecord {
                        heap_fraction: fraction,
                        mode,
                        metrics,
                        normalized_time,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Looks up the record for `(fraction, mode)`.
pub fn cell(records: &[SweepRecord], fraction: f64, mode: Mode) -> Option<&SweepRecord> {
    records
        .iter()
        .find(|r| r.mode == mode && (r.heap_fraction - fraction).abs() < 1e-9)
}
