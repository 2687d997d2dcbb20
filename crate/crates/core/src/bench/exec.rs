use crate::bench::cost::CostModel;
use crate::bench::workload::{copy_bytes, Op, Target, Trace};
use crate::engine::RoccPort;
use crate::pointer::SafePointer;
use crate::runtime::{EventCounts, Mode, Runtime, RuntimeConfig, RuntimeError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// A blocking check stopped the program at this trace position.
    Terminated { at: usize },
    /// A runtime error other than a bounds violation ended the run early.
    Failed { at: usize, error: RuntimeError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub total_cycles: u64,
    pub instruction_count: u64,
    pub ipc: f64,
    pub violations_detected: u64,
    /// Largest number of operations between a violation and its observation.
    pub detection_latency: u64,
    pub outcome: RunOutcome,
    pub events: EventCounts,
}

impl RunMetrics {
    pub fn from_runtime<P: RoccPort>(rt: &Runtime<P>, cost: &CostModel, outcome: RunOutcome) -> Self {
        let events = rt.events();
        let total_cycles = cost.cycles(&events);
        let instruction_count = cost.instructions(&events);
        let ipc = if total_cycles == 0 {
            0.0
        } else {
            instruction_count as f64 / total_cycles as f64
        };
        RunMetrics {
            total_cycles,
            instruction_count,
            ipc,
            violations_detected: rt.violations().len() as u64,
            detection_latency: rt.violations().iter().map(|v| v.latency()).max().unwrap_or(0),
            outcome,
            events,
        }
    }

    pub fn is_partial(&self) -> bool {
        !matches!(self.outcome, RunOutcome::Completed)
    }
}

/// Replays `trace` on `rt`, stopping at the first failing operation, then
/// runs a final exception drain.
pub fn execute<P: RoccPort>(trace: &Trace, rt: &mut Runtime<P>) -> RunOutcome {
    let mut slots: Vec<Option<SafePointer>> = vec![None; trace.slots];
    let width = rt.tag_width();
    let stack = rt.heap().stack_base();
    let mut outcome = RunOutcome::Completed;
    for (at, op) in trace.ops.iter().enumerate() {
        let result = match *op {
            Op::Alloc { slot, size } => rt.malloc(size).map(|p| slots[slot] = Some(p)),
            // the slot keeps its pointer after free so later ops can dangle
            Op::Free { slot } => match slots[slot] {
                Some(p) => rt.free(p),
                None => Err(RuntimeError::ForeignPointer(SafePointer::NULL)),
            },
            Op::Copy { target, len, fill } => {
                let bytes = copy_bytes(len, fill);
                match target {
                    Target::Stack { offset } => rt.plain_copy(stack + offset, &bytes),
                    Target::Heap { slot, offset } => match slots[slot] {
                        Some(p) => p
                            .offset(offset, width)
                            .map_err(RuntimeError::from)
                            .and_then(|dst| rt.copy(dst, &bytes)),
                        None => Err(RuntimeError::ForeignPointer(SafePointer::NULL)),
                    },
                }
            }
        };
        match result {
            Ok(()) => {}
            Err(RuntimeError::OutOfBoundsAccess(_)) => {
                outcome = RunOutcome::Terminated { at };
                break;
            }
            Err(error) => {
                outcome = RunOutcome::Failed { at, error };
                break;
            }
        }
    }
    rt.drain();
    outcome
}

/// Runs `trace` in `mode` on a fresh runtime built from `config`.
pub fn run(trace: &Trace, mode: Mode, cost: &CostModel, config: &RuntimeConfig) -> RunMetrics {
    match Runtime::new(config.with_mode(mode)) {
        Ok(mut rt) => {
            let outcome = execute(trace, &mut rt);
            RunMetrics::from_runtime(&rt, cost, outcome)
        }
        Err(error) => RunMetrics {
            total_cycles: 0,
            instruction_count: 0,
            ipc: 0.0,
            violations_detected: 0,
            detection_latency: 0,
            outcome: RunOutcome::Failed { at: 0, error },
            events: EventCounts::default(),
        },
    }
}

/// Final memory image after replaying `trace` in `mode`.
pub fn final_memory(trace: &Trace, mode: Mode, config: &RuntimeConfig) -> Result<Vec<u8>, RunOutcome> {
    let mut rt = Runtime::new(config.with_mode(mode)).map_err(|error| RunOutcome::Failed { at: 0, error })?;
    match execute(trace, &mut rt) {
        RunOutcome::Completed => Ok(rt.memory().to_vec()),
        other => Err(other),
    }
}
