//! Per-event cycle weights.
//!
//! This is a model, not a measurement: the weights are chosen to reproduce
//! relative orderings between modes, not absolute cycle counts of any core.

use thiserror::Error;

use crate::runtime::EventCounts;

/// Instructions in one software bounds check or side-table update: two
/// loads of base and bound, two compares and two branches.
pub const SOFT_CHECK_INSTRUCTIONS: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("non-blocking issue cost {nb_issue} exceeds the blocking stall {stall}")]
pub struct CostModelError {
    pub nb_issue: u64,
    pub stall: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    pub plain_instr: u64,
    /// Cycles for one software bounds check or side-table update.
    pub soft_bounds_check: u64,
    /// Extra cycles the core waits on a blocking validation, on top of issue.
    pub blocking_validate_stall: u64,
    pub nb_issue: u64,
    pub store_issue: u64,
    pub free_issue: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            plain_instr: 1,
            soft_bounds_check: 8,
            blocking_validate_stall: 4,
            nb_issue: 1,
            store_issue: 1,
            free_issue: 1,
        }
    }
}

impl CostModel {
    pub fn check(&self) -> Result<(), CostModelError> {
        if self.nb_issue > self.blocking_validate_stall {
            return Err(CostModelError {
                nb_issue: self.nb_issue,
                stall: self.blocking_validate_stall,
            });
        }
        Ok(())
    }

    /// Cycles of one blocking validation: issue plus the wait for `rd`.
    pub fn blocking_validate(&self) -> u64 {
        self.plain_instr + self.blocking_validate_stall
    }

    pub fn cycles(&self, e: &EventCounts) -> u64 {
        e.plain * self.plain_instr
            + e.blocking_validates * self.blocking_validate()
            + e.async_validates * self.nb_issue
            + e.stores * self.store_issue
            + e.frees * self.free_issue
            + (e.soft_checks + e.soft_updates) * self.soft_bounds_check
    }

    pub fn instructions(&self, e: &EventCounts) -> u64 {
        e.plain
            + e.blocking_validates
            + e.async_validates
            + e.stores
            + e.frees
            + (e.soft_checks + e.soft_updates) * SOFT_CHECK_INSTRUCTIONS
    }
}
