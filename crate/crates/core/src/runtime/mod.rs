//! The safe-heap library over simulated memory.
//!
//! A [`Runtime`] models one process: its heap, its tag pool and the
//! coprocessor port it talks to. The same operations run in four modes so
//! the benchmark harness can compare them on identical traces:
//!
//! * `baseline` performs no checks at all;
//! * `softbc` keeps bounds in an in-process table and checks in software;
//! * `heapsafe` validates through the coprocessor and waits for the verdict;
//! * `heapsafe-nb` validates without waiting and collects violations at drain points.

mod heap;
mod softbc;
mod tags;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use heap::{Allocation, SimHeap, ALIGN, MEMORY_BASE};
pub use softbc::BoundsTable;
pub use tags::TagPool;

use crate::engine::{EngineConfig, EngineError, HeapSafeEngine, RoccPort, ValidationMode};
use crate::pointer::{make_safe, PointerError, SafePointer, TagWidth};
use crate::rocc::{build_hs_free, build_hs_store, build_hs_validate, build_hs_validate_async, EngineCommand};

/// Plain instructions spent by the library outside of any check.
pub mod footprint {
    /// Call, loop setup and return around a buffer copy.
    pub const COPY_SETUP: u64 = 4;
    pub const MALLOC: u64 = 16;
    pub const FREE: u64 = 8;
    /// One load or store.
    pub const ACCESS: u64 = 1;
    /// Masking the tag off a safe pointer; skipped with top-byte-ignore.
    pub const EXTRACT: u64 = 1;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("allocation size must be non-zero")]
    ZeroSize,
    #[error("no free tags")]
    OutOfTags,
    #[error("heap exhausted")]
    OutOfMemory,
    #[error("metadata table full")]
    MetadataTableFull,
    #[error("double free of {0:?}")]
    DoubleFree(SafePointer),
    #[error("{0:?} is not the base of an allocation")]
    ForeignPointer(SafePointer),
    #[error("{0:?} carries no tag")]
    UnprotectedPointer(SafePointer),
    #[error("out-of-bounds access through {0:?}")]
    OutOfBoundsAccess(SafePointer),
    #[error("address {0:#x} outside simulated memory")]
    InvalidAddress(u64),
    #[error("validation returned no response")]
    MissingResponse,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Pointer(#[from] PointerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Baseline,
    SoftBc,
    HeapSafe,
    HeapSafeNb,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::SoftBc, Mode::HeapSafe, Mode::HeapSafeNb];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::SoftBc => "softbc",
            Mode::HeapSafe => "heapsafe",
            Mode::HeapSafeNb => "heapsafe-nb",
        }
    }

    pub fn is_protected(self) -> bool {
        self != Mode::Baseline
    }

    pub fn uses_engine(self) -> bool {
        matches!(self, Mode::HeapSafe | Mode::HeapSafeNb)
    }

    /// Whether a violation stops the offending operation.
    pub fn stops_on_violation(self) -> bool {
        matches!(self, Mode::SoftBc | Mode::HeapSafe)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown mode {0:?} (expected baseline, softbc, heapsafe or heapsafe-nb)")]
pub struct UnknownMode(pub String);

impl FromStr for Mode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Mode::Baseline),
            "softbc" => Ok(Mode::SoftBc),
            "heapsafe" => Ok(Mode::HeapSafe),
            "heapsafe-nb" | "heapsafe_nb" | "nb" => Ok(Mode::HeapSafeNb),
            _ => Err(UnknownMode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeConfig {
    pub mode: Mode,
    /// Top-byte-ignore: the core masks the tag itself, so the library skips
    /// raw-pointer extraction. Functionally identical.
    pub tbi: bool,
    pub heap_size: u64,
    pub stack_size: u64,
    pub hart_id: u32,
    pub mt_size: usize,
    /// Non-blocking mode polls for exceptions every this many operations.
    pub drain_interval: u64,
    /// Whether library commands are issued from machine mode.
    pub machine_mode: bool,
    pub require_machine_mode: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            mode: Mode::HeapSafe,
            tbi: false,
            heap_size: 64 * 1024,
            stack_size: 4 * 1024,
            hart_id: 0,
            mt_size: 256,
            drain_interval: 8,
            machine_mode: true,
            require_machine_mode: false,
        }
    }
}

impl RuntimeConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn engine_config(&self) -> Result<EngineConfig, RuntimeError> {
        let mode = if self.mode == Mode::HeapSafeNb {
            ValidationMode::NonBlocking
        } else {
            ValidationMode::Blocking
        };
        Ok(EngineConfig::new(self.mt_size)?
            .with_mode(mode)
            .with_hart(self.hart_id)
            .with_machine_mode(self.require_machine_mode))
    }
}

/// Event counts accumulated by a runtime, priced later by a cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventCounts {
    pub plain: u64,
    pub blocking_validates: u64,
    pub async_validates: u64,
    pub stores: u64,
    pub frees: u64,
    pub soft_checks: u64,
    pub soft_updates: u64,
}

/// A detected bounds violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    /// Operation that performed the bad access.
    pub op: u64,
    /// Operation index at which the library learned about it.
    pub observed_at: u64,
    pub word: SafePointer,
}

impl Violation {
    pub fn latency(&self) -> u64 {
        self.observed_at - self.op
    }
}

pub struct Runtime<P: RoccPort = HeapSafeEngine> {
    config: RuntimeConfig,
    width: TagWidth,
    heap: SimHeap,
    pool: TagPool,
    bounds: BoundsTable,
    port: P,
    events: EventCounts,
    op_seq: u64,
    issued: u64,
    pending: VecDeque<(u64, u64)>,
    violations: Vec<Violation>,
}

impl Runtime<HeapSafeEngine> {
    /// A runtime with its own engine instance.
    pub fn new(config: RuntimeConfig) -> Result<Self, RuntimeError> {
        let engine = HeapSafeEngine::new(config.engine_config()?);
        Runtime::with_port(config, engine)
    }
}

impl<P: RoccPort> Runtime<P> {
    /// A runtime issuing commands through `port` for `config.hart_id`.
    ///
    /// The runtime must be the only issuer for its hart: it mirrors the
    /// engine's command numbering to attribute asynchronous exceptions.
    pub fn with_port(config: RuntimeConfig, port: P) -> Result<Self, RuntimeError> {
        let width = TagWidth::for_table_size(config.mt_size)?;
        Ok(Runtime {
            heap: SimHeap::new(config.heap_size, config.stack_size),
            pool: TagPool::new(width),
            bounds: BoundsTable::new(width),
            config,
            width,
            port,
            events: EventCounts::default(),
            op_seq: 0,
            issued: 0,
            pending: VecDeque::new(),
            violations: Vec::new(),
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn tag_width(&self) -> TagWidth {
        self.width
    }

    pub fn heap(&self) -> &SimHeap {
        &self.heap
    }

    pub fn memory(&self) -> &[u8] {
        self.heap.memory()
    }

    pub fn tag_pool(&self) -> &TagPool {
        &self.pool
    }

    pub fn port(&self) -> &P {
        &self.port
    }

    pub fn port_mut(&mut self) -> &mut P {
        &mut self.port
    }

    pub fn events(&self) -> EventCounts {
        self.events
    }

    /// Operations performed so far; also the index of the next one.
    pub fn op_count(&self) -> u64 {
        self.op_seq
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    fn begin_op(&mut self) -> u64 {
        let seq = self.op_seq;
        if self.config.mode == Mode::HeapSafeNb {
            let interval = self.config.drain_interval.max(1);
            if seq > 0 && seq.is_multiple_of(interval) {
                self.collect(seq);
            }
        }
        self.op_seq += 1;
        seq
    }

    fn collect(&mut self, observed_at: u64) -> usize {
        let exceptions = self.port.drain_exceptions(self.config.hart_id);
        let found = exceptions.len();
        for ex in exceptions {
            while self
                .pending
                .front()
                .is_some_and(|&(cmd, _)| cmd < ex.command_sequence)
            {
                self.pending.pop_front();
            }
            let op = match self.pending.front() {
                Some(&(cmd, op)) if cmd == ex.command_sequence => op,
                _ => observed_at.saturating_sub(1),
            };
            self.violations.push(Violation {
                op,
                observed_at,
                word: ex.offending_word,
            });
        }
        self.pending.clear();
        found
    }

    /// Explicit exception-handler entry point. Returns violations observed now.
    pub fn drain(&mut self) -> Vec<Violation> {
        let before = self.violations.len();
        if self.config.mode == Mode::HeapSafeNb {
            self.collect(self.op_seq);
        }
        self.violations[before..].to_vec()
    }

    fn issue(&mut self, cmd: EngineCommand) -> Result<Option<crate::rocc::EngineResponse>, RuntimeError> {
        let cmd = cmd
            .on_hart(self.config.hart_id)
            .privileged(self.config.machine_mode);
        self.issued += 1;
        Ok(self.port.issue(&cmd)?)
    }

    /// Runs the mode's bounds check on `sp`. `true` means out of bounds as
    /// far as the caller can tell right now.
    fn check(&mut self, sp: SafePointer, op: u64) -> Result<bool, RuntimeError> {
        match self.config.mode {
            Mode::Baseline => Ok(false),
            Mode::SoftBc => {
                self.events.soft_checks += 1;
                Ok(self.bounds.out_of_bounds(sp))
            }
            Mode::HeapSafe => {
                self.events.blocking_validates += 1;
                let response = self
                    .issue(build_hs_validate(sp))?
                    .ok_or(RuntimeError::MissingResponse)?;
                Ok(response.data != 0)
            }
            Mode::HeapSafeNb => {
                self.events.async_validates += 1;
                let cmd_seq = self.issued;
                self.issue(build_hs_validate_async(sp))?;
                self.pending.push_back((cmd_seq, op));
                Ok(false)
            }
        }
    }

    fn reject(&mut self, sp: SafePointer, op: u64) -> RuntimeError {
        self.violations.push(Violation {
            op,
            observed_at: op,
            word: sp,
        });
        RuntimeError::OutOfBoundsAccess(sp)
    }

    /// Address to dereference for `sp`, charging the extraction if needed.
    fn address_of(&mut self, sp: SafePointer) -> u64 {
        if !self.config.mode.is_protected() {
            return sp.bits();
        }
        if !self.config.tbi {
            self.events.plain += footprint::EXTRACT;
        }
        sp.raw(self.width)
    }

    pub fn malloc(&mut self, size: u64) -> Result<SafePointer, RuntimeError> {
        self.begin_op();
        if size == 0 {
            return Err(RuntimeError::ZeroSize);
        }
        if !self.config.mode.is_protected() {
            let base = self.heap.alloc(size, 0).ok_or(RuntimeError::OutOfMemory)?;
            self.events.plain += footprint::MALLOC;
            return Ok(SafePointer::from_bits(base));
        }

        let tag = self.pool.take().ok_or(RuntimeError::OutOfTags)?;
        let Some(base) = self.heap.alloc(size, tag) else {
            self.pool.give_back(tag);
            return Err(RuntimeError::OutOfMemory);
        };
        let sp = match make_safe(tag, base, self.width) {
            Ok(sp) => sp,
            Err(e) => {
                self.rollback_alloc(base, tag);
                return Err(e.into());
            }
        };
        self.events.plain += footprint::MALLOC;
        if self.config.mode.uses_engine() {
            self.events.stores += 1;
            let cmd = build_hs_store(sp, size).expect("size checked above");
            match self.issue(cmd) {
                Ok(_) => {}
                Err(RuntimeError::Engine(EngineError::TableFull)) => {
                    self.rollback_alloc(base, tag);
                    return Err(RuntimeError::MetadataTableFull);
                }
                Err(e) => {
                    self.rollback_alloc(base, tag);
                    return Err(e);
                }
            }
        } else {
            self.events.soft_updates += 1;
            self.bounds.insert(tag, base, size);
        }
        Ok(sp)
    }

    fn rollback_alloc(&mut self, base: u64, tag: u16) {
        self.heap.release(base);
        self.pool.give_back(tag);
    }

    pub fn free(&mut self, sp: SafePointer) -> Result<(), RuntimeError> {
        self.begin_op();
        let protected = self.config.mode.is_protected();
        let tag = if protected { sp.tag(self.width) } else { 0 };
        if protected && tag == 0 {
            return Err(RuntimeError::UnprotectedPointer(sp));
        }
        let base = self.address_of(sp);
        let alloc = *self
            .heap
            .allocation(base)
            .ok_or(RuntimeError::ForeignPointer(sp))?;
        if !alloc.live || alloc.tag != tag {
            return Err(RuntimeError::DoubleFree(sp));
        }
        self.events.plain += footprint::FREE;
        match self.config.mode {
            Mode::Baseline => {}
            Mode::SoftBc => {
                self.events.soft_updates += 1;
                self.bounds.remove(tag);
            }
            Mode::HeapSafe | Mode::HeapSafeNb => {
                self.events.frees += 1;
                self.issue(build_hs_free(sp))?;
            }
        }
        self.heap.release(base);
        if protected {
            self.pool.give_back(tag);
        }
        Ok(())
    }

    pub fn read(&mut self, sp: SafePointer) -> Result<u8, RuntimeError> {
        let op = self.begin_op();
        let addr = self.prepare_access(sp, op)?;
        self.heap.load(addr).ok_or(RuntimeError::InvalidAddress(addr))
    }

    pub fn write(&mut self, sp: SafePointer, value: u8) -> Result<(), RuntimeError> {
        let op = self.begin_op();
        let addr = self.prepare_access(sp, op)?;
        if self.heap.store(addr, value) {
            Ok(())
        } else {
            Err(RuntimeError::InvalidAddress(addr))
        }
    }

    fn prepare_access(&mut self, sp: SafePointer, op: u64) -> Result<u64, RuntimeError> {
        self.events.plain += footprint::ACCESS;
        let protected = self.config.mode.is_protected() && sp.is_protected(self.width);
        let addr = self.address_of(sp);
        if protected && self.check(sp, op)? && self.config.mode.stops_on_violation() {
            return Err(self.reject(sp, op));
        }
        Ok(addr)
    }

    /// Copies `src` to `dst`, checking the first and last destination byte.
    pub fn copy(&mut self, dst: SafePointer, src: &[u8]) -> Result<(), RuntimeError> {
        let op = self.begin_op();
        let protected = self.config.mode.is_protected();
        if protected && !dst.is_protected(self.width) {
            return Err(RuntimeError::UnprotectedPointer(dst));
        }
        self.events.plain += footprint::COPY_SETUP;
        if src.is_empty() {
            return Ok(());
        }
        let n = src.len() as u64;
        self.events.plain += n;
        let addr = self.address_of(dst);
        if protected {
            let last = dst
                .offset(n as i64 - 1, self.width)
                .map_err(|_| RuntimeError::InvalidAddress(addr))?;
            let first_oob = self.check(dst, op)?;
            let last_oob = self.check(last, op)?;
            if self.config.mode.stops_on_violation() && (first_oob || last_oob) {
                let word = if first_oob { dst } else { last };
                return Err(self.reject(word, op));
            }
        }
        if self.heap.store_bytes(addr, src) {
            Ok(())
        } else {
            Err(RuntimeError::InvalidAddress(addr))
        }
    }

    /// Unchecked copy to a raw address, e.g. a stack buffer. Costs the same
    /// in every mode.
    pub fn plain_copy(&mut self, addr: u64, src: &[u8]) -> Result<(), RuntimeError> {
        self.begin_op();
        self.events.plain += footprint::COPY_SETUP + src.len() as u64;
        if self.heap.store_bytes(addr, src) {
            Ok(())
        } else {
            Err(RuntimeError::InvalidAddress(addr))
        }
    }
}
