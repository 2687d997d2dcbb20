//! The coprocessor model: command decoder, metadata parser, tag-addressed
//! metadata table and bounds validator.
//!
//! One [`HeapSafeEngine`] serves one hart. An [`EngineFleet`] holds several
//! instances and routes each command to the engine bound to its `hart_id`.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::pointer::{PointerError, SafePointer, TagWidth};
use crate::rocc::{EngineCommand, EngineResponse, Function};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("metadata table full")]
    TableFull,
    #[error("tag {0:#x} already has a valid row")]
    DuplicateTag(u16),
    #[error("store with tag 0")]
    ZeroTagStore,
    #[error("store with zero size")]
    ZeroSize,
    #[error("bound overflows the address range")]
    BoundOverflow,
    #[error("illegal instruction (opcode {opcode:#x}, funct7 {funct7:#x})")]
    IllegalInstruction { opcode: u8, funct7: u8 },
    #[error("command issued outside machine mode")]
    PrivilegeViolation,
    #[error("no engine bound to hart {0}")]
    UnknownHart(u32),
    #[error("invalid configuration: {0}")]
    Config(#[from] PointerError),
}

/// How validation verdicts reach the core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ValidationMode {
    /// The core waits for the verdict in `rd`.
    #[default]
    Blocking,
    /// Validation never stalls; violations are queued as [`AsyncException`]s.
    NonBlocking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub mt_size: usize,
    pub tag_width: TagWidth,
    pub mode: ValidationMode,
    pub hart_id: u32,
    pub require_machine_mode: bool,
}

impl EngineConfig {
    /// A blocking engine for hart 0 whose tag width is `log2(mt_size)`.
    pub fn new(mt_size: usize) -> Result<Self, EngineError> {
        Ok(EngineConfig {
            mt_size,
            tag_width: TagWidth::for_table_size(mt_size)?,
            mode: ValidationMode::Blocking,
            hart_id: 0,
            require_machine_mode: false,
        })
    }

    pub fn with_mode(mut self, mode: ValidationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_hart(mut self, hart_id: u32) -> Self {
        self.hart_id = hart_id;
        self
    }

    pub fn with_machine_mode(mut self, require: bool) -> Self {
        self.require_machine_mode = require;
        self
    }

    /// Parses pointers with a wider tag field than the table size implies.
    /// Only useful for exercising a table smaller than the tag space.
    pub fn with_tag_width(mut self, tag_width: TagWidth) -> Self {
        self.tag_width = tag_width;
        self
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::new(256).expect("256 is a valid table size")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetadataRow {
    pub tag: u16,
    /// Inclusive lower limit.
    pub base: u64,
    /// Exclusive upper limit.
    pub bound: u64,
    pub valid: bool,
}

impl MetadataRow {
    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.bound
    }
}

/// Fixed-size metadata table searched by tag.
#[derive(Debug, Clone)]
pub struct MetadataTable {
    rows: Vec<MetadataRow>,
    tag_width: TagWidth,
}

impl MetadataTable {
    pub fn new(mt_size: usize, tag_width: TagWidth) -> Self {
        MetadataTable {
            rows: vec![MetadataRow::default(); mt_size],
            tag_width,
        }
    }

    pub fn rows(&self) -> &[MetadataRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn tag_width(&self) -> TagWidth {
        self.tag_width
    }

    /// Number of valid rows.
    pub fn occupancy(&self) -> usize {
        self.rows.iter().filter(|r| r.valid).count()
    }

    // Every row is compared against the key; in hardware this is one parallel
    // match. At most one valid row can hold a given tag.
    fn search(&self, tag: u16) -> Option<usize> {
        self.rows.iter().position(|r| r.valid && r.tag == tag)
    }

    pub fn lookup(&self, tag: u16) -> Option<&MetadataRow> {
        self.search(tag).map(|i| &self.rows[i])
    }

    /// Writes `{tag, base, base + size}` into the lowest invalid row and
    /// returns its index.
    pub fn store(&mut self, sp: SafePointer, size: u64) -> Result<usize, EngineError> {
        let tag = sp.tag(self.tag_width);
        let base = sp.raw(self.tag_width);
        if tag == 0 {
            return Err(EngineError::ZeroTagStore);
        }
        if size == 0 {
            return Err(EngineError::ZeroSize);
        }
        if self.search(tag).is_some() {
            return Err(EngineError::DuplicateTag(tag));
        }
        let bound = base
            .checked_add(size)
            .filter(|&b| b <= self.tag_width.max_raw() + 1)
            .ok_or(EngineError::BoundOverflow)?;
        let slot = self
            .rows
            .iter()
            .position(|r| !r.valid)
            .ok_or(EngineError::TableFull)?;
        self.rows[slot] = MetadataRow {
            tag,
            base,
            bound,
            valid: true,
        };
        Ok(slot)
    }

    /// Returns `true` when the access is out of bounds.
    ///
    /// Tag 0 is never checked. A protected pointer whose tag has no valid row
    /// (never stored, or freed) is out of bounds.
    pub fn validate(&self, sp: SafePointer) -> bool {
        let tag = sp.tag(self.tag_width);
        if tag == 0 {
            return false;
        }
        let ptr = sp.raw(self.tag_width);
        match self.lookup(tag) {
            Some(row) => ptr < row.base || ptr >= row.bound,
            None => true,
        }
    }

    /// Clears the valid bit of the row holding `sp`'s tag, leaving the rest
    /// of the row as it was.
    pub fn free(&mut self, sp: SafePointer) {
        let tag = sp.tag(self.tag_width);
        if tag == 0 {
            return;
        }
        if let Some(i) = self.search(tag) {
            self.rows[i].valid = false;
        }
    }
}

/// A deferred out-of-bounds report from a non-blocking engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsyncException {
    pub hart_id: u32,
    pub offending_word: SafePointer,
    pub command_sequence: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOutcome {
    Done,
    Verdict(bool),
    Exception,
    Error(EngineError),
}

/// One line of the command log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub sequence: u64,
    pub hart_id: u32,
    pub word: u32,
    pub rs1: u64,
    pub rs2: u64,
    pub outcome: TraceOutcome,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:08x} {:016x} {:016x} ",
            self.sequence, self.hart_id, self.word, self.rs1, self.rs2
        )?;
        match self.outcome {
            TraceOutcome::Done => write!(f, "-"),
            TraceOutcome::Verdict(oob) => write!(f, "oob={}", oob as u8),
            TraceOutcome::Exception => write!(f, "exception"),
            TraceOutcome::Error(e) => write!(f, "error:{e}"),
        }
    }
}

/// Anything that accepts coprocessor commands on behalf of one or more harts.
pub trait RoccPort {
    fn issue(&mut self, cmd: &EngineCommand) -> Result<Option<EngineResponse>, EngineError>;

    /// Takes the pending asynchronous exceptions for `hart_id`, oldest first.
    fn drain_exceptions(&mut self, hart_id: u32) -> Vec<AsyncException>;
}

impl<P: RoccPort + ?Sized> RoccPort for &mut P {
    fn issue(&mut self, cmd: &EngineCommand) -> Result<Option<EngineResponse>, EngineError> {
        (**self).issue(cmd)
    }

    fn drain_exceptions(&mut self, hart_id: u32) -> Vec<AsyncException> {
        (**self).drain_exceptions(hart_id)
    }
}

#[derive(Debug, Clone)]
pub struct HeapSafeEngine {
    config: EngineConfig,
    table: MetadataTable,
    exceptions: VecDeque<AsyncException>,
    sequence: u64,
    trace: Option<Vec<TraceRecord>>,
}

impl HeapSafeEngine {
    pub fn new(config: EngineConfig) -> Self {
        HeapSafeEngine {
            table: MetadataTable::new(config.mt_size, config.tag_width),
            config,
            exceptions: VecDeque::new(),
            sequence: 0,
            trace: None,
        }
    }

    /// Starts recording every handled command.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn table(&self) -> &MetadataTable {
        &self.table
    }

    pub fn hart_id(&self) -> u32 {
        self.config.hart_id
    }

    /// Sequence number the next command will receive.
    pub fn next_sequence(&self) -> u64 {
        self.sequence
    }

    pub fn pending_exceptions(&self) -> usize {
        self.exceptions.len()
    }

    pub fn hs_store(&mut self, sp: SafePointer, size: u64) -> Result<(), EngineError> {
        self.table.store(sp, size).map(|_| ())
    }

    pub fn hs_validate(&self, sp: SafePointer) -> bool {
        self.table.validate(sp)
    }

    pub fn hs_free(&mut self, sp: SafePointer) {
        self.table.free(sp)
    }

    pub fn handle(&mut self, cmd: &EngineCommand) -> Result<Option<EngineResponse>, EngineError> {
        let sequence = self.sequence;
        self.sequence += 1;
        let (result, outcome) = self.dispatch(cmd, sequence);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                sequence,
                hart_id: self.config.hart_id,
                word: encode_lossy(cmd),
                rs1: cmd.rs1_value,
                rs2: cmd.rs2_value,
                outcome,
            });
        }
        result
    }

    fn dispatch(
        &mut self,
        cmd: &EngineCommand,
        sequence: u64,
    ) -> (Result<Option<EngineResponse>, EngineError>, TraceOutcome) {
        let function = match cmd.inst.function() {
            Ok(f) => f,
            Err(_) => {
                let e = EngineError::IllegalInstruction {
                    opcode: cmd.inst.opcode,
                    funct7: cmd.inst.funct7,
                };
                return (Err(e), TraceOutcome::Error(e));
            }
        };
        if self.config.require_machine_mode && !cmd.privileged {
            let e = EngineError::PrivilegeViolation;
            return (Err(e), TraceOutcome::Error(e));
        }
        let sp = SafePointer::from_bits(cmd.rs1_value);
        match function {
            Function::Store => match self.hs_store(sp, cmd.rs2_value) {
                Ok(()) => (Ok(None), TraceOutcome::Done),
                Err(e) => (Err(e), TraceOutcome::Error(e)),
            },
            Function::Free => {
                self.hs_free(sp);
                (Ok(None), TraceOutcome::Done)
            }
            Function::Validate => {
                let oob = self.hs_validate(sp);
                match self.config.mode {
                    ValidationMode::Blocking => {
                        let response = cmd.inst.is_blocking().then_some(EngineResponse {
                            rd: cmd.inst.rd,
                            data: oob as u64,
                        });
                        (Ok(response), TraceOutcome::Verdict(oob))
                    }
                    ValidationMode::NonBlocking => {
                        if oob {
                            self.exceptions.push_back(AsyncException {
                                hart_id: self.config.hart_id,
                                offending_word: sp,
                                command_sequence: sequence,
                            });
                            (Ok(None), TraceOutcome::Exception)
                        } else {
                            (Ok(None), TraceOutcome::Verdict(false))
                        }
                    }
                }
            }
        }
    }

    pub fn drain_exceptions(&mut self) -> Vec<AsyncException> {
        self.exceptions.drain(..).collect()
    }
}

fn encode_lossy(cmd: &EngineCommand) -> u32 {
    let i = &cmd.inst;
    (i.funct7 as u32 & 0x7f) << 25
        | (i.rs2 as u32 & 0x1f) << 20
        | (i.rs1 as u32 & 0x1f) << 15
        | (i.xd as u32) << 14
        | (i.xs1 as u32) << 13
        | (i.xs2 as u32) << 12
        | (i.rd as u32 & 0x1f) << 7
        | (i.opcode as u32 & 0x7f)
}

impl RoccPort for HeapSafeEngine {
    fn issue(&mut self, cmd: &EngineCommand) -> Result<Option<EngineResponse>, EngineError> {
        if cmd.hart_id != self.config.hart_id {
            return Err(EngineError::UnknownHart(cmd.hart_id));
        }
        self.handle(cmd)
    }

    fn drain_exceptions(&mut self, hart_id: u32) -> Vec<AsyncException> {
        if hart_id == self.config.hart_id {
            HeapSafeEngine::drain_exceptions(self)
        } else {
            Vec::new()
        }
    }
}

/// Several engine instances, one per hart.
#[derive(Debug, Clone, Default)]
pub struct EngineFleet {
    engines: Vec<HeapSafeEngine>,
}

impl EngineFleet {
    /// Builds `n` engines from `template`, bound to harts `0..n`.
    pub fn uniform(n: usize, template: EngineConfig) -> Self {
        EngineFleet {
            engines: (0..n as u32)
                .map(|hart| HeapSafeEngine::new(template.with_hart(hart)))
                .collect(),
        }
    }

    pub fn from_engines(engines: Vec<HeapSafeEngine>) -> Self {
        EngineFleet { engines }
    }

    pub fn len(&self) -> usize {
        self.engines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.engines.is_empty()
    }

    pub fn select_engine(&mut self, hart_id: u32) -> Result<&mut HeapSafeEngine, EngineError> {
        self.engines
            .iter_mut()
            .find(|e| e.hart_id() == hart_id)
            .ok_or(EngineError::UnknownHart(hart_id))
    }

    pub fn engine(&self, hart_id: u32) -> Option<&HeapSafeEngine> {
        self.engines.iter().find(|e| e.hart_id() == hart_id)
    }

    pub fn handle(&mut self, cmd: &EngineCommand) -> Result<Option<EngineResponse>, EngineError> {
        self.select_engine(cmd.hart_id)?.handle(cmd)
    }
}

impl RoccPort for EngineFleet {
    fn issue(&mut self, cmd: &EngineCommand) -> Result<Option<EngineResponse>, EngineError> {
        self.handle(cmd)
    }

    fn drain_exceptions(&mut self, hart_id: u32) -> Vec<AsyncException> {
        self.select_engine(hart_id)
            .map(|e| e.drain_exceptions())
            .unwrap_or_default()
    }
}
