//! A software model of a tagged-pointer heap protection scheme.
//!
//! Heap pointers carry a small tag in their top bits. A coprocessor keeps a
//! tag-addressed table of `[base, bound)` ranges and validates accesses on
//! request. The crate models every layer of that design:
//!
//! * [`pointer`]: the safe-pointer word and tag propagation;
//! * [`rocc`]: the 32-bit custom instruction codec and command messages;
//! * [`engine`]: the coprocessor with its metadata table;
//! * [`runtime`]: the safe-heap library over simulated memory, plus the
//!   unprotected and software-checked reference paths;
//! * [`bench`]: workloads, attack replays, the cycle cost model and sweeps;
//! * [`config`] and [`cli`]: the command-line front end.

pub mod bench;
pub mod cli;
pub mod config;
pub mod engine;
pub mod pointer;
pub mod rocc;
pub mod runtime;

pub use engine::{EngineConfig, EngineFleet, HeapSafeEngine, MetadataRow, MetadataTable, ValidationMode};
pub use pointer::{SafePointer, TagWidth};
pub use rocc::{EngineCommand, EngineResponse, Function, RoccInstruction};
pub use runtime::{Mode, Runtime, RuntimeConfig, RuntimeError};
