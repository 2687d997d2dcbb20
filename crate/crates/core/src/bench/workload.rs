//! Seeded synthetic workloads of buffer copies split between heap buffers
//! and an unprotected stack region.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Size of the stack buffer that stack-side copies target.
pub const STACK_BUFFER: u64 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    /// Number of copy operations.
    pub total_ops: usize,
    /// Share of copies that target heap buffers.
    pub heap_fraction: f64,
    /// Inclusive range of heap buffer sizes.
    pub buffer_size: (u64, u64),
    /// Inclusive range of bytes per copy.
    pub copy_len: (u64, u64),
    /// Inclusive range of copies a heap buffer receives before it is freed.
    pub lifetime: (u32, u32),
    /// Heap buffers live at the same time.
    pub slots: usize,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            total_ops: 20_000,
            heap_fraction: 0.5,
            buffer_size: (16, 64),
            copy_len: (4, 12),
            lifetime: (8, 24),
            slots: 4,
            seed: 0,
        }
    }
}

impl WorkloadSpec {
    pub fn with_fraction(mut self, heap_fraction: f64) -> Self {
        self.heap_fraction = heap_fraction;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_ops(mut self, total_ops: usize) -> Self {
        self.total_ops = total_ops;
        self
    }

    pub fn heap_ops(&self) -> usize {
        (self.total_ops as f64 * self.heap_fraction.clamp(0.0, 1.0)).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Byte `offset` of the buffer held in `slot`.
    Heap { slot: usize, offset: i64 },
    /// Byte `offset` of the stack region.
    Stack { offset: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Alloc { slot: usize, size: u64 },
    /// Writes `len` bytes `fill, fill+1, ...` to `target`.
    Copy { target: Target, len: u32, fill: u8 },
    Free { slot: usize },
}

impl Op {
    pub fn is_heap(&self) -> bool {
        !matches!(self, Op::Copy { target: Target::Stack { .. }, .. })
    }
}

pub fn copy_bytes(len: u32, fill: u8) -> Vec<u8> {
    (0..len).map(|i| fill.wrapping_add(i as u8)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub ops: Vec<Op>,
    pub slots: usize,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn heap_copies(&self) -> usize {
        self.ops
            .iter()
            .filter(|op| matches!(op, Op::Copy { target: Target::Heap { .. }, .. }))
            .count()
    }

    pub fn stack_copies(&self) -> usize {
        self.ops
            .iter()
            .filter(|op| matches!(op, Op::Copy { target: Target::Stack { .. }, .. }))
            .count()
    }

    pub fn allocs(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, Op::Alloc { .. })).count()
    }

    pub fn frees(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, Op::Free { .. })).count()
    }

    /// Sizes of the buffers live just before `ops[at]`, by slot.
    pub fn live_before(&self, at: usize) -> Vec<Option<u64>> {
        let mut live = vec![None; self.slots];
        for op in &self.ops[..at.min(self.ops.len())] {
            match *op {
                Op::Alloc { slot, size } => live[slot] = Some(size),
                Op::Free { slot } => live[slot] = None,
                Op::Copy { .. } => {}
            }
        }
        live
    }

    /// Inserts an overflowing copy at the first point at or after `at` where
    /// a heap buffer is live. Returns the index of the inserted op.
    pub fn inject_overflow(&mut self, at: usize, len: u32) -> Option<usize> {
        let mut live = self.live_before(at);
        for i in at..=self.ops.len() {
            if let Some((slot, size)) = live
                .iter()
                .enumerate()
                .find_map(|(s, sz)| sz.map(|sz| (s, sz)))
            {
                let op = Op::Copy {
                    target: Target::Heap { slot, offset: size as i64 },
                    len: len.max(1),
                    fill: 0xEE,
                };
                self.ops.insert(i, op);
                return Some(i);
            }
            match self.ops.get(i) {
                Some(Op::Alloc { slot, size }) => live[*slot] = Some(*size),
                Some(Op::Free { slot }) => live[*slot] = None,
                _ => {}
            }
        }
        None
    }
}

/// Builds the operation trace for `spec`. Identical specs give identical traces.
pub fn generate(spec: &WorkloadSpec) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let heap_ops = spec.heap_ops();
    let mut kinds = vec![true; heap_ops];
    kinds.resize(spec.total_ops, false);
    kinds.shuffle(&mut rng);

    let slots = spec.slots.max(1);
    let mut live: Vec<Option<(u64, u32)>> = vec![None; slots];
    let mut ops = Vec::with_capacity(spec.total_ops + spec.total_ops / 4);

    for heap in kinds {
        let fill: u8 = rng.gen();
        if !heap {
            let len = rng.gen_range(spec.copy_len.0..=spec.copy_len.1.min(STACK_BUFFER));
            let offset = rng.gen_range(0..=STACK_BUFFER - len);
            ops.push(Op::Copy {
                target: Target::Stack { offset },
                len: len as u32,
                fill,
            });
            continue;
        }
        let slot = rng.gen_range(0..slots);
        let (size, remaining) = match live[slot] {
            Some(state) => state,
            None => {
                let size = rng.gen_range(spec.buffer_size.0..=spec.buffer_size.1);
                let lifetime = rng.gen_range(spec.lifetime.0..=spec.lifetime.1).max(1);
                ops.push(Op::Alloc { slot, size });
                (size, lifetime)
            }
        };
        let len = rng.gen_range(spec.copy_len.0.min(size)..=spec.copy_len.1.min(size));
        let offset = rng.gen_range(0..=size - len);
        ops.push(Op::Copy {
            target: Target::Heap { slot, offset: offset as i64 },
            len: len as u32,
            fill,
        });
        if remaining <= 1 {
            ops.push(Op::Free { slot });
            live[slot] = None;
        } else {
            live[slot] = Some((size, remaining - 1));
        }
    }
    for (slot, state) in live.iter().enumerate() {
        if state.is_some() {
            ops.push(Op::Free { slot });
        }
    }
    Trace { ops, slots }
}
