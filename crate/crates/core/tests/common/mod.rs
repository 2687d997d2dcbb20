#![allow(dead_code)]

//! Brute-force reference models shared by the integration and acceptance tests.

use std::collections::HashMap;

use heapsafe::engine::EngineError;
use heapsafe::pointer::{make_safe, SafePointer, TagWidth};
use rand::Rng;

/// Live regions by tag, with containment recomputed on every query.
#[derive(Debug, Default, Clone)]
pub struct RegionOracle {
    pub live: HashMap<u16, (u64, u64)>,
}

impl RegionOracle {
    pub fn store(&mut self, tag: u16, base: u64, size: u64) -> Result<(), EngineError> {
        if tag == 0 {
            return Err(EngineError::ZeroTagStore);
        }
        if size == 0 {
            return Err(EngineError::ZeroSize);
        }
        if self.live.contains_key(&tag) {
            return Err(EngineError::DuplicateTag(tag));
        }
        self.live.insert(tag, (base, size));
        Ok(())
    }

    pub fn free(&mut self, tag: u16) {
        self.live.remove(&tag);
    }

    pub fn out_of_bounds(&self, tag: u16, addr: u64) -> bool {
        if tag == 0 {
            return false;
        }
        match self.live.get(&tag) {
            Some(&(base, size)) => !(base <= addr && addr - base < size),
            None => true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EngineOp {
    Store(SafePointer, u64),
    Free(SafePointer),
    Validate(SafePointer),
}

/// A random store/free/validate sequence over `width`'s tag space.
/// Validations probe addresses near the edges of previously stored regions.
pub fn random_engine_ops<R: Rng>(rng: &mut R, width: TagWidth, len: usize) -> Vec<EngineOp> {
    let mut regions: Vec<(u16, u64, u64)> = Vec::new();
    let max_tag = width.max_tag();
    (0..len)
        .map(|_| {
            let roll = rng.gen_range(0..10);
            if roll < 4 {
                let tag = if rng.gen_bool(0.05) { 0 } else { rng.gen_range(1..=max_tag) };
                let base = rng.gen_range(0x1000u64..0x10_0000) & !7;
                let size = if rng.gen_bool(0.02) { 0 } else { rng.gen_range(1..=256) };
                regions.push((tag, base, size));
                EngineOp::Store(make_safe(tag, base, width).unwrap(), size)
            } else if roll < 6 {
                let tag = if !regions.is_empty() && rng.gen_bool(0.8) {
                    regions[rng.gen_range(0..regions.len())].0
                } else {
                    rng.gen_range(0..=max_tag)
                };
                EngineOp::Free(make_safe(tag, rng.gen_range(0x1000..0x2000), width).unwrap())
            } else {
                let (tag, addr) = if !regions.is_empty() && rng.gen_bool(0.85) {
                    let (tag, base, size) = regions[rng.gen_range(0..regions.len())];
                    let addr = match rng.gen_range(0..5) {
                        0 => base,
                        1 => base + size,
                        2 => base.saturating_sub(1),
                        3 => (base + size).saturating_sub(1),
                        _ => base + rng.gen_range(0..=size),
                    };
                    let tag = if rng.gen_bool(0.1) { rng.gen_range(0..=max_tag) } else { tag };
                    (tag, addr)
                } else {
                    (rng.gen_range(0..=max_tag), rng.gen_range(0x1000..0x10_0000))
                };
                EngineOp::Validate(make_safe(tag, addr, width).unwrap())
            }
        })
        .collect()
}
