use std::collections::BTreeMap;

/// Lowest simulated address. Page zero stays unmapped so null is never valid.
pub const MEMORY_BASE: u64 = 0x1000;
pub const ALIGN: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub size: u64,
    pub live: bool,
    /// Tag bound to the allocation, 0 when unprotected.
    pub tag: u16,
}

/// Byte-addressable simulated memory: a heap arena followed by a small
/// unmanaged "stack" region.
///
/// The allocator is first-fit over an address-ordered free list with
/// coalescing. The allocation map doubles as the ground truth for tests.
#[derive(Debug, Clone)]
pub struct SimHeap {
    memory: Vec<u8>,
    heap_size: u64,
    free: Vec<(u64, u64)>,
    allocations: BTreeMap<u64, Allocation>,
}

impl SimHeap {
    pub fn new(heap_size: u64, stack_size: u64) -> Self {
        let heap_size = heap_size / ALIGN * ALIGN;
        let free = if heap_size > 0 {
            vec![(MEMORY_BASE, heap_size)]
        } else {
            Vec::new()
        };
        SimHeap {
            memory: vec![0; (heap_size + stack_size) as usize],
            heap_size,
            free,
            allocations: BTreeMap::new(),
        }
    }

    pub fn heap_range(&self) -> std::ops::Range<u64> {
        MEMORY_BASE..MEMORY_BASE + self.heap_size
    }

    pub fn stack_base(&self) -> u64 {
        MEMORY_BASE + self.heap_size
    }

    pub fn memory_end(&self) -> u64 {
        MEMORY_BASE + self.memory.len() as u64
    }

    pub fn memory(&self) -> &[u8] {
        &self.memory
    }

    pub fn allocations(&self) -> &BTreeMap<u64, Allocation> {
        &self.allocations
    }

    pub fn allocation(&self, base: u64) -> Option<&Allocation> {
        self.allocations.get(&base)
    }

    pub fn live_allocations(&self) -> impl Iterator<Item = (u64, &Allocation)> {
        self.allocations
            .iter()
            .filter(|(_, a)| a.live)
            .map(|(&b, a)| (b, a))
    }

    pub fn alloc(&mut self, size: u64, tag: u16) -> Option<u64> {
        if size == 0 {
            return None;
        }
        let need = size.checked_add(ALIGN - 1)? / ALIGN * ALIGN;
        let idx = self.free.iter().position(|&(_, len)| len >= need)?;
        let (start, len) = self.free[idx];
        if len == need {
            self.free.remove(idx);
        } else {
            self.free[idx] = (start + need, len - need);
        }
        self.allocations.insert(start, Allocation { size, live: true, tag });
        Some(start)
    }

    /// Releases a live allocation. Returns `false` if `base` is not live.
    pub fn release(&mut self, base: u64) -> bool {
        let Some(a) = self.allocations.get_mut(&base) else {
            return false;
        };
        if !a.live {
            return false;
        }
        a.live = false;
        let len = a.size.div_ceil(ALIGN) * ALIGN;
        let idx = self.free.partition_point(|&(s, _)| s < base);
        self.free.insert(idx, (base, len));
        // merge with the following block, then the preceding one
        if idx + 1 < self.free.len() && base + len == self.free[idx + 1].0 {
            self.free[idx].1 += self.free[idx + 1].1;
            self.free.remove(idx + 1);
        }
        if idx > 0 && self.free[idx - 1].0 + self.free[idx - 1].1 == base {
            self.free[idx - 1].1 += self.free[idx].1;
            self.free.remove(idx);
        }
        true
    }

    pub fn in_memory(&self, addr: u64, len: u64) -> bool {
        addr >= MEMORY_BASE
            && addr
                .checked_add(len)
                .is_some_and(|end| end <= self.memory_end())
    }

    pub fn load(&self, addr: u64) -> Option<u8> {
        self.in_memory(addr, 1)
            .then(|| self.memory[(addr - MEMORY_BASE) as usize])
    }

    pub fn store(&mut self, addr: u64, value: u8) -> bool {
        if !self.in_memory(addr, 1) {
            return false;
        }
        self.memory[(addr - MEMORY_BASE) as usize] = value;
        true
    }

    pub fn store_bytes(&mut self, addr: u64, bytes: &[u8]) -> bool {
        if !self.in_memory(addr, bytes.len() as u64) {
            return false;
        }
        let start = (addr - MEMORY_BASE) as usize;
        self.memory[start..start + bytes.len()].copy_from_slice(bytes);
        true
    }

    pub fn load_bytes(&self, addr: u64, len: u64) -> Option<&[u8]> {
        if !self.in_memory(addr, len) {
            return None;
        }
        let start = (addr - MEMORY_BASE) as usize;
        Some(&self.memory[start..start + len as usize])
    }

    /// Total free bytes in the heap arena.
    pub fn free_bytes(&self) -> u64 {
        self.free.iter().map(|&(_, l)| l).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_fit_and_coalescing() {
        let mut h = SimHeap::new(256, 0);
        let a = h.alloc(16, 0).unwrap();
        let b = h.alloc(16, 0).unwrap();
        let c = h.alloc(13, 0).unwrap();
        assert_eq!((a, b, c), (MEMORY_BASE, MEMORY_BASE + 16, MEMORY_BASE + 32));
        assert!(h.release(a));
        // a 32-byte request does not fit the 16-byte hole
        let d = h.alloc(32, 0).unwrap();
        assert_eq!(d, MEMORY_BASE + 48);
        let e = h.alloc(8, 0).unwrap();
        assert_eq!(e, a);
        assert!(h.release(b));
        assert!(h.release(c));
        assert!(h.release(d));
        assert!(h.release(e));
        assert_eq!(h.free_bytes(), 256);
        assert_eq!(h.alloc(256, 0), Some(MEMORY_BASE));
    }

    #[test]
    fn release_rules() {
        let mut h = SimHeap::new(64, 0);
        let a = h.alloc(8, 0).unwrap();
        assert!(!h.release(a + 1));
        assert!(h.release(a));
        assert!(!h.release(a));
        assert!(h.alloc(65, 0).is_none());
        assert!(h.alloc(0, 0).is_none());
    }

    #[test]
    fn memory_edges() {
        let mut h = SimHeap::new(64, 16);
        assert_eq!(h.stack_base(), MEMORY_BASE + 64);
        assert!(h.store(h.memory_end() - 1, 7));
        assert!(!h.store(h.memory_end(), 7));
        assert!(!h.store(MEMORY_BASE - 1, 7));
        assert_eq!(h.load(0), None);
        assert!(!h.store_bytes(h.memory_end() - 2, &[1, 2, 3]));
    }
}
