use crate::pointer::{SafePointer, TagWidth};

/// In-process bounds table used by the software-checked reference path.
///
/// Indexed directly by tag; each entry holds `(base, bound)` of the live
/// allocation bound to that tag.
#[derive(Debug, Clone)]
pub struct BoundsTable {
    entries: Vec<Option<(u64, u64)>>,
    width: TagWidth,
}

impl BoundsTable {
    pub fn new(width: TagWidth) -> Self {
        BoundsTable {
            entries: vec![None; width.max_tag() as usize + 1],
            width,
        }
    }

    pub fn insert(&mut self, tag: u16, base: u64, size: u64) {
        self.entries[tag as usize] = Some((base, base + size));
    }

    pub fn remove(&mut self, tag: u16) {
        self.entries[tag as usize] = None;
    }

    /// `true` when `sp` may not be dereferenced.
    pub fn out_of_bounds(&self, sp: SafePointer) -> bool {
        let tag = sp.tag(self.width);
        if tag == 0 {
            return false;
        }
        let addr = sp.raw(self.width);
        match self.entries[tag as usize] {
            Some((base, bound)) => !(base..bound).contains(&addr),
            None => true,
        }
    }
}
