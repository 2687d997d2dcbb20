use std::collections::BTreeSet;

use crate::pointer::TagWidth;

/// The process-local set of unused tags, `1..=2^width - 1`.
#[derive(Debug, Clone)]
pub struct TagPool {
    free: BTreeSet<u16>,
    capacity: usize,
}

impl TagPool {
    pub fn new(width: TagWidth) -> Self {
        TagPool {
            free: (1..=width.max_tag()).collect(),
            capacity: width.usable_tags(),
        }
    }

    /// Takes the lowest free tag.
    pub fn take(&mut self) -> Option<u16> {
        self.free.pop_first()
    }

    pub fn give_back(&mut self, tag: u16) {
        debug_assert!(tag != 0);
        self.free.insert(tag);
    }

    pub fn is_free(&self, tag: u16) -> bool {
        self.free.contains(&tag)
    }

    pub fn available(&self) -> usize {
        self.free.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowest_first_and_reuse() {
        let mut pool = TagPool::new(TagWidth::new(2).unwrap());
        assert_eq!(pool.capacity(), 3);
        assert_eq!(pool.take(), Some(1));
        assert_eq!(pool.take(), Some(2));
        pool.give_back(1);
        assert_eq!(pool.take(), Some(1));
        assert_eq!(pool.take(), Some(3));
        assert_eq!(pool.take(), None);
    }
}
