//! Tagged safe pointers.
//!
//! A [`SafePointer`] is a plain 64-bit word whose top `TagWidth` bits carry a
//! metadata tag and whose remaining low bits carry the raw address. Tag 0 marks
//! an ordinary, unprotected address, so `make_safe(0, r)` is bit-identical to `r`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PointerError {
    #[error("tag width {0} outside 1..=16")]
    InvalidTagWidth(u32),
    #[error("table size {0} is not a power of two >= 2")]
    InvalidTableSize(usize),
    #[error("tag {tag:#x} does not fit in {width} bits")]
    TagTooWide { tag: u64, width: u32 },
    #[error("raw address {0:#x} collides with the tag field")]
    RawAddressTooHigh(u64),
    #[error("offset {offset} from {raw:#x} leaves the raw address range")]
    AddressRangeOverflow { raw: u64, offset: i64 },
}

/// Number of high pointer bits reserved for the tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TagWidth(u32);

impl TagWidth {
    pub const MAX_BITS: u32 = 16;
    pub const DEFAULT: TagWidth = TagWidth(8);

    pub fn new(bits: u32) -> Result<Self, PointerError> {
        if (1..=Self::MAX_BITS).contains(&bits) {
            Ok(TagWidth(bits))
        } else {
            Err(PointerError::InvalidTagWidth(bits))
        }
    }

    /// Width needed to index a metadata table of `mt_size` rows (`log2(mt_size)`).
    pub fn for_table_size(mt_size: usize) -> Result<Self, PointerError> {
        if mt_size < 2 || !mt_size.is_power_of_two() {
            return Err(PointerError::InvalidTableSize(mt_size));
        }
        Self::new(mt_size.trailing_zeros())
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    /// Largest tag value, `2^bits - 1`.
    pub fn max_tag(self) -> u16 {
        ((1u32 << self.0) - 1) as u16
    }

    /// Number of distinct tags usable for protection (tag 0 is reserved).
    pub fn usable_tags(self) -> usize {
        self.max_tag() as usize
    }

    fn shift(self) -> u32 {
        64 - self.0
    }

    /// Mask selecting the raw-address bits.
    pub fn raw_mask(self) -> u64 {
        u64::MAX >> self.0
    }

    /// Largest representable raw address.
    pub fn max_raw(self) -> u64 {
        self.raw_mask()
    }
}

impl Default for TagWidth {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for TagWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bits", self.0)
    }
}

/// A 64-bit pointer word carrying a tag in its high bits.
///
/// The word is stored and copied like any other pointer; only the tag width
/// (a property of the system configuration) is needed to split it.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SafePointer(u64);

impl SafePointer {
    pub const NULL: SafePointer = SafePointer(0);

    /// Reinterprets an arbitrary 64-bit word as a pointer.
    pub const fn from_bits(bits: u64) -> Self {
        SafePointer(bits)
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    pub fn tag(self, width: TagWidth) -> u16 {
        (self.0 >> width.shift()) as u16
    }

    pub fn raw(self, width: TagWidth) -> u64 {
        self.0 & width.raw_mask()
    }

    pub fn is_protected(self, width: TagWidth) -> bool {
        self.tag(width) != 0
    }

    /// Pointer arithmetic: moves the raw address by `offset` bytes and keeps the tag.
    pub fn offset(self, offset: i64, width: TagWidth) -> Result<Self, PointerError> {
        let raw = self.raw(width);
        let moved = (raw as i128) + (offset as i128);
        if moved < 0 || moved > width.max_raw() as i128 {
            return Err(PointerError::AddressRangeOverflow { raw, offset });
        }
        Ok(SafePointer((self.0 & !width.raw_mask()) | moved as u64))
    }

    /// A type cast. The word passes through unchanged.
    pub fn cast(self) -> Self {
        self
    }
}

impl fmt::Debug for SafePointer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SafePointer({:#018x})", self.0)
    }
}

impl fmt::LowerHex for SafePointer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

/// Packs `tag` and `raw` into a safe pointer.
pub fn make_safe(tag: u16, raw: u64, width: TagWidth) -> Result<SafePointer, PointerError> {
    if tag > width.max_tag() {
        return Err(PointerError::TagTooWide {
            tag: tag as u64,
            width: width.bits(),
        });
    }
    if raw & !width.raw_mask() != 0 {
        return Err(PointerError::RawAddressTooHigh(raw));
    }
    Ok(SafePointer(((tag as u64) << width.shift()) | raw))
}

pub fn tag_of(p: SafePointer, width: TagWidth) -> u16 {
    p.tag(width)
}

pub fn raw_of(p: SafePointer, width: TagWidth) -> u64 {
    p.raw(width)
}

pub fn add_offset(p: SafePointer, offset: i64, width: TagWidth) -> Result<SafePointer, PointerError> {
    p.offset(offset, width)
}

pub fn reinterpret(p: SafePointer) -> SafePointer {
    p.cast()
}

pub fn is_protected(p: SafePointer, width: TagWidth) -> bool {
    p.is_protected(width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const W8: TagWidth = TagWidth::DEFAULT;

    #[test]
    fn packs_tag_into_top_byte() {
        let p = make_safe(0x2A, 0x0000_0000_8000_1000, W8).unwrap();
        assert_eq!(p.bits(), 0x2A00_0000_8000_1000);
        assert_eq!(tag_of(p, W8), 0x2A);
        assert_eq!(raw_of(p, W8), 0x8000_1000);
    }

    #[test]
    fn zero_tag_is_plain_address() {
        let p = make_safe(0, 0x1000, W8).unwrap();
        assert_eq!(p.bits(), 0x1000);
        assert!(!is_protected(p, W8));
        assert!(!is_protected(SafePointer::NULL, W8));
        assert!(is_protected(make_safe(1, 0x1000, W8).unwrap(), W8));
    }

    #[test]
    fn rejects_raw_in_tag_field() {
        assert_eq!(
            make_safe(0x01, 0xFF00_0000_0000_0000, W8),
            Err(PointerError::RawAddressTooHigh(0xFF00_0000_0000_0000))
        );
        assert!(matches!(
            make_safe(0x100, 0x1000, W8),
            Err(PointerError::TagTooWide { .. })
        ));
    }

    #[test]
    fn offsets_keep_tag() {
        let p = make_safe(0x2A, 0x1000, W8).unwrap();
        let q = add_offset(p, 1, W8).unwrap();
        assert_eq!((tag_of(q, W8), raw_of(q, W8)), (0x2A, 0x1001));
        let r = add_offset(q, -1, W8).unwrap();
        assert_eq!(r, p);
    }

    #[test]
    fn offset_overflow_is_an_error() {
        let top = make_safe(0x01, W8.max_raw(), W8).unwrap();
        assert!(matches!(
            add_offset(top, 1, W8),
            Err(PointerError::AddressRangeOverflow { .. })
        ));
        let bottom = make_safe(0x01, 0, W8).unwrap();
        assert!(add_offset(bottom, -1, W8).is_err());
    }

    #[test]
    fn cast_is_identity() {
        for bits in [0u64, 0x2A00_0000_0000_1234, u64::MAX] {
            let p = SafePointer::from_bits(bits);
            assert_eq!(reinterpret(p).bits(), bits);
        }
    }

    #[test]
    fn width_from_table_size() {
        assert_eq!(TagWidth::for_table_size(256).unwrap().bits(), 8);
        assert_eq!(TagWidth::for_table_size(16).unwrap().bits(), 4);
        assert_eq!(TagWidth::for_table_size(2).unwrap().bits(), 1);
        assert!(TagWidth::for_table_size(1).is_err());
        assert!(TagWidth::for_table_size(100).is_err());
        assert!(TagWidth::new(0).is_err());
        assert!(TagWidth::new(17).is_err());
    }

    // Every (tag, raw) pair over a 4-bit tag space and a sample of raw
    // addresses including the edges of the raw range.
    #[test]
    fn exhaustive_small_width_roundtrip() {
        for bits in 1..=4 {
            let w = TagWidth::new(bits).unwrap();
            let raws = [0, 1, 0x1000, 0xdead_beef, w.max_raw() - 1, w.max_raw()];
            for tag in 0..=w.max_tag() {
                for &raw in &raws {
                    let p = make_safe(tag, raw, w).unwrap();
                    assert_eq!(tag_of(p, w), tag);
                    assert_eq!(raw_of(p, w), raw);
                    assert_eq!(p.bits() >> (64 - bits), tag as u64);
                }
            }
        }
    }

    fn width_and_parts() -> impl Strategy<Value = (TagWidth, u16, u64)> {
        (1u32..=16).prop_flat_map(|bits| {
            let w = TagWidth::new(bits).unwrap();
            (Just(w), 0..=w.max_tag(), 0..=w.max_raw())
        })
    }

    proptest! {
        #[test]
        fn roundtrip((w, tag, raw) in width_and_parts()) {
            let p = make_safe(tag, raw, w).unwrap();
            prop_assert_eq!(tag_of(p, w), tag);
            prop_assert_eq!(raw_of(p, w), raw);
            prop_assert_eq!(tag_of(reinterpret(p), w), tag);
            // storing and reloading the word
            let stored = p.bits().to_le_bytes();
            prop_assert_eq!(SafePointer::from_bits(u64::from_le_bytes(stored)), p);
        }

        #[test]
        fn offsets_compose(
            tag in 1u16..=255,
            raw in 0x1_0000u64..0x1_0000_0000,
            a in -0x8000i64..0x8000,
            b in -0x8000i64..0x8000,
        ) {
            let p = make_safe(tag, raw, W8).unwrap();
            let stepwise = add_offset(add_offset(p, a, W8).unwrap(), b, W8).unwrap();
            let direct = add_offset(p, a + b, W8).unwrap();
            prop_assert_eq!(stepwise, direct);
            prop_assert_eq!(tag_of(stepwise, W8), tag);
        }
    }
}
