//! Addresses, security domains and cache geometry.
//!
//! Every simulated address is a 48-bit physical address. Caches only ever see
//! whole lines, so most of the code works with [`Address::line`] and the
//! per-model [`AddressLayout`] that splits a line address into index and tag.

use std::fmt;

use thiserror::Error;

/// Number of significant address bits.
pub const ADDRESS_BITS: u32 = 48;
const ADDRESS_MASK: u64 = (1 << ADDRESS_BITS) - 1;

/// Largest number of extra index bits a STAR-NEWS cache may be configured with.
pub const MAX_EXTRA_INDEX_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AddressError {
    #[error("address {0:#x} does not fit in 48 bits")]
    TooWide(u64),
}

/// A 48-bit simulated physical address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address(u64);

impl Address {
    pub const ZERO: Address = Address(0);

    pub fn new(value: u64) -> Result<Self, AddressError> {
        if value & !ADDRESS_MASK != 0 {
            return Err(AddressError::TooWide(value));
        }
        Ok(Address(value))
    }

    /// Builds an address from a value already known to be in range.
    ///
    /// Panics if the value is wider than 48 bits.
    pub fn from_raw(value: u64) -> Self {
        Self::new(value).expect("address out of range")
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Line-aligned address containing `self`.
    pub fn line(self, line_size: usize) -> Address {
        Address(self.0 & !(line_size as u64 - 1))
    }

    /// Line number (address divided by the line size).
    pub fn line_number(self, offset_bits: u32) -> u64 {
        self.0 >> offset_bits
    }

    pub fn offset(self, bytes: u64) -> Address {
        Address::from_raw(self.0 + bytes)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({:#x})", self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// Security domain identifier.
///
/// `DomainId::NONE` marks lines without an owner. It never matches any
/// request's domain, so a line tagged `NONE` can never produce a hit.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainId(u16);

impl DomainId {
    pub const NONE: DomainId = DomainId(u16::MAX);

    pub const fn new(id: u16) -> Self {
        assert!(id != u16::MAX, "domain id u16::MAX is reserved");
        DomainId(id)
    }

    pub fn get(self) -> u16 {
        self.0
    }

    pub fn is_none(self) -> bool {
        self == Self::NONE
    }

    /// Domain match as seen by a cache lookup. `NONE` matches nothing,
    /// including itself.
    pub fn matches(self, other: DomainId) -> bool {
        !self.is_none() && self == other
    }
}

impl fmt::Debug for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_none() {
            f.write_str("DomainId(NONE)")
        } else {
            write!(f, "DomainId({})", self.0)
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_none() {
            f.write_str("none")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("domain id width must be between 1 and 15 bits, got {0}")]
    BadWidth(u32),
    #[error("all {0} domain ids are allocated")]
    Exhausted(u32),
}

/// Hands out fresh domain ids within a configured width.
///
/// Running out of ids is a configuration error, never a wraparound.
#[derive(Debug, Clone)]
pub struct DomainAllocator {
    width_bits: u32,
    next: u32,
}

impl DomainAllocator {
    pub const DEFAULT_WIDTH: u32 = 8;

    pub fn new(width_bits: u32) -> Result<Self, DomainError> {
        if !(1..=15).contains(&width_bits) {
            return Err(DomainError::BadWidth(width_bits));
        }
        Ok(Self { width_bits, next: 0 })
    }

    pub fn allocate(&mut self) -> Result<DomainId, DomainError> {
        let capacity = 1u32 << self.width_bits;
        if self.next >= capacity {
            return Err(DomainError::Exhausted(capacity));
        }
        let id = DomainId::new(self.next as u16);
        self.next += 1;
        Ok(id)
    }
}

impl Default for DomainAllocator {
    fn default() -> Self {
        Self::new(Self::DEFAULT_WIDTH).unwrap()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("{what} must be a non-zero power of two, got {value}")]
    NotPowerOfTwo { what: &'static str, value: usize },
    #[error("associativity {assoc} does not divide {lines} lines")]
    BadAssociativity { assoc: usize, lines: usize },
    #[error("{0} extra index bits exceeds the supported maximum of 16")]
    TooManyIndexBits(u32),
    #[error("layout needs {0} index+offset bits, more than the 48-bit address")]
    LayoutTooWide(u32),
}

/// Size and shape of one cache level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheGeometry {
    pub line_size: usize,
    pub total_lines: usize,
    /// Ways per set. Only meaningful for set-associative organizations.
    pub associativity: usize,
}

impl CacheGeometry {
    pub fn new(line_size: usize, total_lines: usize, associativity: usize) -> Result<Self, GeometryError> {
        check_pow2("line size", line_size)?;
        check_pow2("line count", total_lines)?;
        check_pow2("associativity", associativity)?;
        if associativity > total_lines {
            return Err(GeometryError::BadAssociativity {
                assoc: associativity,
                lines: total_lines,
            });
        }
        Ok(Self {
            line_size,
            total_lines,
            associativity,
        })
    }

    /// 32 KiB, 64-byte lines, 2 ways: 512 lines in 256 sets.
    pub fn default_l1() -> Self {
        Self::new(64, 512, 2).unwrap()
    }

    /// 256 KiB, 64-byte lines, 8 ways.
    pub fn default_l2() -> Self {
        Self::new(64, 4096, 8).unwrap()
    }

    pub fn capacity_bytes(&self) -> usize {
        self.line_size * self.total_lines
    }

    pub fn offset_bits(&self) -> u32 {
        self.line_size.trailing_zeros()
    }

    pub fn sets(&self) -> usize {
        self.total_lines / self.associativity
    }

    /// log2 of the number of lines: the NEWS base index width.
    pub fn base_index_bits(&self) -> u32 {
        self.total_lines.trailing_zeros()
    }
}

fn check_pow2(what: &'static str, value: usize) -> Result<(), GeometryError> {
    if value == 0 || !value.is_power_of_two() {
        return Err(GeometryError::NotPowerOfTwo { what, value });
    }
    Ok(())
}

/// Splitting of an address into `(tag | index | offset)` fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressLayout {
    pub offset_bits: u32,
    pub index_bits: u32,
}

/// Fields of a decomposed address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Decomposed {
    pub offset: u64,
    pub index: u64,
    pub tag: u64,
}

impl AddressLayout {
    pub fn new(offset_bits: u32, index_bits: u32) -> Result<Self, GeometryError> {
        if offset_bits + index_bits > ADDRESS_BITS {
            return Err(GeometryError::LayoutTooWide(offset_bits + index_bits));
        }
        Ok(Self {
            offset_bits,
            index_bits,
        })
    }

    /// Index is the set number.
    pub fn set_associative(geometry: &CacheGeometry) -> Self {
        Self::new(geometry.offset_bits(), geometry.sets().trailing_zeros()).unwrap()
    }

    /// No index; the tag is the whole line number.
    pub fn fully_associative(geometry: &CacheGeometry) -> Self {
        Self::new(geometry.offset_bits(), 0).unwrap()
    }

    /// Index of `log2(lines) + extra_index_bits` bits directly above the offset.
    pub fn news(geometry: &CacheGeometry, extra_index_bits: u32) -> Result<Self, GeometryError> {
        if extra_index_bits > MAX_EXTRA_INDEX_BITS {
            return Err(GeometryError::TooManyIndexBits(extra_index_bits));
        }
        Self::new(geometry.offset_bits(), geometry.base_index_bits() + extra_index_bits)
    }

    pub fn tag_bits(&self) -> u32 {
        ADDRESS_BITS - self.offset_bits - self.index_bits
    }

    pub fn decompose(&self, addr: Address) -> Decomposed {
        let v = addr.value();
        let offset = v & mask(self.offset_bits);
        let index = (v >> self.offset_bits) & mask(self.index_bits);
        let tag = v >> (self.offset_bits + self.index_bits);
        Decomposed { offset, index, tag }
    }

    pub fn reassemble(&self, parts: Decomposed) -> Address {
        let v = (parts.tag << (self.offset_bits + self.index_bits)) | (parts.index << self.offset_bits) | parts.offset;
        Address::from_raw(v)
    }

    /// Line address for a `(tag, index)` pair.
    pub fn line_address(&self, tag: u64, index: u64) -> Address {
        self.reassemble(Decomposed { offset: 0, index, tag })
    }
}

fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Decomposes `addr` with an index of `log2(lines) + extra_index_bits` bits
/// placed directly above the line offset.
pub fn decompose(addr: Address, geometry: &CacheGeometry, extra_index_bits: u32) -> Result<Decomposed, GeometryError> {
    Ok(AddressLayout::news(geometry, extra_index_bits)?.decompose(addr))
}
