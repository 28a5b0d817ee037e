//! Core model of the managed address space.
//!
//! The heap being managed lives on another device: the allocator can address
//! it arithmetically but can never read or write it. Everything here is
//! therefore pure bookkeeping — an [`Address`] is just an offset, a
//! [`BlockRange`] a pair of numbers, and every byte of allocator metadata
//! lives in host memory.

use std::error::Error;
use std::fmt;

/// A byte offset into the managed heap. Never dereferenced.
pub type Address = u64;

/// A contiguous span `[addr, addr + size)` of the managed heap.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BlockRange {
    pub addr: Address,
    pub size: u64,
}

impl BlockRange {
    pub fn new(addr: Address, size: u64) -> Self {
        BlockRange { addr, size }
    }

    /// One past the last byte of the range.
    pub fn end(&self) -> Address {
        self.addr + self.size
    }

    /// True if `addr` falls inside this range.
    pub fn contains(&self, addr: Address) -> bool {
        addr >= self.addr && addr < self.end()
    }
}

/// Parameters shared by every allocation strategy.
///
/// All sizes are rounded up to `min_granule` internally, so every block
/// boundary (and therefore every returned address) is granule-aligned.
#[derive(Clone, Copy, Debug)]
pub struct HeapConfig {
    /// Total bytes of device memory under management.
    pub heap_size: u64,
    /// Minimum allocation unit; power of two.
    pub min_granule: u64,
    /// Required address alignment; power of two, at most `min_granule`.
    pub alignment: u64,
}

pub const DEFAULT_GRANULE: u64 = 8;

impl HeapConfig {
    pub fn new(heap_size: u64) -> Self {
        HeapConfig {
            heap_size,
            min_granule: DEFAULT_GRANULE,
            alignment: DEFAULT_GRANULE,
        }
    }

    pub fn with_granule(mut self, granule: u64) -> Self {
        self.min_granule = granule;
        self.alignment = granule;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.min_granule.is_power_of_two() {
            return Err(ConfigError::BadGranule(self.min_granule));
        }
        if !self.alignment.is_power_of_two() || self.alignment > self.min_granule {
            return Err(ConfigError::BadAlignment(self.alignment));
        }
        if self.heap_size == 0 {
            return Err(ConfigError::EmptyHeap);
        }
        if !self.heap_size.is_multiple_of(self.min_granule) {
            return Err(ConfigError::UnalignedHeap {
                heap_size: self.heap_size,
                granule: self.min_granule,
            });
        }
        Ok(())
    }

    /// Rounds a requested size up to the allocation granule.
    /// `None` on arithmetic overflow.
    pub fn round_size(&self, size: u64) -> Option<u64> {
        let mask = self.min_granule - 1;
        size.checked_add(mask).map(|s| s & !mask)
    }
}

/// Rejected [`HeapConfig`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ConfigError {
    EmptyHeap,
    UnalignedHeap { heap_size: u64, granule: u64 },
    BadGranule(u64),
    BadAlignment(u64),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::EmptyHeap => write!(f, "heap size must be nonzero"),
            ConfigError::UnalignedHeap { heap_size, granule } => {
                write!(f, "heap size {heap_size} is not a multiple of granule {granule}")
            }
            ConfigError::BadGranule(g) => write!(f, "granule {g} is not a power of two"),
            ConfigError::BadAlignment(a) => {
                write!(f, "alignment {a} is not a power of two at most the granule")
            }
        }
    }
}

impl Error for ConfigError {}

/// Why an allocator call failed.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AllocError {
    /// No free region can satisfy the request.
    OutOfMemory,
    /// The address is not inside any in-use block.
    InvalidFree,
    /// The address lies in a currently free region previously returned by
    /// this allocator.
    DoubleFree,
    /// Zero-sized allocation request.
    ZeroSize,
    /// The request cannot be represented (rounding or bin arithmetic
    /// overflows, or no bin could ever serve it).
    SizeOverflow,
}

impl fmt::Display for AllocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            AllocError::OutOfMemory => "out of memory",
            AllocError::InvalidFree => "address is not inside any in-use block",
            AllocError::DoubleFree => "address was already freed",
            AllocError::ZeroSize => "zero-sized allocation",
            AllocError::SizeOverflow => "request size overflows the heap",
        };
        f.write_str(msg)
    }
}

impl Error for AllocError {}

/// Search policy for the sequential-fit family.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FitPolicy {
    /// Smallest free block that fits; ties broken by lowest address.
    Best,
    /// First free block (in address order) that fits.
    First,
    /// Like first fit, but each search resumes where the last one left off.
    Next,
}

/// Host-memory cost and occupancy snapshot of an allocator.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct OverheadStats {
    /// Bytes of host memory charged to allocator metadata, under each
    /// strategy's own accounting model (see the per-allocator docs).
    pub host_metadata_bytes: u64,
    /// Total bytes of device memory under management.
    pub managed_bytes: u64,
    /// Sum of the sizes of all in-use blocks.
    pub live_bytes: u64,
    /// High-water mark of `max(addr + size)` over in-use blocks.
    pub reserved_bytes: u64,
}

impl OverheadStats {
    /// Metadata bytes per managed byte.
    pub fn overhead_ratio(&self) -> f64 {
        self.host_metadata_bytes as f64 / self.managed_bytes as f64
    }

    /// `1 - live/reserved`: the fraction of provisioned device memory not
    /// serving live allocations. Zero on an untouched heap.
    pub fn fragmentation(&self) -> f64 {
        if self.reserved_bytes == 0 {
            0.0
        } else {
            1.0 - self.live_bytes as f64 / self.reserved_bytes as f64
        }
    }
}

/// The behavioral contract every strategy implements.
///
/// In-use blocks are pairwise disjoint at every instant, and a free of
/// every live block restores the ability to allocate the full heap (for
/// strategies that coalesce).
///
/// Allocator instances are single-threaded: they may move between threads
/// but must not be shared without external serialization.
pub trait Allocator {
    fn config(&self) -> &HeapConfig;

    fn alloc(&mut self, size: u64) -> Result<Address, AllocError>;

    /// Frees the block containing `addr`. Strategies that support partial
    /// deallocation accept interior addresses and free the tail
    /// `[addr, block_end)`; the rest require `addr` to be a block start.
    fn free(&mut self, addr: Address) -> Result<(), AllocError>;

    fn stats(&self) -> OverheadStats;
}

/// Tracks live/reserved byte accounting common to every strategy.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Occupancy {
    pub live_bytes: u64,
    pub reserved_high_water: u64,
}

impl Occupancy {
    pub fn on_alloc(&mut self, range: BlockRange) {
        self.live_bytes += range.size;
        self.reserved_high_water = self.reserved_high_water.max(range.end());
    }

    pub fn on_free(&mut self, bytes: u64) {
        debug_assert!(bytes <= self.live_bytes);
        self.live_bytes -= bytes;
    }
}
