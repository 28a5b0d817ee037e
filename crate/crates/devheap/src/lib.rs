//! Host-side dynamic memory allocators for opaque device memory.
//!
//! All strategies here manage an address space they can never read or
//! write — the model of a host process suballocating GPU or FPGA memory.
//! That rules out boundary tags and any other in-band metadata, so every
//! structure lives in host memory: sorted chunk lists, bitmaps, or a hash
//! table keyed by device address.
//!
//! Strategies:
//! - [`seqfit::SequentialAllocator`] — best/first/next fit over two hybrid
//!   array lists, with partial (tail) deallocation.
//! - [`bitmask::BitmaskAllocator`] — one bit per granule, next-fit run
//!   scanning, implicit coalescing.
//! - [`segfit::SegFitAllocator`] — power-of-two segregated fit over a block
//!   table, in single-level and two-level (TLSF) variants.
//! - [`oracle::OracleAllocator`] — naive flat-array reference the others are
//!   tested against.
//!
//! The `devheap-bench` binary synthesizes or replays allocation traces
//! against any strategy and reports per-operation latency and fragmentation.

pub mod bench;
pub mod bitmask;
pub mod hal;
pub mod heap;
pub mod oracle;
pub mod segfit;
pub mod seqfit;
pub mod table;
pub mod trace;

pub use heap::{
    Address, AllocError, Allocator, BlockRange, ConfigError, FitPolicy, HeapConfig, OverheadStats,
};
