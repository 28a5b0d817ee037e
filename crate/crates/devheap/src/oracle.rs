//! Deliberately naive reference allocator.
//!
//! Keeps the free and in-use block sets in plain address-sorted vectors and
//! scans them linearly. It exists to pin down the observable behavior of the
//! sequential-fit policies — split low-address-first, best-fit ties broken
//! by lowest address, the next-fit cursor rule, tail partial frees, and
//! three-way coalescing — so the real allocators can be checked against it
//! address for address.

use std::collections::HashSet;

use crate::heap::{
    Address, AllocError, Allocator, BlockRange, FitPolicy, HeapConfig, Occupancy, OverheadStats,
};

pub struct OracleAllocator {
    config: HeapConfig,
    policy: FitPolicy,
    /// Free ranges, address-sorted, fully coalesced.
    free: Vec<BlockRange>,
    /// In-use ranges, address-sorted.
    used: Vec<BlockRange>,
    /// Next-fit resume point: the address of a free entry, resolved anew on
    /// every search. `None` means start from the head.
    cursor: Option<Address>,
    /// Start addresses of every free ever issued, to tell a double free
    /// (address lies in free space we previously released) from a free of an
    /// address that was never allocated.
    freed_starts: HashSet<Address>,
    occupancy: Occupancy,
}

impl OracleAllocator {
    pub fn new(config: HeapConfig, policy: FitPolicy) -> Result<Self, crate::heap::ConfigError> {
        config.validate()?;
        Ok(OracleAllocator {
            config,
            policy,
            free: vec![BlockRange::new(0, config.heap_size)],
            used: Vec::new(),
            cursor: None,
            freed_starts: HashSet::new(),
            occupancy: Occupancy::default(),
        })
    }

    pub fn config(&self) -> &HeapConfig {
        &self.config
    }

    pub fn free_ranges(&self) -> &[BlockRange] {
        &self.free
    }

    pub fn used_ranges(&self) -> &[BlockRange] {
        &self.used
    }

    /// Index of the free entry a next-fit search starts from: the last entry
    /// at or below the cursor address, the head when the cursor lies below
    /// every entry or is unset.
    fn cursor_start(&self) -> usize {
        let Some(cursor) = self.cursor else { return 0 };
        let above = self.free.partition_point(|r| r.addr <= cursor);
        if above == 0 {
            0
        } else {
            above - 1
        }
    }

    /// Picks the index of the free entry to allocate from.
    fn find_candidate(&self, size: u64) -> Option<usize> {
        match self.policy {
            FitPolicy::First => self.free.iter().position(|r| r.size >= size),
            FitPolicy::Best => {
                let mut best: Option<usize> = None;
                for (i, r) in self.free.iter().enumerate() {
                    if r.size == size {
                        return Some(i);
                    }
                    if r.size > size && best.is_none_or(|b| r.size < self.free[b].size) {
                        best = Some(i);
                    }
                }
                best
            }
            FitPolicy::Next => {
                let len = self.free.len();
                let start = self.cursor_start();
                (0..len)
                    .map(|step| (start + step) % len)
                    .find(|&i| self.free[i].size >= size)
            }
        }
    }

    /// Cursor update after an allocation consumed `[_, alloc_end)` from the
    /// candidate: the first free entry at or above the consumed bytes (the
    /// split remainder when there is one, the successor entry otherwise),
    /// wrapping to the lowest-addressed entry.
    fn advance_cursor(&mut self, alloc_end: Address) {
        self.cursor = self
            .free
            .iter()
            .find(|r| r.addr >= alloc_end)
            .or_else(|| self.free.first())
            .map(|r| r.addr);
    }

    /// Returns a freed range to the free list, merging with the neighbors
    /// on either side when they are exactly adjacent.
    fn insert_free(&mut self, range: BlockRange) {
        let idx = self.free.partition_point(|r| r.addr <= range.addr);
        let merge_left = idx > 0 && {
            let left = &self.free[idx - 1];
            assert!(left.end() <= range.addr, "free list overlap");
            left.end() == range.addr
        };
        let merge_right = idx < self.free.len() && {
            let right = &self.free[idx];
            assert!(right.addr >= range.end(), "free list overlap");
            right.addr == range.end()
        };
        match (merge_left, merge_right) {
            (true, true) => {
                let right_end = self.free[idx].end();
                self.free[idx - 1].size = right_end - self.free[idx - 1].addr;
                self.free.remove(idx);
            }
            (true, false) => {
                self.free[idx - 1].size = range.end() - self.free[idx - 1].addr;
            }
            (false, true) => {
                let right = &mut self.free[idx];
                right.size = right.end() - range.addr;
                right.addr = range.addr;
            }
            (false, false) => {
                self.free.insert(idx, range);
            }
        }
    }
}

impl Allocator for OracleAllocator {
    fn config(&self) -> &HeapConfig {
        &self.config
    }

    fn alloc(&mut self, size: u64) -> Result<Address, AllocError> {
        if size == 0 {
            return Err(AllocError::ZeroSize);
        }
        let size = self.config.round_size(size).ok_or(AllocError::SizeOverflow)?;
        let idx = self.find_candidate(size).ok_or(AllocError::OutOfMemory)?;
        let candidate = self.free[idx];
        let addr = candidate.addr;
        if candidate.size > size {
            self.free[idx].addr += size;
            self.free[idx].size -= size;
        } else {
            self.free.remove(idx);
        }
        if self.policy == FitPolicy::Next {
            self.advance_cursor(addr + size);
        }
        let block = BlockRange::new(addr, size);
        let pos = self.used.partition_point(|r| r.addr <= addr);
        self.used.insert(pos, block);
        self.occupancy.on_alloc(block);
        Ok(addr)
    }

    fn free(&mut self, addr: Address) -> Result<(), AllocError> {
        if addr >= self.config.heap_size || !addr.is_multiple_of(self.config.min_granule) {
            return Err(AllocError::InvalidFree);
        }
        let idx = self.used.partition_point(|r| r.addr <= addr);
        let block = idx.checked_sub(1).map(|i| self.used[i]);
        match block {
            Some(b) if b.contains(addr) => {
                let freed = if addr == b.addr {
                    self.used.remove(idx - 1);
                    b
                } else {
                    // Partial deallocation: shrink the block and free its tail.
                    self.used[idx - 1].size = addr - b.addr;
                    BlockRange::new(addr, b.end() - addr)
                };
                self.insert_free(freed);
                self.freed_starts.insert(addr);
                self.occupancy.on_free(freed.size);
                Ok(())
            }
            // Tiling: anything not in a used block lies in free space.
            _ if self.freed_starts.contains(&addr) => Err(AllocError::DoubleFree),
            _ => Err(AllocError::InvalidFree),
        }
    }

    fn stats(&self) -> OverheadStats {
        let ranges = (self.free.len() + self.used.len()) as u64;
        OverheadStats {
            host_metadata_bytes: ranges * std::mem::size_of::<BlockRange>() as u64
                + self.freed_starts.len() as u64 * 8,
            managed_bytes: self.config.heap_size,
            live_bytes: self.occupancy.live_bytes,
            reserved_bytes: self.occupancy.reserved_high_water,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(heap: u64, policy: FitPolicy) -> OracleAllocator {
        OracleAllocator::new(HeapConfig::new(heap), policy).unwrap()
    }

    /// Builds the free-range state {[0,64), [128,160)}.
    fn two_holes(policy: FitPolicy) -> OracleAllocator {
        let mut a = oracle(160, policy);
        assert_eq!(a.alloc(64).unwrap(), 0);
        assert_eq!(a.alloc(64).unwrap(), 64);
        assert_eq!(a.alloc(32).unwrap(), 128);
        a.free(0).unwrap();
        a.free(128).unwrap();
        assert_eq!(
            a.free_ranges(),
            &[BlockRange::new(0, 64), BlockRange::new(128, 32)]
        );
        a
    }

    #[test]
    fn first_fit_takes_lowest_fitting_range() {
        let mut a = two_holes(FitPolicy::First);
        assert_eq!(a.alloc(32).unwrap(), 0);
    }

    #[test]
    fn best_fit_takes_exact_range() {
        let mut a = two_holes(FitPolicy::Best);
        assert_eq!(a.alloc(32).unwrap(), 128);
    }

    #[test]
    fn adjacent_frees_merge_into_one_range() {
        let mut a = OracleAllocator::new(
            HeapConfig::new(200).with_granule(4),
            FitPolicy::First,
        )
        .unwrap();
        assert_eq!(a.alloc(100).unwrap(), 0);
        assert_eq!(a.alloc(100).unwrap(), 100);
        a.free(0).unwrap();
        a.free(100).unwrap();
        assert_eq!(a.free_ranges(), &[BlockRange::new(0, 200)]);
    }

    #[test]
    fn free_of_unallocated_address_is_invalid() {
        let mut a = oracle(4096, FitPolicy::First);
        a.alloc(64).unwrap();
        assert_eq!(a.free(128), Err(AllocError::InvalidFree));
        assert_eq!(a.free(8192), Err(AllocError::InvalidFree));
    }

    #[test]
    fn second_free_of_same_address_is_double_free() {
        let mut a = oracle(4096, FitPolicy::First);
        let p = a.alloc(64).unwrap();
        a.free(p).unwrap();
        assert_eq!(a.free(p), Err(AllocError::DoubleFree));
    }

    #[test]
    fn double_free_detected_after_coalescing() {
        let mut a = oracle(4096, FitPolicy::First);
        let p0 = a.alloc(64).unwrap();
        let p1 = a.alloc(64).unwrap();
        a.free(p0).unwrap();
        a.free(p1).unwrap(); // merges with the hole at p0
        assert_eq!(a.free(p1), Err(AllocError::DoubleFree));
    }

    #[test]
    fn partial_free_releases_the_tail() {
        let mut a = oracle(10240, FitPolicy::First);
        assert_eq!(a.alloc(10240).unwrap(), 0);
        a.free(8192).unwrap();
        assert_eq!(a.used_ranges(), &[BlockRange::new(0, 8192)]);
        assert_eq!(a.free_ranges(), &[BlockRange::new(8192, 2048)]);
    }

    #[test]
    fn zero_size_alloc_rejected() {
        let mut a = oracle(4096, FitPolicy::Best);
        assert_eq!(a.alloc(0), Err(AllocError::ZeroSize));
    }

    #[test]
    fn full_heap_cycle_restores_single_range() {
        let mut a = oracle(4096, FitPolicy::Best);
        let p = a.alloc(4096).unwrap();
        assert!(a.alloc(8).is_err());
        a.free(p).unwrap();
        assert_eq!(a.free_ranges(), &[BlockRange::new(0, 4096)]);
        assert_eq!(a.alloc(4096).unwrap(), 0);
    }

    #[test]
    fn next_fit_resumes_past_previous_allocation() {
        let mut a = oracle(4096, FitPolicy::Next);
        let p0 = a.alloc(512).unwrap();
        let _p1 = a.alloc(512).unwrap();
        a.free(p0).unwrap();
        // First fit would reuse the hole at 0; next fit resumes at 1024.
        assert_eq!(a.alloc(512).unwrap(), 1024);
        assert_eq!(a.alloc(512).unwrap(), 1536);
        // Wraps around once the tail is exhausted.
        assert_eq!(a.alloc(2048).unwrap(), 2048);
        assert_eq!(a.alloc(512).unwrap(), 0);
    }
}
