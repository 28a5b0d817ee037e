//! Best-, first-, and next-fit allocation over two hybrid array lists.
//!
//! One list tracks free blocks, the other the blocks in use; together they
//! tile the heap exactly. Allocation splits the chosen free entry from its
//! low end, deallocation merges the freed range with free neighbors on both
//! sides, and a free of an interior address releases just the tail of its
//! block (partial deallocation).

use std::collections::HashSet;

use crate::hal::{Hal, HalIter, DEFAULT_CHUNK_CAP};
use crate::heap::{
    Address, AllocError, Allocator, BlockRange, ConfigError, FitPolicy, HeapConfig, Occupancy,
    OverheadStats,
};

pub struct SequentialAllocator {
    config: HeapConfig,
    policy: FitPolicy,
    free: Hal,
    used: Hal,
    /// Next-fit resume point, stored as an address so that coalescing can
    /// never leave it dangling; resolved against the free list per search.
    cursor: Option<Address>,
    /// Start addresses of past frees, to distinguish DoubleFree from
    /// InvalidFree once the range has merged into a larger one.
    freed_starts: HashSet<Address>,
    occupancy: Occupancy,
}

impl SequentialAllocator {
    pub fn new(config: HeapConfig, policy: FitPolicy) -> Result<Self, ConfigError> {
        Self::with_chunk_cap(config, policy, DEFAULT_CHUNK_CAP)
    }

    pub fn with_chunk_cap(
        config: HeapConfig,
        policy: FitPolicy,
        chunk_cap: usize,
    ) -> Result<Self, ConfigError> {
        let (free, used) = crate::hal::init_free_used(&config, chunk_cap)?;
        Ok(SequentialAllocator {
            config,
            policy,
            free,
            used,
            cursor: None,
            freed_starts: HashSet::new(),
            occupancy: Occupancy::default(),
        })
    }

    pub fn config(&self) -> &HeapConfig {
        &self.config
    }

    pub fn policy(&self) -> FitPolicy {
        self.policy
    }

    pub fn free_blocks(&self) -> impl Iterator<Item = BlockRange> + '_ {
        self.free.iter()
    }

    pub fn used_blocks(&self) -> impl Iterator<Item = BlockRange> + '_ {
        self.used.iter()
    }

    /// The free-list position a next-fit search starts from.
    fn cursor_start(&self) -> HalIter {
        let resolved = self.cursor.map(|addr| self.free.search(addr));
        match resolved {
            Some(it) if it.is_valid() => it,
            _ => self.free.first(),
        }
    }

    /// Picks the free entry to allocate from, or fails after one full pass.
    fn find_candidate(&self, size: u64) -> Result<HalIter, AllocError> {
        match self.policy {
            FitPolicy::First => {
                let mut it = self.free.first();
                while it.is_valid() {
                    if self.free.get(it).size >= size {
                        return Ok(it);
                    }
                    it = self.free.next(it);
                }
                Err(AllocError::OutOfMemory)
            }
            FitPolicy::Best => {
                let mut best: Option<(HalIter, u64)> = None;
                let mut it = self.free.first();
                while it.is_valid() {
                    let entry = self.free.get(it);
                    if entry.size == size {
                        return Ok(it);
                    }
                    if entry.size > size && best.is_none_or(|(_, b)| entry.size < b) {
                        best = Some((it, entry.size));
                    }
                    it = self.free.next(it);
                }
                best.map(|(it, _)| it).ok_or(AllocError::OutOfMemory)
            }
            FitPolicy::Next => {
                let mut it = self.cursor_start();
                for _ in 0..self.free.len() {
                    if !it.is_valid() {
                        it = self.free.first();
                    }
                    if self.free.get(it).size >= size {
                        return Ok(it);
                    }
                    it = self.free.next(it);
                    if it.is_end() {
                        it = self.free.first();
                    }
                }
                Err(AllocError::OutOfMemory)
            }
        }
    }

    /// Moves the cursor to the first free entry at or above the bytes the
    /// allocation consumed (the split remainder when one exists), wrapping
    /// to the lowest-addressed entry.
    fn advance_cursor(&mut self, alloc_end: Address) {
        if self.free.is_empty() {
            self.cursor = None;
            return;
        }
        let below = self.free.search(alloc_end);
        let target = if below.is_valid() && self.free.get(below).addr == alloc_end {
            below
        } else {
            self.free.next(below)
        };
        let target = if target.is_end() { self.free.first() } else { target };
        self.cursor = Some(self.free.get(target).addr);
    }

    /// Inserts a freed range with three-way coalescing: absorbed into the
    /// left neighbor, the right neighbor, both, or inserted as a new entry.
    fn insert_free(&mut self, range: BlockRange) {
        let left = self.free.search(range.addr);
        let right = self.free.next(left);
        let merge_left = left.is_valid() && {
            let l = self.free.get(left);
            assert!(l.end() <= range.addr, "free list overlaps freed range");
            l.end() == range.addr
        };
        let merge_right = right.is_valid() && {
            let r = self.free.get(right);
            assert!(r.addr >= range.end(), "free list overlaps freed range");
            r.addr == range.end()
        };
        match (merge_left, merge_right) {
            (true, true) => {
                let right_end = self.free.get(right).end();
                self.free.remove(right);
                let l = self.free.get_mut(left);
                l.size = right_end - l.addr;
            }
            (true, false) => {
                let l = self.free.get_mut(left);
                l.size = range.end() - l.addr;
            }
            (false, true) => {
                let r = self.free.get_mut(right);
                r.size = r.end() - range.addr;
                r.addr = range.addr;
            }
            (false, false) => {
                self.free.insert(right, range);
            }
        }
    }
}

impl Allocator for SequentialAllocator {
    fn config(&self) -> &HeapConfig {
        &self.config
    }

    fn alloc(&mut self, size: u64) -> Result<Address, AllocError> {
        if size == 0 {
            return Err(AllocError::ZeroSize);
        }
        let size = self.config.round_size(size).ok_or(AllocError::SizeOverflow)?;
        let candidate = self.find_candidate(size)?;
        let entry = self.free.get(candidate);
        let addr = entry.addr;
        if entry.size > size {
            // Split: the low end is consumed, the free entry keeps its tail.
            let e = self.free.get_mut(candidate);
            e.addr += size;
            e.size -= size;
        } else {
            self.free.remove(candidate);
        }
        if self.policy == FitPolicy::Next {
            self.advance_cursor(addr + size);
        }
        let pos = self.used.next(self.used.search(addr));
        let block = BlockRange::new(addr, size);
        self.used.insert(pos, block);
        self.occupancy.on_alloc(block);
        Ok(addr)
    }

    fn free(&mut self, addr: Address) -> Result<(), AllocError> {
        if addr >= self.config.heap_size || !addr.is_multiple_of(self.config.min_granule) {
            return Err(AllocError::InvalidFree);
        }
        let it = self.used.search(addr);
        let block = it.is_valid().then(|| self.used.get(it));
        match block {
            Some(b) if b.contains(addr) => {
                let freed = if addr == b.addr {
                    self.used.remove(it);
                    b
                } else {
                    // Partial deallocation: shrink the block, free its tail.
                    self.used.get_mut(it).size = addr - b.addr;
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
        OverheadStats {
            host_metadata_bytes: self.free.metadata_bytes()
                + self.used.metadata_bytes()
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
    use crate::oracle::OracleAllocator;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn seqfit(heap: u64, policy: FitPolicy) -> SequentialAllocator {
        SequentialAllocator::new(HeapConfig::new(heap), policy).unwrap()
    }

    /// Free sizes [32, 16, 64] in address order, with live blocks between.
    fn three_holes(policy: FitPolicy) -> SequentialAllocator {
        let mut a = seqfit(240, policy);
        let h32 = a.alloc(32).unwrap();
        a.alloc(8).unwrap();
        let h16 = a.alloc(16).unwrap();
        a.alloc(8).unwrap();
        let h64 = a.alloc(64).unwrap();
        a.alloc(112).unwrap();
        a.free(h32).unwrap();
        a.free(h16).unwrap();
        a.free(h64).unwrap();
        assert_eq!(
            a.free_blocks().map(|b| b.size).collect::<Vec<_>>(),
            vec![32, 16, 64]
        );
        a
    }

    #[test]
    fn fresh_heap_allocates_from_zero() {
        let mut a = seqfit(4096, FitPolicy::Best);
        assert_eq!(a.alloc(1024).unwrap(), 0);
        assert_eq!(a.free_blocks().collect::<Vec<_>>(), vec![BlockRange::new(1024, 3072)]);
        assert_eq!(a.used_blocks().collect::<Vec<_>>(), vec![BlockRange::new(0, 1024)]);
    }

    #[test]
    fn best_fit_takes_exact_match() {
        let mut a = three_holes(FitPolicy::Best);
        assert_eq!(a.alloc(16).unwrap(), 40);
        // The exactly-sized entry is gone entirely.
        assert_eq!(a.free_blocks().map(|b| b.size).collect::<Vec<_>>(), vec![32, 64]);
    }

    #[test]
    fn first_fit_takes_lowest_address() {
        let mut a = three_holes(FitPolicy::First);
        assert_eq!(a.alloc(16).unwrap(), 0);
        assert_eq!(a.free_blocks().map(|b| b.size).collect::<Vec<_>>(), vec![16, 16, 64]);
    }

    #[test]
    fn partial_free_releases_tail() {
        let mut a = seqfit(10240, FitPolicy::First);
        assert_eq!(a.alloc(10240).unwrap(), 0);
        a.free(8192).unwrap();
        assert_eq!(a.used_blocks().collect::<Vec<_>>(), vec![BlockRange::new(0, 8192)]);
        assert_eq!(a.free_blocks().collect::<Vec<_>>(), vec![BlockRange::new(8192, 2048)]);
    }

    #[test]
    fn free_merges_both_sides() {
        let mut a = seqfit(192, FitPolicy::First);
        let p0 = a.alloc(64).unwrap();
        let p1 = a.alloc(64).unwrap();
        let p2 = a.alloc(64).unwrap();
        a.free(p0).unwrap();
        a.free(p2).unwrap();
        assert_eq!(a.free_blocks().count(), 2);
        a.free(p1).unwrap();
        assert_eq!(a.free_blocks().collect::<Vec<_>>(), vec![BlockRange::new(0, 192)]);
    }

    #[test]
    fn error_taxonomy() {
        let mut a = seqfit(4096, FitPolicy::Best);
        assert_eq!(a.alloc(0), Err(AllocError::ZeroSize));
        assert_eq!(a.alloc(8192), Err(AllocError::OutOfMemory));
        let p = a.alloc(64).unwrap();
        assert_eq!(a.free(4096), Err(AllocError::InvalidFree));
        assert_eq!(a.free(p + 4), Err(AllocError::InvalidFree));
        assert_eq!(a.free(p + 64), Err(AllocError::InvalidFree));
        a.free(p).unwrap();
        assert_eq!(a.free(p), Err(AllocError::DoubleFree));
    }

    /// Tracks live blocks by slot so the same abstract trace can drive two
    /// allocators that are expected to return identical addresses.
    struct Slots {
        live: Vec<(Address, u64)>,
    }

    #[derive(Clone, Copy, Debug)]
    enum Op {
        Alloc(u64),
        Free(usize),
        PartialFree(usize, u64),
    }

    impl Slots {
        fn new() -> Self {
            Slots { live: Vec::new() }
        }

        fn apply(
            &mut self,
            a: &mut dyn Allocator,
            op: Op,
        ) -> Result<Option<Address>, AllocError> {
            match op {
                Op::Alloc(size) => {
                    let addr = a.alloc(size)?;
                    self.live.push((addr, (size + 7) & !7));
                    Ok(Some(addr))
                }
                Op::Free(i) => {
                    let (addr, _) = self.live.remove(i % self.live.len());
                    a.free(addr)?;
                    Ok(None)
                }
                Op::PartialFree(i, keep) => {
                    let i = i % self.live.len();
                    let (addr, size) = self.live[i];
                    let keep = ((keep % size).max(8)) & !7;
                    if keep >= size {
                        return Ok(None);
                    }
                    a.free(addr + keep)?;
                    self.live[i].1 = keep;
                    Ok(None)
                }
            }
        }
    }

    fn random_ops(seed: u64, n: usize) -> Vec<Op> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0..=5 => Op::Alloc(rng.gen_range(1..=2048)),
                6..=8 => Op::Free(rng.gen_range(0..4096)),
                _ => Op::PartialFree(rng.gen_range(0..4096), rng.gen_range(8..2048)),
            })
            .collect()
    }

    #[test]
    fn matches_oracle_on_random_traces() {
        for policy in [FitPolicy::Best, FitPolicy::First, FitPolicy::Next] {
            for seed in 0..4 {
                let cfg = HeapConfig::new(1 << 16);
                let mut real = SequentialAllocator::with_chunk_cap(cfg, policy, 8).unwrap();
                let mut oracle = OracleAllocator::new(cfg, policy).unwrap();
                let mut real_slots = Slots::new();
                let mut oracle_slots = Slots::new();
                for (i, &op) in random_ops(seed, 1000).iter().enumerate() {
                    if matches!(op, Op::Free(_) | Op::PartialFree(..)) && real_slots.live.is_empty()
                    {
                        continue;
                    }
                    let r = real_slots.apply(&mut real, op);
                    let o = oracle_slots.apply(&mut oracle, op);
                    assert_eq!(r, o, "divergence at op {i} ({op:?}, {policy:?})");
                }
                assert_eq!(
                    real.free_blocks().collect::<Vec<_>>(),
                    oracle.free_ranges().to_vec(),
                    "final free lists differ ({policy:?})"
                );
            }
        }
    }

    #[test]
    fn tiling_and_coalescing_hold_under_random_traces() {
        let cfg = HeapConfig::new(1 << 16);
        let mut a = SequentialAllocator::with_chunk_cap(cfg, FitPolicy::Next, 4).unwrap();
        let mut slots = Slots::new();
        for &op in random_ops(7, 2000).iter() {
            if matches!(op, Op::Free(_) | Op::PartialFree(..)) && slots.live.is_empty() {
                continue;
            }
            let _ = slots.apply(&mut a, op);

            // Tiling: free and used together cover the heap exactly once.
            let mut all: Vec<BlockRange> = a.free_blocks().chain(a.used_blocks()).collect();
            all.sort_by_key(|b| b.addr);
            let mut cursor = 0;
            for b in &all {
                assert_eq!(b.addr, cursor, "gap or overlap at {cursor}");
                cursor = b.end();
            }
            assert_eq!(cursor, cfg.heap_size);

            // Coalescing completeness: no two adjacent free entries touch.
            let free: Vec<BlockRange> = a.free_blocks().collect();
            for w in free.windows(2) {
                assert!(w[0].end() < w[1].addr, "uncoalesced neighbors");
            }
        }
    }

    #[test]
    fn conservation_of_live_bytes() {
        let mut a = seqfit(1 << 16, FitPolicy::Best);
        let p0 = a.alloc(1000).unwrap();
        let p1 = a.alloc(512).unwrap();
        assert_eq!(a.stats().live_bytes, 1512);
        a.free(p0 + 512).unwrap(); // tail of p0
        assert_eq!(a.stats().live_bytes, 1024);
        a.free(p1).unwrap();
        a.free(p0).unwrap();
        assert_eq!(a.stats().live_bytes, 0);
        assert_eq!(a.stats().reserved_bytes, 1512);
    }
}
