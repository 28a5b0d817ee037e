//! Segregated fit over the block table, with a two-level (TLSF) variant.
//!
//! Free blocks live in per-size-class lists threaded through their table
//! entries; an availability bitmap locates the first nonempty class with a
//! find-first-set, so allocation never searches a list — the head block is
//! always taken. Requests round up to the next class boundary, which
//! guarantees every block in the serving class fits. Deallocation finds the
//! physical neighbors through `prev_adj` and the table (no boundary tags)
//! and coalesces up to three blocks in constant work.
//!
//! The single-level variant bins by `floor(log2(size))`. The TLSF variant
//! subdivides each power-of-two class into `sli` linear subclasses behind a
//! second bitmap level, trading a second ffs for much tighter classes.

use crate::heap::{
    Address, AllocError, Allocator, BlockRange, ConfigError, HeapConfig, Occupancy, OverheadStats,
};
use crate::table::{BlockEntry, BlockTable};

/// Size class coordinates: first level (power of two) and second level
/// (linear subdivision; always 0 for the single-level variant).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BinIndex {
    pub fl: u32,
    pub sl: u32,
}

#[derive(Clone, Copy, Debug)]
enum Variant {
    Single,
    Tlsf { sli_log: u32 },
}

/// Work done by the last operation, for the bounded-work witnesses.
#[derive(Clone, Copy, Debug, Default)]
pub struct SegFitMetrics {
    /// Table probes plus link and bitmap edits.
    pub steps: u64,
    /// Entries rehashed by a bucket-array resize during the op (amortized
    /// growth, metered apart from `steps`).
    pub resize_steps: u64,
}

pub const DEFAULT_SLI: u32 = 16;

pub struct SegFitAllocator {
    config: HeapConfig,
    variant: Variant,
    table: BlockTable,
    /// Head of the free list for each class, linearized as `fl * sli + sl`.
    heads: Vec<Option<Address>>,
    /// Bit `fl` set when any class under `fl` holds a block.
    first_level: u64,
    /// TLSF only: one word per first level, bit `sl` per subclass.
    second_level: Vec<u64>,
    /// Smallest block the allocator will create by splitting.
    min_block: u64,
    occupancy: Occupancy,
    edits: u64,
    metrics: SegFitMetrics,
}

impl SegFitAllocator {
    /// Single-level segregated fit: one free list per power-of-two class.
    pub fn new_single(config: HeapConfig) -> Result<Self, ConfigError> {
        Self::build(config, Variant::Single)
    }

    /// Two-level segregated fit with `sli` linear subclasses per class.
    pub fn new_tlsf(config: HeapConfig, sli: u32) -> Result<Self, ConfigError> {
        if !sli.is_power_of_two() || !(2..=64).contains(&sli) {
            return Err(ConfigError::BadGranule(sli as u64));
        }
        Self::build(config, Variant::Tlsf { sli_log: sli.trailing_zeros() })
    }

    fn build(config: HeapConfig, variant: Variant) -> Result<Self, ConfigError> {
        config.validate()?;
        let min_block = match variant {
            Variant::Single => config.min_granule,
            // Below twice the granule (and below one subclass step) sizes
            // cannot be mapped to distinct classes; collapse there.
            Variant::Tlsf { sli_log } => (2 * config.min_granule).max(1 << sli_log),
        };
        if config.heap_size < min_block {
            return Err(ConfigError::UnalignedHeap {
                heap_size: config.heap_size,
                granule: min_block,
            });
        }
        let fl_count = 64 - config.heap_size.leading_zeros();
        let sli = match variant {
            Variant::Single => 1u32,
            Variant::Tlsf { sli_log } => 1 << sli_log,
        };
        let mut alloc = SegFitAllocator {
            config,
            variant,
            table: BlockTable::new(config.min_granule),
            heads: vec![None; (fl_count as usize) * (sli as usize)],
            first_level: 0,
            second_level: match variant {
                Variant::Single => Vec::new(),
                Variant::Tlsf { .. } => vec![0; fl_count as usize],
            },
            min_block,
            occupancy: Occupancy::default(),
            edits: 0,
            metrics: SegFitMetrics::default(),
        };
        alloc.push_free_block(BlockEntry::new_free(0, config.heap_size));
        Ok(alloc)
    }

    pub fn config(&self) -> &HeapConfig {
        &self.config
    }

    pub fn is_tlsf(&self) -> bool {
        matches!(self.variant, Variant::Tlsf { .. })
    }

    pub fn metrics(&self) -> SegFitMetrics {
        self.metrics
    }

    pub fn table(&self) -> &BlockTable {
        &self.table
    }

    pub fn live_blocks(&self) -> impl Iterator<Item = BlockRange> + '_ {
        self.table
            .iter()
            .filter(|e| !e.free)
            .map(|e| BlockRange::new(e.addr, e.size))
    }

    pub fn free_blocks(&self) -> impl Iterator<Item = BlockRange> + '_ {
        self.table
            .iter()
            .filter(|e| e.free)
            .map(|e| BlockRange::new(e.addr, e.size))
    }

    /// The class a free block of `size` bytes is binned under.
    pub fn bin_for_free(&self, size: u64) -> BinIndex {
        debug_assert!(size >= self.config.min_granule);
        let fl = 63 - size.leading_zeros();
        match self.variant {
            Variant::Single => BinIndex { fl, sl: 0 },
            Variant::Tlsf { sli_log } => {
                if fl <= sli_log {
                    // Sizes this small cannot subdivide into sli steps;
                    // min_block keeps them from mixing with larger blocks.
                    BinIndex { fl, sl: 0 }
                } else {
                    let sl = ((size - (1u64 << fl)) >> (fl - sli_log)) as u32;
                    BinIndex { fl, sl }
                }
            }
        }
    }

    /// The class an allocation request is served from: the first class whose
    /// every member is at least `size` bytes. Requests no class of this heap
    /// could ever hold are a size overflow.
    pub fn bin_for_request(&self, size: u64) -> Result<BinIndex, AllocError> {
        debug_assert!(size >= self.min_block);
        match self.variant {
            Variant::Single => {
                let fl = 64 - (size - 1).leading_zeros(); // ceil(log2)
                if 1u128 << fl > self.config.heap_size as u128 {
                    return Err(AllocError::SizeOverflow);
                }
                Ok(BinIndex { fl, sl: 0 })
            }
            Variant::Tlsf { sli_log } => {
                let fl = 63 - size.leading_zeros();
                let rounded = if fl <= sli_log {
                    size
                } else {
                    let step = 1u64 << (fl - sli_log);
                    size.checked_add(step - 1).ok_or(AllocError::SizeOverflow)?
                };
                let bin = self.bin_for_free(rounded);
                if self.class_lower_bound(bin) > self.config.heap_size {
                    return Err(AllocError::SizeOverflow);
                }
                Ok(bin)
            }
        }
    }

    /// Smallest size that maps into `bin`.
    fn class_lower_bound(&self, bin: BinIndex) -> u64 {
        match self.variant {
            Variant::Single => 1u64 << bin.fl,
            Variant::Tlsf { sli_log } => {
                let base = 1u64 << bin.fl;
                if bin.fl <= sli_log {
                    base
                } else {
                    base + (bin.sl as u64) * (1u64 << (bin.fl - sli_log))
                }
            }
        }
    }

    fn linear(&self, bin: BinIndex) -> usize {
        match self.variant {
            Variant::Single => bin.fl as usize,
            Variant::Tlsf { sli_log } => ((bin.fl as usize) << sli_log) + bin.sl as usize,
        }
    }

    fn set_bit(&mut self, bin: BinIndex) {
        self.edits += 1;
        self.first_level |= 1u64 << bin.fl;
        if let Variant::Tlsf { .. } = self.variant {
            self.second_level[bin.fl as usize] |= 1u64 << bin.sl;
        }
    }

    fn clear_bit(&mut self, bin: BinIndex) {
        self.edits += 1;
        match self.variant {
            Variant::Single => self.first_level &= !(1u64 << bin.fl),
            Variant::Tlsf { .. } => {
                self.second_level[bin.fl as usize] &= !(1u64 << bin.sl);
                if self.second_level[bin.fl as usize] == 0 {
                    self.first_level &= !(1u64 << bin.fl);
                }
            }
        }
    }

    /// Finds the first nonempty class at or above the request's class via
    /// find-first-set over the availability bitmap(s).
    fn find_serving_bin(&self, start: BinIndex) -> Result<BinIndex, AllocError> {
        match self.variant {
            Variant::Single => {
                let mask = self.first_level & (!0u64).checked_shl(start.fl).unwrap_or(0);
                if mask == 0 {
                    return Err(AllocError::OutOfMemory);
                }
                Ok(BinIndex { fl: mask.trailing_zeros(), sl: 0 })
            }
            Variant::Tlsf { .. } => {
                let word = self.second_level[start.fl as usize]
                    & (!0u64).checked_shl(start.sl).unwrap_or(0);
                if word != 0 {
                    return Ok(BinIndex { fl: start.fl, sl: word.trailing_zeros() });
                }
                let upper = self.first_level & (!0u64).checked_shl(start.fl + 1).unwrap_or(0);
                if upper == 0 {
                    return Err(AllocError::OutOfMemory);
                }
                let fl = upper.trailing_zeros();
                let sl = self.second_level[fl as usize].trailing_zeros();
                Ok(BinIndex { fl, sl })
            }
        }
    }

    /// Pushes a block at the head of its size class, sets the class bit, and
    /// stores the entry.
    fn push_free_block(&mut self, mut e: BlockEntry) {
        let bin = self.bin_for_free(e.size);
        let idx = self.linear(bin);
        e.free = true;
        e.next_free = self.heads[idx];
        e.prev_free = None;
        self.edits += 2;
        if let Some(old) = self.heads[idx] {
            self.table.get_mut(old).unwrap().prev_free = Some(e.addr);
            self.edits += 1;
        }
        self.heads[idx] = Some(e.addr);
        self.set_bit(bin);
        self.table.insert(e);
    }

    /// Unlinks a free block from its class list, clearing the class bit when
    /// the head empties out.
    fn unlink_free_block(&mut self, addr: Address) {
        let e = *self.table.get(addr).unwrap();
        debug_assert!(e.free, "unlinking a block that is not free");
        let bin = self.bin_for_free(e.size);
        let idx = self.linear(bin);
        self.edits += 2;
        match e.prev_free {
            Some(p) => self.table.get_mut(p).unwrap().next_free = e.next_free,
            None => {
                debug_assert_eq!(self.heads[idx], Some(addr), "free list head mismatch");
                self.heads[idx] = e.next_free;
            }
        }
        if let Some(n) = e.next_free {
            self.table.get_mut(n).unwrap().prev_free = e.prev_free;
            self.edits += 1;
        }
        if self.heads[idx].is_none() {
            self.clear_bit(bin);
        }
        let me = self.table.get_mut(addr).unwrap();
        me.next_free = None;
        me.prev_free = None;
    }

    fn begin_op(&self) -> (u64, u64, u64) {
        (self.table.probes(), self.table.resize_probes(), self.edits)
    }

    fn end_op(&mut self, snapshot: (u64, u64, u64)) {
        self.metrics = SegFitMetrics {
            steps: (self.table.probes() - snapshot.0) + (self.edits - snapshot.2),
            resize_steps: self.table.resize_probes() - snapshot.1,
        };
    }

    /// Walks every internal invariant and panics on the first violation:
    /// entries tile the heap, `prev_adj` matches physical adjacency, free
    /// lists are mutually linked, and the bitmaps agree with the list heads.
    pub fn assert_invariants(&self) {
        // Tiling and prev_adj.
        let mut entries: Vec<BlockEntry> = self.table.iter().copied().collect();
        entries.sort_by_key(|e| e.addr);
        let mut expected_addr = 0u64;
        let mut expected_prev: Option<Address> = None;
        for e in &entries {
            assert_eq!(e.addr, expected_addr, "tiling gap or overlap");
            assert_eq!(e.prev_adj, expected_prev, "prev_adj mismatch at {}", e.addr);
            assert!(e.size >= self.config.min_granule);
            expected_prev = Some(e.addr);
            expected_addr = e.end();
        }
        assert_eq!(expected_addr, self.config.heap_size, "entries do not cover the heap");

        // Free lists: every free block reachable from exactly one head,
        // links mutually consistent, members binned correctly.
        let mut seen = std::collections::HashSet::new();
        for (idx, &head) in self.heads.iter().enumerate() {
            let mut prev: Option<Address> = None;
            let mut cur = head;
            while let Some(addr) = cur {
                let e = self
                    .table
                    .get(addr)
                    .unwrap_or_else(|| panic!("free list references missing entry {addr}"));
                assert!(e.free, "in-use block {addr} on a free list");
                assert_eq!(e.prev_free, prev, "broken prev_free at {addr}");
                assert_eq!(
                    self.linear(self.bin_for_free(e.size)),
                    idx,
                    "block {addr} in wrong bin"
                );
                assert!(seen.insert(addr), "block {addr} on two free lists");
                prev = cur;
                cur = e.next_free;
            }
        }
        for e in &entries {
            if e.free {
                assert!(seen.contains(&e.addr), "free block {} not on any list", e.addr);
            } else {
                assert_eq!(e.next_free, None);
                assert_eq!(e.prev_free, None);
            }
        }

        // Bitmap soundness: bit set iff list nonempty, both levels.
        match self.variant {
            Variant::Single => {
                for (fl, &head) in self.heads.iter().enumerate() {
                    assert_eq!(
                        self.first_level >> fl & 1 == 1,
                        head.is_some(),
                        "first-level bit {fl} out of sync"
                    );
                }
            }
            Variant::Tlsf { sli_log } => {
                for (idx, &head) in self.heads.iter().enumerate() {
                    let (fl, sl) = (idx >> sli_log, idx & ((1 << sli_log) - 1));
                    assert_eq!(
                        self.second_level[fl] >> sl & 1 == 1,
                        head.is_some(),
                        "second-level bit ({fl},{sl}) out of sync"
                    );
                }
                for (fl, &word) in self.second_level.iter().enumerate() {
                    assert_eq!(
                        self.first_level >> fl & 1 == 1,
                        word != 0,
                        "first-level bit {fl} out of sync with second level"
                    );
                }
            }
        }
    }
}

impl Allocator for SegFitAllocator {
    fn config(&self) -> &HeapConfig {
        &self.config
    }

    fn alloc(&mut self, size: u64) -> Result<Address, AllocError> {
        if size == 0 {
            return Err(AllocError::ZeroSize);
        }
        let rounded = self.config.round_size(size).ok_or(AllocError::SizeOverflow)?;
        let effective = rounded.max(self.min_block);
        let snapshot = self.begin_op();
        let start = self.bin_for_request(effective)?;
        let bin = self.find_serving_bin(start)?;
        let addr = self.heads[self.linear(bin)].expect("bitmap bit set for empty list");

        self.unlink_free_block(addr);
        let entry = self.table.get_mut(addr).unwrap();
        entry.free = false;
        let block_size = entry.size;
        debug_assert!(block_size >= effective);

        // Split off the surplus, unless it is too small to stand alone.
        let surplus = block_size - effective;
        let final_size = if surplus >= self.min_block {
            self.table.get_mut(addr).unwrap().size = effective;
            let mut new_block = BlockEntry::new_free(addr + effective, surplus);
            new_block.prev_adj = Some(addr);
            self.push_free_block(new_block);
            // The old block's successor now physically follows the surplus.
            if let Some(succ) = self.table.get_mut(new_block.addr + surplus) {
                succ.prev_adj = Some(new_block.addr);
                self.edits += 1;
            }
            effective
        } else {
            block_size
        };

        self.end_op(snapshot);
        self.occupancy.on_alloc(BlockRange::new(addr, final_size));
        Ok(addr)
    }

    fn free(&mut self, addr: Address) -> Result<(), AllocError> {
        let snapshot = self.begin_op();
        let it = match self.table.get(addr) {
            None => return Err(AllocError::InvalidFree),
            Some(e) if e.free => return Err(AllocError::DoubleFree),
            Some(e) => *e,
        };

        let left = it.prev_adj.map(|a| *self.table.get(a).unwrap());
        let right = self.table.get(it.end()).copied();
        let left_free = left.is_some_and(|e| e.free);
        let right_free = right.is_some_and(|e| e.free);

        let final_block = if left_free {
            let mut left = left.unwrap();
            self.unlink_free_block(left.addr);
            if right_free {
                // Coalesce all three; the left block absorbs both.
                let right = right.unwrap();
                self.unlink_free_block(right.addr);
                left.size += it.size + right.size;
                if let Some(succ) = self.table.get_mut(right.end()) {
                    succ.prev_adj = Some(left.addr);
                    self.edits += 1;
                }
                self.table.remove(right.addr);
            } else {
                left.size += it.size;
                if let Some(r) = right {
                    self.table.get_mut(r.addr).unwrap().prev_adj = Some(left.addr);
                    self.edits += 1;
                }
            }
            self.table.remove(it.addr);
            left
        } else if right_free {
            // Coalesce the right block into this one.
            let right = right.unwrap();
            self.unlink_free_block(right.addr);
            let mut merged = it;
            merged.size += right.size;
            if let Some(succ) = self.table.get_mut(right.end()) {
                succ.prev_adj = Some(merged.addr);
                self.edits += 1;
            }
            self.table.remove(right.addr);
            merged
        } else {
            it
        };

        // The final coalesced block is re-binned once, at the head.
        self.push_free_block(final_block);
        self.end_op(snapshot);
        self.occupancy.on_free(it.size);
        Ok(())
    }

    fn stats(&self) -> OverheadStats {
        let bin_words = self.heads.len() as u64 + 1 + self.second_level.len() as u64;
        OverheadStats {
            host_metadata_bytes: self.table.metadata_bytes() + bin_words * 8,
            managed_bytes: self.config.heap_size,
            live_bytes: self.occupancy.live_bytes,
            reserved_bytes: self.occupancy.reserved_high_water,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn single(heap: u64) -> SegFitAllocator {
        SegFitAllocator::new_single(HeapConfig::new(heap)).unwrap()
    }

    fn tlsf(heap: u64) -> SegFitAllocator {
        SegFitAllocator::new_tlsf(HeapConfig::new(heap), DEFAULT_SLI).unwrap()
    }

    #[test]
    fn free_bins_by_floor_log2() {
        let a = single(1 << 20);
        assert_eq!(a.bin_for_free(3000), BinIndex { fl: 11, sl: 0 });
        assert_eq!(a.bin_for_free(4096), BinIndex { fl: 12, sl: 0 });
    }

    #[test]
    fn request_bins_by_ceil_log2() {
        let a = single(1 << 20);
        assert_eq!(a.bin_for_request(1000).unwrap(), BinIndex { fl: 10, sl: 0 });
        assert_eq!(a.bin_for_request(1024).unwrap(), BinIndex { fl: 10, sl: 0 });
        assert_eq!(a.bin_for_request(1025).unwrap(), BinIndex { fl: 11, sl: 0 });
        assert_eq!(a.bin_for_request(1 << 21), Err(AllocError::SizeOverflow));
    }

    #[test]
    fn tlsf_free_mapping_subdivides_linearly() {
        let a = tlsf(1 << 20);
        assert_eq!(a.bin_for_free(2048 + 384), BinIndex { fl: 11, sl: 3 });
        assert_eq!(a.bin_for_free(2048), BinIndex { fl: 11, sl: 0 });
        assert_eq!(a.bin_for_free(4088), BinIndex { fl: 11, sl: 15 });
    }

    #[test]
    fn first_alloc_splits_the_wilderness() {
        let mut a = single(1 << 20);
        assert_eq!(a.alloc(1000).unwrap(), 0);
        let remainder = *a.table().get(1000).unwrap();
        assert!(remainder.free);
        assert_eq!(remainder.size, (1 << 20) - 1000);
        assert_eq!(remainder.prev_adj, Some(0));
        // The remainder landed in bin 19 and the whole-heap bin emptied.
        assert_eq!(a.bin_for_free(remainder.size).fl, 19);
        assert_eq!(a.first_level, 1 << 19);
        a.assert_invariants();
    }

    #[test]
    fn exact_power_request_skips_the_split() {
        let mut a = single(1 << 20);
        let p = a.alloc(1 << 20).unwrap();
        assert_eq!(p, 0);
        assert_eq!(a.table().len(), 1);
        assert_eq!(a.first_level, 0);
        a.assert_invariants();
    }

    #[test]
    fn alloc_free_cycle_restores_single_block() {
        for mut a in [single(1 << 20), tlsf(1 << 20)] {
            let p = a.alloc(1000).unwrap();
            a.free(p).unwrap();
            assert_eq!(a.table().len(), 1);
            let whole = *a.table().get(0).unwrap();
            assert!(whole.free);
            assert_eq!(whole.size, 1 << 20);
            // Exactly one first-level bit set: the whole-heap class.
            assert_eq!(a.first_level, 1 << 20);
            a.assert_invariants();
        }
    }

    #[test]
    fn free_with_both_neighbors_free_merges_three() {
        let mut a = single(1 << 16);
        let pa = a.alloc(256).unwrap();
        let pb = a.alloc(256).unwrap();
        let pc = a.alloc(256).unwrap();
        let _pd = a.alloc(256).unwrap();
        a.free(pa).unwrap();
        a.free(pc).unwrap();
        a.assert_invariants();
        a.free(pb).unwrap();
        a.assert_invariants();
        let merged = *a.table().get(pa).unwrap();
        assert!(merged.free);
        assert_eq!(merged.size, 768);
        // The block after the merged span points back at it.
        assert_eq!(a.table().get(merged.end()).unwrap().prev_adj, Some(pa));
    }

    #[test]
    fn free_with_left_neighbor_free_grows_left() {
        let mut a = single(1 << 16);
        let pa = a.alloc(256).unwrap();
        let pb = a.alloc(256).unwrap();
        let pc = a.alloc(256).unwrap();
        a.free(pa).unwrap();
        a.free(pb).unwrap();
        a.assert_invariants();
        let merged = *a.table().get(pa).unwrap();
        assert_eq!(merged.size, 512);
        assert_eq!(a.table().get(pc).unwrap().prev_adj, Some(pa));
    }

    #[test]
    fn free_with_right_neighbor_free_absorbs_right() {
        let mut a = single(1 << 16);
        let _pa = a.alloc(256).unwrap();
        let pb = a.alloc(256).unwrap();
        let pc = a.alloc(256).unwrap();
        let pd = a.alloc(256).unwrap();
        a.free(pc).unwrap();
        a.free(pb).unwrap();
        a.assert_invariants();
        let merged = *a.table().get(pb).unwrap();
        assert_eq!(merged.size, 512);
        assert_eq!(a.table().get(pd).unwrap().prev_adj, Some(pb));
    }

    #[test]
    fn error_taxonomy() {
        let mut a = single(1 << 16);
        assert_eq!(a.alloc(0), Err(AllocError::ZeroSize));
        assert_eq!(a.alloc(1 << 17), Err(AllocError::SizeOverflow));
        let p = a.alloc(64).unwrap();
        assert_eq!(a.free(p + 8), Err(AllocError::InvalidFree));
        a.free(p).unwrap();
        assert_eq!(a.free(p), Err(AllocError::DoubleFree));
    }

    #[test]
    fn freed_block_is_reused_lifo() {
        let mut a = single(1 << 16);
        // Carve out same-class blocks with live separators so they cannot
        // coalesce.
        let p0 = a.alloc(128).unwrap();
        let _s0 = a.alloc(8).unwrap();
        let p1 = a.alloc(128).unwrap();
        let _s1 = a.alloc(8).unwrap();
        a.free(p0).unwrap();
        a.free(p1).unwrap();
        // Last freed, first served.
        assert_eq!(a.alloc(128).unwrap(), p1);
        assert_eq!(a.alloc(128).unwrap(), p0);
    }

    #[test]
    fn tlsf_climbs_on_subclass_miss() {
        // Heap 8192, one allocation of 4096: the only free block is the
        // remainder [4096, 8192), sized exactly 4096 — list (fl 12, sl 0).
        let mut a = tlsf(8192);
        assert_eq!(a.alloc(4096).unwrap(), 0);
        assert_eq!(a.bin_for_free(4096), BinIndex { fl: 12, sl: 0 });
        // A request mapping to (fl 10, sl 2) finds its own subclass word and
        // every higher subclass of fl 10 empty, and climbs to (12, 0).
        assert_eq!(a.bin_for_request(1152).unwrap(), BinIndex { fl: 10, sl: 2 });
        assert_eq!(
            a.find_serving_bin(BinIndex { fl: 10, sl: 2 }).unwrap(),
            BinIndex { fl: 12, sl: 0 }
        );
        assert_eq!(a.alloc(1152).unwrap(), 4096);
        a.assert_invariants();
    }

    #[test]
    fn tlsf_exhausted_heap_reports_out_of_memory() {
        let mut a = tlsf(8192);
        // An exact-power request is still served from its own class.
        assert_eq!(a.alloc(8192).unwrap(), 0);
        assert_eq!(a.first_level, 0);
        assert_eq!(a.alloc(8), Err(AllocError::OutOfMemory));
        a.assert_invariants();
    }

    #[test]
    fn tlsf_split_threshold_keeps_min_block() {
        let mut a = tlsf(1 << 16);
        // Request one granule below a class boundary: the 8-byte surplus is
        // below min_block (16) and must not be split off.
        let p = a.alloc(24).unwrap();
        let got = a.table().get(p).unwrap().size;
        assert!(got >= 24 && got - 24 <= 16, "served {got}");
        a.assert_invariants();
    }

    #[test]
    fn invariants_hold_under_random_traces() {
        for make in [single as fn(u64) -> SegFitAllocator, tlsf] {
            let mut a = make(1 << 20);
            let mut rng = StdRng::seed_from_u64(11);
            let mut live: Vec<Address> = Vec::new();
            for i in 0..2000 {
                if live.is_empty() || rng.gen_bool(0.55) {
                    let size = rng.gen_range(1..=8192u64);
                    if let Ok(p) = a.alloc(size) {
                        live.push(p);
                    }
                } else {
                    let p = live.swap_remove(rng.gen_range(0..live.len()));
                    a.free(p).unwrap();
                }
                if i % 32 == 0 {
                    a.assert_invariants();
                }
            }
            a.assert_invariants();
            // Drain and verify full restoration.
            for p in live.drain(..) {
                a.free(p).unwrap();
            }
            assert_eq!(a.table().len(), 1);
            assert_eq!(a.table().get(0).unwrap().size, 1 << 20);
            a.assert_invariants();
        }
    }

    #[test]
    fn served_class_never_reaches_4x_of_request() {
        let a = single(1 << 20);
        for request in (8..=8192u64).step_by(8) {
            let bin = a.bin_for_request(request).unwrap();
            // Largest block whose floor-log2 class equals the serving class.
            let class_max = (1u64 << (bin.fl + 1)) - a.config().min_granule;
            assert!(
                class_max < 4 * request,
                "request {request} can be served by {class_max}"
            );
        }
    }
}
