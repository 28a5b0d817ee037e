//! Bitmap allocation: one bit per granule of device memory, set = free.
//!
//! Allocation scans for a contiguous run of set bits, resuming from a
//! next-fit cursor and skipping exhausted words with the machine's
//! find-first-set (`trailing_zeros`/`trailing_ones`). Freeing sets the run's
//! bits back; coalescing is implicit because adjacency is positional.
//!
//! The bitmap itself cannot answer "how long was this allocation", so a
//! host-side table records the run length of each live allocation — one
//! word per live block, reported separately from the mask in the overhead
//! accounting. A consequence of that table is that a double free and a free
//! of an address that was never a block start are indistinguishable here;
//! both report `InvalidFree`.

use std::collections::HashMap;

use crate::heap::{
    Address, AllocError, Allocator, BlockRange, ConfigError, HeapConfig, Occupancy, OverheadStats,
};

/// Per-operation instrumentation for the cost witnesses.
#[derive(Clone, Copy, Debug, Default)]
pub struct BitmaskMetrics {
    /// Words loaded while searching and measuring runs in the last alloc.
    pub words_examined: u64,
    /// Bits cleared by the last alloc.
    pub bits_cleared: u64,
    /// Bits set by the last free.
    pub bits_set: u64,
}

pub struct BitmaskAllocator {
    config: HeapConfig,
    /// One bit per granule; bit set means the granule is free.
    words: Vec<u64>,
    bits: u64,
    /// Next-fit resume point, a granule index.
    cursor: u64,
    /// Run length (in granules) of each live allocation, keyed by address.
    size_table: HashMap<Address, u64>,
    occupancy: Occupancy,
    metrics: BitmaskMetrics,
}

impl BitmaskAllocator {
    pub fn new(config: HeapConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let bits = config.heap_size / config.min_granule;
        let word_count = bits.div_ceil(64) as usize;
        let mut words = vec![!0u64; word_count];
        // Bits past the heap end stay clear so scans never find them.
        let tail = bits % 64;
        if tail != 0 {
            words[word_count - 1] = (1u64 << tail) - 1;
        }
        Ok(BitmaskAllocator {
            config,
            words,
            bits,
            cursor: 0,
            size_table: HashMap::new(),
            occupancy: Occupancy::default(),
            metrics: BitmaskMetrics::default(),
        })
    }

    pub fn config(&self) -> &HeapConfig {
        &self.config
    }

    pub fn metrics(&self) -> BitmaskMetrics {
        self.metrics
    }

    pub fn granule_is_free(&self, idx: u64) -> bool {
        debug_assert!(idx < self.bits);
        self.words[(idx / 64) as usize] >> (idx % 64) & 1 == 1
    }

    /// Host bytes of the size table: one word per live allocation.
    pub fn size_table_bytes(&self) -> u64 {
        self.size_table.len() as u64 * 8
    }

    pub fn live_blocks(&self) -> impl Iterator<Item = BlockRange> + '_ {
        self.size_table
            .iter()
            .map(|(&addr, &run)| BlockRange::new(addr, run * self.config.min_granule))
    }

    /// First set bit in `[from, limit)`, skipping all-zero words.
    fn next_set_bit(&mut self, from: u64, limit: u64) -> Option<u64> {
        if from >= limit {
            return None;
        }
        let mut w = (from / 64) as usize;
        let mut word = self.words[w] & (!0u64 << (from % 64));
        self.metrics.words_examined += 1;
        loop {
            if word != 0 {
                let bit = w as u64 * 64 + word.trailing_zeros() as u64;
                return (bit < limit).then_some(bit);
            }
            w += 1;
            if w as u64 * 64 >= limit {
                return None;
            }
            word = self.words[w];
            self.metrics.words_examined += 1;
        }
    }

    /// Length of the run of set bits starting at `start`, measured no
    /// further than `need` bits and never past the bitmap end.
    fn run_length(&mut self, start: u64, need: u64) -> u64 {
        let mut run = 0;
        let mut pos = start;
        while run < need && pos < self.bits {
            let word = self.words[(pos / 64) as usize];
            self.metrics.words_examined += 1;
            let offset = pos % 64;
            let ones = (word >> offset).trailing_ones() as u64;
            let ones = ones.min(64 - offset);
            if ones == 0 {
                break;
            }
            run += ones;
            pos += ones;
        }
        run.min(need)
    }

    /// Looks for a run of `need` set bits starting in `[lo, hi)`. Runs are
    /// linear in the address space and never wrap, so once a candidate start
    /// cannot fit before the bitmap end the phase is over.
    fn find_run_in(&mut self, lo: u64, hi: u64, need: u64) -> Option<u64> {
        let mut start = lo;
        while start < hi {
            let s = self.next_set_bit(start, hi)?;
            if s + need > self.bits {
                return None;
            }
            let run = self.run_length(s, need);
            if run >= need {
                return Some(s);
            }
            // Every start within the short run hits the same clear bit.
            start = s + run + 1;
        }
        None
    }

    fn set_run(&mut self, start: u64, len: u64, value: bool) {
        for idx in start..start + len {
            let w = (idx / 64) as usize;
            let mask = 1u64 << (idx % 64);
            if value {
                debug_assert_eq!(self.words[w] & mask, 0, "freeing a free granule");
                self.words[w] |= mask;
            } else {
                debug_assert_ne!(self.words[w] & mask, 0, "allocating a used granule");
                self.words[w] &= !mask;
            }
        }
    }
}

impl Allocator for BitmaskAllocator {
    fn config(&self) -> &HeapConfig {
        &self.config
    }

    fn alloc(&mut self, size: u64) -> Result<Address, AllocError> {
        if size == 0 {
            return Err(AllocError::ZeroSize);
        }
        self.metrics = BitmaskMetrics::default();
        let need = size.div_ceil(self.config.min_granule);
        if need > self.bits {
            return Err(AllocError::OutOfMemory);
        }
        // One full circular lap: starts at or past the cursor first, then
        // the wrapped-around prefix.
        let start = self
            .find_run_in(self.cursor, self.bits, need)
            .or_else(|| self.find_run_in(0, self.cursor, need))
            .ok_or(AllocError::OutOfMemory)?;
        self.set_run(start, need, false);
        self.metrics.bits_cleared = need;
        self.cursor = (start + need) % self.bits;
        let addr = start * self.config.min_granule;
        self.size_table.insert(addr, need);
        self.occupancy
            .on_alloc(BlockRange::new(addr, need * self.config.min_granule));
        Ok(addr)
    }

    fn free(&mut self, addr: Address) -> Result<(), AllocError> {
        let run = self.size_table.remove(&addr).ok_or(AllocError::InvalidFree)?;
        self.metrics = BitmaskMetrics::default();
        self.set_run(addr / self.config.min_granule, run, true);
        self.metrics.bits_set = run;
        self.occupancy.on_free(run * self.config.min_granule);
        Ok(())
    }

    fn stats(&self) -> OverheadStats {
        OverheadStats {
            host_metadata_bytes: self.words.len() as u64 * 8,
            managed_bytes: self.config.heap_size,
            live_bytes: self.occupancy.live_bytes,
            reserved_bytes: self.occupancy.reserved_high_water,
        }
    }
}
