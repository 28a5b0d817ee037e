//! Hash table keyed by device address, holding what a boundary tag would.
//!
//! Every block, free or in use, has an entry carrying its size, free flag,
//! doubly linked free-list membership, and the address of the physically
//! preceding block (`prev_adj`) — the footer-tag replacement that lets
//! coalescing find the left neighbor in one lookup. The accounting model is
//! six words per entry: key, size, the two free-list links, `prev_adj`, and
//! the collision-chain link; the free flag rides in a spare bit.
//!
//! Collisions chain through the entries themselves; the bucket array doubles
//! when the load factor passes 0.75, which makes deallocation amortized
//! rather than strictly constant-time — resize work is metered separately so
//! the bounded-work tests can exclude it.

use std::cell::Cell;

use crate::heap::Address;

/// One block's metadata. `addr` is the table key and must not be modified
/// while the entry is stored.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BlockEntry {
    pub addr: Address,
    pub size: u64,
    pub free: bool,
    /// Next block in this entry's size-class free list.
    pub next_free: Option<Address>,
    /// Previous block in this entry's size-class free list.
    pub prev_free: Option<Address>,
    /// Physically preceding block, `None` for the block at offset 0.
    pub prev_adj: Option<Address>,
}

impl BlockEntry {
    pub fn new_free(addr: Address, size: u64) -> Self {
        BlockEntry {
            addr,
            size,
            free: true,
            next_free: None,
            prev_free: None,
            prev_adj: None,
        }
    }

    pub fn end(&self) -> Address {
        self.addr + self.size
    }
}

/// Modeled host words per stored entry.
pub const WORDS_PER_ENTRY: u64 = 6;

struct Slot {
    entry: BlockEntry,
    /// Collision chain link (slab index of the next entry in the bucket).
    chain: Option<u32>,
}

pub struct BlockTable {
    buckets: Vec<Option<u32>>,
    slots: Vec<Slot>,
    free_slots: Vec<u32>,
    count: usize,
    granule_log2: u32,
    /// Cumulative slots visited by lookups and edits.
    probes: Cell<u64>,
    /// Cumulative entries moved by bucket-array resizes, metered apart.
    resize_probes: u64,
}

const INITIAL_BUCKETS: usize = 16;
const MAX_LOAD_NUM: usize = 3;
const MAX_LOAD_DEN: usize = 4;

impl BlockTable {
    pub fn new(min_granule: u64) -> Self {
        debug_assert!(min_granule.is_power_of_two());
        BlockTable {
            buckets: vec![None; INITIAL_BUCKETS],
            slots: Vec::new(),
            free_slots: Vec::new(),
            count: 0,
            granule_log2: min_granule.trailing_zeros(),
            probes: Cell::new(0),
            resize_probes: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Cumulative probe count (bucket reads plus chain hops).
    pub fn probes(&self) -> u64 {
        self.probes.get()
    }

    /// Cumulative work spent rehashing on bucket-array growth.
    pub fn resize_probes(&self) -> u64 {
        self.resize_probes
    }

    /// Addresses are granule-aligned, so hash the granule index; Fibonacci
    /// multiplication spreads the low-entropy keys across the table.
    fn bucket_of(&self, addr: Address) -> usize {
        let key = addr >> self.granule_log2;
        let h = key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        (h >> (64 - self.buckets.len().trailing_zeros())) as usize
    }

    fn find_slot(&self, addr: Address) -> Option<u32> {
        self.probes.set(self.probes.get() + 1);
        let mut cur = self.buckets[self.bucket_of(addr)];
        while let Some(idx) = cur {
            self.probes.set(self.probes.get() + 1);
            let slot = &self.slots[idx as usize];
            if slot.entry.addr == addr {
                return Some(idx);
            }
            cur = slot.chain;
        }
        None
    }

    pub fn get(&self, addr: Address) -> Option<&BlockEntry> {
        self.find_slot(addr).map(|i| &self.slots[i as usize].entry)
    }

    /// Mutable access to a stored entry. The key field `addr` must be left
    /// unchanged.
    pub fn get_mut(&mut self, addr: Address) -> Option<&mut BlockEntry> {
        self.find_slot(addr)
            .map(|i| &mut self.slots[i as usize].entry)
    }

    pub fn contains(&self, addr: Address) -> bool {
        self.find_slot(addr).is_some()
    }

    /// Inserts `entry`, replacing any entry already stored under its address.
    pub fn insert(&mut self, entry: BlockEntry) {
        if let Some(idx) = self.find_slot(entry.addr) {
            self.slots[idx as usize].entry = entry;
            return;
        }
        if (self.count + 1) * MAX_LOAD_DEN > self.buckets.len() * MAX_LOAD_NUM {
            self.grow();
        }
        let idx = match self.free_slots.pop() {
            Some(i) => {
                self.slots[i as usize] = Slot { entry, chain: None };
                i
            }
            None => {
                self.slots.push(Slot { entry, chain: None });
                (self.slots.len() - 1) as u32
            }
        };
        let bucket = self.bucket_of(entry.addr);
        self.slots[idx as usize].chain = self.buckets[bucket];
        self.buckets[bucket] = Some(idx);
        self.count += 1;
        self.probes.set(self.probes.get() + 1);
    }

    /// Removes the entry stored under `addr`. Absence is metadata corruption.
    pub fn remove(&mut self, addr: Address) -> BlockEntry {
        let bucket = self.bucket_of(addr);
        self.probes.set(self.probes.get() + 1);
        let mut cur = self.buckets[bucket];
        let mut prev: Option<u32> = None;
        while let Some(idx) = cur {
            self.probes.set(self.probes.get() + 1);
            if self.slots[idx as usize].entry.addr == addr {
                let chain = self.slots[idx as usize].chain;
                match prev {
                    Some(p) => self.slots[p as usize].chain = chain,
                    None => self.buckets[bucket] = chain,
                }
                self.free_slots.push(idx);
                self.count -= 1;
                return self.slots[idx as usize].entry;
            }
            prev = cur;
            cur = self.slots[idx as usize].chain;
        }
        panic!("block table corruption: no entry at address {addr}");
    }

    fn grow(&mut self) {
        let mut live = Vec::with_capacity(self.count);
        for &head in &self.buckets {
            let mut cur = head;
            while let Some(idx) = cur {
                live.push(idx);
                cur = self.slots[idx as usize].chain;
            }
        }
        self.buckets = vec![None; self.buckets.len() * 2];
        for idx in live {
            let bucket = self.bucket_of(self.slots[idx as usize].entry.addr);
            self.slots[idx as usize].chain = self.buckets[bucket];
            self.buckets[bucket] = Some(idx);
            self.resize_probes += 1;
        }
    }

    /// All stored entries, in unspecified order.
    pub fn iter(&self) -> impl Iterator<Item = &BlockEntry> + '_ {
        self.buckets.iter().flat_map(move |&head| {
            let mut cur = head;
            std::iter::from_fn(move || {
                let idx = cur?;
                let slot = &self.slots[idx as usize];
                cur = slot.chain;
                Some(&slot.entry)
            })
        })
    }

    /// Length of the longest collision chain.
    pub fn max_chain(&self) -> usize {
        self.buckets
            .iter()
            .map(|&head| {
                let mut n = 0;
                let mut cur = head;
                while let Some(idx) = cur {
                    n += 1;
                    cur = self.slots[idx as usize].chain;
                }
                n
            })
            .max()
            .unwrap_or(0)
    }

    /// Modeled metadata bytes: six words per entry plus the bucket array.
    pub fn metadata_bytes(&self) -> u64 {
        self.count as u64 * WORDS_PER_ENTRY * 8 + self.buckets.len() as u64 * 8
    }
}
