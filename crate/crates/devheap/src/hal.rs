//! Hybrid array list: a doubly linked list of fixed-capacity sorted array
//! chunks.
//!
//! Edits shift entries only within one chunk (two when a full chunk splits),
//! so insertion and removal cost scale with the chunk capacity `m` rather
//! than the total entry count, while lookups walk chunk heads and then
//! binary-search a single chunk. This is the free-list replacement used by
//! the sequential-fit allocators: one list tracks free blocks, another the
//! blocks in use.

use crate::heap::{Address, BlockRange, ConfigError, HeapConfig};

pub const DEFAULT_CHUNK_CAP: usize = 64;

const NO_CHUNK: u32 = u32::MAX;

/// Position inside a [`Hal`]: a chunk reference plus a slot index, with two
/// distinguished sentinels (one before the first entry, one past the last).
///
/// Iterators are invalidated by any structural edit; the sequential-fit
/// cursor survives edits by re-resolving from a stored address instead.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct HalIter {
    chunk: u32,
    index: u32,
}

const BEFORE_BEGIN: HalIter = HalIter { chunk: NO_CHUNK, index: 0 };
const PAST_END: HalIter = HalIter { chunk: NO_CHUNK, index: 1 };

impl HalIter {
    pub fn is_before_begin(&self) -> bool {
        *self == BEFORE_BEGIN
    }

    pub fn is_end(&self) -> bool {
        *self == PAST_END
    }

    pub fn is_valid(&self) -> bool {
        self.chunk != NO_CHUNK
    }
}

struct Chunk {
    entries: Vec<BlockRange>,
    prev: u32,
    next: u32,
}

/// Per-operation instrumentation, kept to witness the advertised costs.
#[derive(Clone, Copy, Debug, Default)]
pub struct HalMetrics {
    /// Chunk-head comparisons made by the last search.
    pub search_chunk_comparisons: u64,
    /// Intra-chunk binary-search probes made by the last search.
    pub search_probes: u64,
    /// Chunks whose entry arrays were edited by the last insert/remove.
    pub edit_chunks_touched: u64,
}

pub struct Hal {
    chunks: Vec<Chunk>,
    recycled: Vec<u32>,
    head: u32,
    tail: u32,
    chunk_cap: usize,
    len: usize,
    metrics: std::cell::Cell<HalMetrics>,
}

impl Hal {
    /// An empty list holding a single zero-count chunk, mirroring the
    /// initialized-but-empty used list.
    pub fn new(chunk_cap: usize) -> Self {
        assert!(chunk_cap >= 2, "chunk capacity must be at least 2");
        Hal {
            chunks: vec![Chunk {
                entries: Vec::with_capacity(chunk_cap),
                prev: NO_CHUNK,
                next: NO_CHUNK,
            }],
            recycled: Vec::new(),
            head: 0,
            tail: 0,
            chunk_cap,
            len: 0,
            metrics: std::cell::Cell::new(HalMetrics::default()),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len() - self.recycled.len()
    }

    pub fn metrics(&self) -> HalMetrics {
        self.metrics.get()
    }

    pub fn before_begin(&self) -> HalIter {
        BEFORE_BEGIN
    }

    pub fn end(&self) -> HalIter {
        PAST_END
    }

    /// Iterator to the lowest-addressed entry, or past-the-end when empty.
    pub fn first(&self) -> HalIter {
        if self.is_empty() {
            PAST_END
        } else {
            HalIter { chunk: self.head, index: 0 }
        }
    }

    /// Iterator to the highest-addressed entry, or before-begin when empty.
    pub fn last(&self) -> HalIter {
        if self.is_empty() {
            BEFORE_BEGIN
        } else {
            HalIter {
                chunk: self.tail,
                index: (self.chunks[self.tail as usize].entries.len() - 1) as u32,
            }
        }
    }

    pub fn get(&self, it: HalIter) -> BlockRange {
        debug_assert!(it.is_valid());
        self.chunks[it.chunk as usize].entries[it.index as usize]
    }

    /// Mutable access for in-place edits that preserve address order (the
    /// allocators shrink and grow entries without moving them).
    pub fn get_mut(&mut self, it: HalIter) -> &mut BlockRange {
        debug_assert!(it.is_valid());
        &mut self.chunks[it.chunk as usize].entries[it.index as usize]
    }

    /// Steps forward: increment the index, rolling over to the next chunk's
    /// slot 0 when the index leaves the occupied prefix.
    pub fn next(&self, it: HalIter) -> HalIter {
        if it.is_before_begin() {
            return self.first();
        }
        if it.is_end() {
            return PAST_END;
        }
        let chunk = &self.chunks[it.chunk as usize];
        if (it.index as usize) + 1 < chunk.entries.len() {
            HalIter { chunk: it.chunk, index: it.index + 1 }
        } else if chunk.next != NO_CHUNK {
            HalIter { chunk: chunk.next, index: 0 }
        } else {
            PAST_END
        }
    }

    /// Steps backward: decrement the index, rolling over to the previous
    /// chunk's last occupied slot.
    pub fn prev(&self, it: HalIter) -> HalIter {
        if it.is_end() {
            return self.last();
        }
        if it.is_before_begin() {
            return BEFORE_BEGIN;
        }
        let chunk = &self.chunks[it.chunk as usize];
        if it.index > 0 {
            HalIter { chunk: it.chunk, index: it.index - 1 }
        } else if chunk.prev != NO_CHUNK {
            let prev = chunk.prev;
            HalIter {
                chunk: prev,
                index: (self.chunks[prev as usize].entries.len() - 1) as u32,
            }
        } else {
            BEFORE_BEGIN
        }
    }

    /// Finds the entry with the greatest address not exceeding `x`.
    ///
    /// Walks chunks from the tail backwards, comparing each chunk's smallest
    /// entry against `x`; once a chunk can contain the answer, binary-search
    /// inside it. Returns before-begin when every entry exceeds `x`.
    pub fn search(&self, x: Address) -> HalIter {
        let mut m = self.metrics.get();
        m.search_chunk_comparisons = 0;
        m.search_probes = 0;
        let mut result = BEFORE_BEGIN;
        let mut chunk = self.tail;
        while chunk != NO_CHUNK {
            let c = &self.chunks[chunk as usize];
            if c.entries.is_empty() {
                // Only the sole chunk of an empty list.
                break;
            }
            m.search_chunk_comparisons += 1;
            if c.entries[0].addr <= x {
                // Last index with addr <= x.
                let mut lo = 0usize;
                let mut hi = c.entries.len();
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    m.search_probes += 1;
                    if c.entries[mid].addr <= x {
                        lo = mid + 1;
                    } else {
                        hi = mid;
                    }
                }
                result = HalIter { chunk, index: (lo - 1) as u32 };
                break;
            }
            chunk = c.prev;
        }
        self.metrics.set(m);
        result
    }

    fn new_chunk(&mut self) -> u32 {
        if let Some(slot) = self.recycled.pop() {
            slot
        } else {
            self.chunks.push(Chunk {
                entries: Vec::with_capacity(self.chunk_cap),
                prev: NO_CHUNK,
                next: NO_CHUNK,
            });
            (self.chunks.len() - 1) as u32
        }
    }

    /// Inserts `entry` so that it occupies position `it` (entries at and
    /// after `it` shift right). `it` must be a valid position or past-the-end;
    /// the caller is responsible for picking a position that keeps the list
    /// address-sorted. Returns the position of the inserted entry.
    pub fn insert(&mut self, it: HalIter, entry: BlockRange) -> HalIter {
        assert!(!it.is_before_begin(), "cannot insert before the begin sentinel");
        let (chunk, index) = if it.is_end() {
            (self.tail, self.chunks[self.tail as usize].entries.len())
        } else {
            (it.chunk, it.index as usize)
        };

        self.len += 1;
        if self.chunks[chunk as usize].entries.len() < self.chunk_cap {
            self.metrics.set(HalMetrics { edit_chunks_touched: 1, ..self.metrics.get() });
            self.chunks[chunk as usize].entries.insert(index, entry);
            return HalIter { chunk, index: index as u32 };
        }

        // Full chunk: split it, the front half staying put and the rest
        // moving to a freshly linked chunk, then insert into the right half.
        self.metrics.set(HalMetrics { edit_chunks_touched: 2, ..self.metrics.get() });
        let keep = self.chunk_cap / 2;
        let new = self.new_chunk();
        let moved: Vec<BlockRange> = self.chunks[chunk as usize].entries.split_off(keep);
        let old_next = self.chunks[chunk as usize].next;
        {
            let n = &mut self.chunks[new as usize];
            n.entries = moved;
            n.prev = chunk;
            n.next = old_next;
        }
        self.chunks[chunk as usize].next = new;
        if old_next != NO_CHUNK {
            self.chunks[old_next as usize].prev = new;
        } else {
            self.tail = new;
        }

        if index < keep {
            self.chunks[chunk as usize].entries.insert(index, entry);
            HalIter { chunk, index: index as u32 }
        } else {
            let idx = index - keep;
            self.chunks[new as usize].entries.insert(idx, entry);
            HalIter { chunk: new, index: idx as u32 }
        }
    }

    /// Removes and returns the entry at `it`, shifting the chunk's suffix
    /// left. A chunk left empty is unlinked, except the sole remaining chunk
    /// of the list, which stays as the empty-list skeleton.
    pub fn remove(&mut self, it: HalIter) -> BlockRange {
        assert!(it.is_valid(), "remove requires a valid position");
        self.metrics.set(HalMetrics { edit_chunks_touched: 1, ..self.metrics.get() });
        let chunk = it.chunk;
        let removed = self.chunks[chunk as usize].entries.remove(it.index as usize);
        self.len -= 1;

        let (prev, next) = {
            let c = &self.chunks[chunk as usize];
            (c.prev, c.next)
        };
        let only_chunk = prev == NO_CHUNK && next == NO_CHUNK;
        if self.chunks[chunk as usize].entries.is_empty() && !only_chunk {
            if prev != NO_CHUNK {
                self.chunks[prev as usize].next = next;
            } else {
                self.head = next;
            }
            if next != NO_CHUNK {
                self.chunks[next as usize].prev = prev;
            } else {
                self.tail = prev;
            }
            let c = &mut self.chunks[chunk as usize];
            c.prev = NO_CHUNK;
            c.next = NO_CHUNK;
            self.recycled.push(chunk);
        }
        removed
    }

    /// In-order traversal of all entries.
    pub fn iter(&self) -> impl Iterator<Item = BlockRange> + '_ {
        let mut chunk = self.head;
        let mut index = 0usize;
        std::iter::from_fn(move || {
            while chunk != NO_CHUNK {
                let c = &self.chunks[chunk as usize];
                if index < c.entries.len() {
                    let e = c.entries[index];
                    index += 1;
                    return Some(e);
                }
                chunk = c.next;
                index = 0;
            }
            None
        })
    }

    /// Host bytes held by the container: reserved entry slots plus the
    /// per-chunk link words.
    pub fn metadata_bytes(&self) -> u64 {
        let per_chunk = (self.chunk_cap * std::mem::size_of::<BlockRange>() + 24) as u64;
        self.chunks.len() as u64 * per_chunk
    }
}

/// Builds the two lists every sequential-fit allocator starts from: a free
/// list holding the single whole-heap block and an empty used list.
pub fn init_free_used(config: &HeapConfig, chunk_cap: usize) -> Result<(Hal, Hal), ConfigError> {
    config.validate()?;
    let mut free = Hal::new(chunk_cap);
    let end = free.end();
    free.insert(end, BlockRange::new(0, config.heap_size));
    Ok((free, Hal::new(chunk_cap)))
}
