//! Trace replay harness: drives a strategy through a trace, recording
//! per-operation latency and memory occupancy.
//!
//! The reported `live_bytes` series is computed from the trace itself
//! (granule-rounded request sizes), so it is identical for every strategy
//! on the same trace; `reserved_bytes` — the high-water mark of device
//! memory actually touched — is where strategies differ, and
//! `1 - live/reserved` is the fragmentation measure derived from them.

use std::collections::HashMap;
use std::error::Error;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::time::Instant;

use crate::bitmask::BitmaskAllocator;
use crate::heap::{Address, AllocError, Allocator, ConfigError, FitPolicy, HeapConfig};
use crate::oracle::OracleAllocator;
use crate::segfit::SegFitAllocator;
use crate::seqfit::SequentialAllocator;
use crate::trace::TraceEvent;

/// Registered allocation strategies.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Strategy {
    BestFit,
    FirstFit,
    NextFit,
    Bitmask,
    SegFit,
    Tlsf,
    /// The naive reference allocator, running best fit.
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::BestFit,
        Strategy::FirstFit,
        Strategy::NextFit,
        Strategy::Bitmask,
        Strategy::SegFit,
        Strategy::Tlsf,
        Strategy::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::BestFit => "best-fit",
            Strategy::FirstFit => "first-fit",
            Strategy::NextFit => "next-fit",
            Strategy::Bitmask => "bitmask",
            Strategy::SegFit => "seg-fit",
            Strategy::Tlsf => "tlsf",
            Strategy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .iter()
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = Strategy::ALL.iter().map(|v| v.name()).collect();
                format!("unknown strategy {s:?} (expected one of {})", names.join(", "))
            })
    }
}

/// Structure knobs passed through to the strategies that take them.
#[derive(Clone, Copy, Debug)]
pub struct StrategyOptions {
    /// HAL chunk capacity for the sequential fits.
    pub chunk_cap: usize,
    /// Second-level subdivision for tlsf.
    pub sli: u32,
}

impl Default for StrategyOptions {
    fn default() -> Self {
        StrategyOptions {
            chunk_cap: crate::hal::DEFAULT_CHUNK_CAP,
            sli: crate::segfit::DEFAULT_SLI,
        }
    }
}

pub fn build_allocator(
    strategy: Strategy,
    config: HeapConfig,
    opts: StrategyOptions,
) -> Result<Box<dyn Allocator>, ConfigError> {
    let policy = |p| SequentialAllocator::with_chunk_cap(config, p, opts.chunk_cap);
    Ok(match strategy {
        Strategy::BestFit => Box::new(policy(FitPolicy::Best)?),
        Strategy::FirstFit => Box::new(policy(FitPolicy::First)?),
        Strategy::NextFit => Box::new(policy(FitPolicy::Next)?),
        Strategy::Bitmask => Box::new(BitmaskAllocator::new(config)?),
        Strategy::SegFit => Box::new(SegFitAllocator::new_single(config)?),
        Strategy::Tlsf => Box::new(SegFitAllocator::new_tlsf(config, opts.sli)?),
        Strategy::Oracle => Box::new(OracleAllocator::new(config, FitPolicy::Best)?),
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OpKind {
    Alloc,
    Free,
    PartialFree,
}

impl OpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OpKind::Alloc => "alloc",
            OpKind::Free => "free",
            OpKind::PartialFree => "pfree",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PerOp {
    pub op_index: usize,
    pub op: OpKind,
    pub latency_ns: u64,
    pub live_bytes: u64,
    pub reserved_bytes: u64,
}

impl PerOp {
    pub fn fragmentation(&self) -> f64 {
        if self.reserved_bytes == 0 {
            0.0
        } else {
            1.0 - self.live_bytes as f64 / self.reserved_bytes as f64
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub per_op: Vec<PerOp>,
    /// Per-op allocation outcome (`None` for frees): the address sequence
    /// compared by the determinism and oracle-equivalence checks.
    pub addresses: Vec<Option<Address>>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LatencyStats {
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct Summary {
    pub alloc: Option<LatencyStats>,
    pub free: Option<LatencyStats>,
    pub pfree: Option<LatencyStats>,
    /// Mean of `1 - live/reserved` over the final quarter of the run (the
    /// earlier part is warmup: reserved memory is still being provisioned).
    pub steady_state_fragmentation: f64,
}

/// Nearest-rank percentile over a sorted sample.
fn percentile(sorted: &[u64], q: f64) -> u64 {
    debug_assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn latency_stats(mut samples: Vec<u64>) -> Option<LatencyStats> {
    if samples.is_empty() {
        return None;
    }
    samples.sort_unstable();
    Some(LatencyStats {
        p50_ns: percentile(&samples, 0.50),
        p99_ns: percentile(&samples, 0.99),
        max_ns: *samples.last().unwrap(),
        count: samples.len(),
    })
}

impl RunReport {
    pub fn summary(&self) -> Summary {
        let of_kind = |kind: OpKind| {
            latency_stats(
                self.per_op
                    .iter()
                    .filter(|o| o.op == kind)
                    .map(|o| o.latency_ns)
                    .collect(),
            )
        };
        let tail = &self.per_op[self.per_op.len() - self.per_op.len() / 4..];
        let steady = if tail.is_empty() {
            0.0
        } else {
            tail.iter().map(|o| o.fragmentation()).sum::<f64>() / tail.len() as f64
        };
        Summary {
            alloc: of_kind(OpKind::Alloc),
            free: of_kind(OpKind::Free),
            pfree: of_kind(OpKind::PartialFree),
            steady_state_fragmentation: steady,
        }
    }
}

#[derive(Debug)]
pub enum ReplayErrorKind {
    /// The allocator failed; the run stops with a partial report.
    Alloc(AllocError),
    /// The trace itself is malformed (unknown slot, bad partial-free
    /// offset, allocation into an occupied slot).
    InvalidTrace(String),
}

#[derive(Debug)]
pub struct ReplayError {
    pub op_index: usize,
    pub kind: ReplayErrorKind,
    pub partial: RunReport,
}

impl fmt::Display for ReplayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ReplayErrorKind::Alloc(e) => write!(f, "op {}: {e}", self.op_index),
            ReplayErrorKind::InvalidTrace(m) => {
                write!(f, "op {}: invalid trace: {m}", self.op_index)
            }
        }
    }
}

impl Error for ReplayError {}

/// Replays `events` against `alloc`, timing each call with a monotonic
/// clock. Any allocator error aborts the run, carrying the partial report.
pub fn replay(
    events: &[TraceEvent],
    alloc: &mut dyn Allocator,
) -> Result<RunReport, Box<ReplayError>> {
    let granule = alloc.config().min_granule;
    let mut slots: HashMap<u32, (Address, u64)> = HashMap::new();
    let mut live = 0u64;
    let mut report = RunReport::default();

    for (i, &event) in events.iter().enumerate() {
        let mut fail_kind: Option<ReplayErrorKind> = None;
        let mut latency = 0u64;
        let mut kind = OpKind::Alloc;
        match event {
            TraceEvent::Alloc { id, size } => {
                if let std::collections::hash_map::Entry::Vacant(e) = slots.entry(id) {
                    let t = Instant::now();
                    let result = alloc.alloc(size);
                    latency = t.elapsed().as_nanos() as u64;
                    match result {
                        Ok(addr) => {
                            let rounded = size.div_ceil(granule) * granule;
                            e.insert((addr, rounded));
                            live += rounded;
                            report.addresses.push(Some(addr));
                        }
                        Err(e) => fail_kind = Some(ReplayErrorKind::Alloc(e)),
                    }
                } else {
                    fail_kind = Some(ReplayErrorKind::InvalidTrace(format!(
                        "slot {id} allocated while occupied"
                    )));
                }
            }
            TraceEvent::Free { id } => {
                kind = OpKind::Free;
                match slots.remove(&id) {
                    None => {
                        fail_kind = Some(ReplayErrorKind::InvalidTrace(format!(
                            "free of empty slot {id}"
                        )))
                    }
                    Some((addr, size)) => {
                        let t = Instant::now();
                        let result = alloc.free(addr);
                        latency = t.elapsed().as_nanos() as u64;
                        match result {
                            Ok(()) => {
                                live -= size;
                                report.addresses.push(None);
                            }
                            Err(e) => fail_kind = Some(ReplayErrorKind::Alloc(e)),
                        }
                    }
                }
            }
            TraceEvent::PartialFree { id, offset } => {
                kind = OpKind::PartialFree;
                match slots.get_mut(&id) {
                    None => {
                        fail_kind = Some(ReplayErrorKind::InvalidTrace(format!(
                            "partial free of empty slot {id}"
                        )))
                    }
                    Some((addr, size)) if offset == 0 || offset >= *size => {
                        fail_kind = Some(ReplayErrorKind::InvalidTrace(format!(
                            "partial free offset {offset} outside block of {size} bytes at {addr}"
                        )))
                    }
                    Some((addr, size)) => {
                        let t = Instant::now();
                        let result = alloc.free(*addr + offset);
                        latency = t.elapsed().as_nanos() as u64;
                        match result {
                            Ok(()) => {
                                live -= *size - offset;
                                *size = offset;
                                report.addresses.push(None);
                            }
                            Err(e) => fail_kind = Some(ReplayErrorKind::Alloc(e)),
                        }
                    }
                }
            }
        }
        if let Some(kind) = fail_kind {
            return Err(Box::new(ReplayError { op_index: i, kind, partial: report }));
        }
        report.per_op.push(PerOp {
            op_index: i,
            op: kind,
            latency_ns: latency,
            live_bytes: live,
            reserved_bytes: alloc.stats().reserved_bytes,
        });
    }
    Ok(report)
}

/// Writes the per-op table: LF line endings, ASCII decimal.
pub fn emit_csv<W: Write>(report: &RunReport, mut w: W) -> io::Result<()> {
    w.write_all(b"op_index,op,latency_ns,live_bytes,reserved_bytes\n")?;
    for op in &report.per_op {
        writeln!(
            w,
            "{},{},{},{},{}",
            op.op_index,
            op.op.as_str(),
            op.latency_ns,
            op.live_bytes,
            op.reserved_bytes
        )?;
    }
    Ok(())
}

/// Parses [`emit_csv`] output back into per-op records.
pub fn parse_csv<R: BufRead>(r: R) -> Result<Vec<PerOp>, String> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or("empty csv")?;
    let header = header.map_err(|e| e.to_string())?;
    if header != "op_index,op,latency_ns,live_bytes,reserved_bytes" {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| e.to_string())?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(format!("line {}: expected 5 fields", n + 1));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| format!("line {}: {e}", n + 1));
        out.push(PerOp {
            op_index: num(fields[0])? as usize,
            op: match fields[1] {
                "alloc" => OpKind::Alloc,
                "free" => OpKind::Free,
                "pfree" => OpKind::PartialFree,
                other => return Err(format!("line {}: unknown op {other:?}", n + 1)),
            },
            latency_ns: num(fields[2])?,
            live_bytes: num(fields[3])?,
            reserved_bytes: num(fields[4])?,
        });
    }
    Ok(out)
}
