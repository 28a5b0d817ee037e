//! Allocation traces: synthesis, text serialization, parsing.
//!
//! A trace is a flat list of slot-addressed events. The text form is one
//! event per line, LF-terminated and ASCII throughout, so traces diff
//! cleanly and other tooling can produce them:
//!
//! ```text
//! a <id> <size>      allocate into slot id
//! f <id>             free slot id
//! p <id> <offset>    free the tail of slot id from byte offset on
//! ```
//!
//! Synthesis follows the malloc-large pattern: each step picks a uniform
//! slot; an occupied slot is freed and immediately reallocated with a fresh
//! log-uniform size, an empty one just allocated.

use std::error::Error;
use std::fmt;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TraceEvent {
    Alloc { id: u32, size: u64 },
    Free { id: u32 },
    PartialFree { id: u32, offset: u64 },
}

/// Knobs for [`synth_trace`]. Defaults reproduce the benchmark shape:
/// 1 KiB to 16 MiB blocks, 5000 steps over 1000 slots.
#[derive(Clone, Copy, Debug)]
pub struct SynthParams {
    pub seed: u64,
    pub steps: usize,
    pub slots: u32,
    pub min_size: u64,
    pub max_size: u64,
    /// Sizes are rounded up to this granule.
    pub granule: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            steps: 5000,
            slots: 1000,
            min_size: 1 << 10,
            max_size: 16 << 20,
            granule: 8,
        }
    }
}

/// Deterministically generates a trace: same parameters, same events.
pub fn synth_trace(params: &SynthParams) -> Vec<TraceEvent> {
    assert!(params.slots >= 1, "need at least one slot");
    assert!(
        0 < params.min_size && params.min_size <= params.max_size,
        "bad size range"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut occupied = vec![false; params.slots as usize];
    let mut events = Vec::with_capacity(params.steps * 2);
    let ln_min = (params.min_size as f64).ln();
    let ln_max = (params.max_size as f64).ln();
    for _ in 0..params.steps {
        let id = rng.gen_range(0..params.slots);
        let u: f64 = rng.gen();
        let raw = (ln_min + u * (ln_max - ln_min)).exp() as u64;
        let size = raw
            .clamp(params.min_size, params.max_size)
            .div_ceil(params.granule)
            * params.granule;
        if occupied[id as usize] {
            events.push(TraceEvent::Free { id });
        }
        occupied[id as usize] = true;
        events.push(TraceEvent::Alloc { id, size });
    }
    events
}

pub fn write_trace<W: Write>(events: &[TraceEvent], mut w: W) -> io::Result<()> {
    for e in events {
        match e {
            TraceEvent::Alloc { id, size } => writeln!(w, "a {id} {size}")?,
            TraceEvent::Free { id } => writeln!(w, "f {id}")?,
            TraceEvent::PartialFree { id, offset } => writeln!(w, "p {id} {offset}")?,
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for TraceParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trace line {}: {}", self.line, self.message)
    }
}

impl Error for TraceParseError {}

/// Parses the text format. Blank lines and `#` comments are skipped.
pub fn parse_trace<R: BufRead>(r: R) -> Result<Vec<TraceEvent>, TraceParseError> {
    let mut events = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| TraceParseError {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let op = fields.next().unwrap();
        let mut num = |name: &str| -> Result<u64, TraceParseError> {
            fields
                .next()
                .ok_or_else(|| TraceParseError {
                    line: lineno,
                    message: format!("missing {name}"),
                })?
                .parse::<u64>()
                .map_err(|e| TraceParseError {
                    line: lineno,
                    message: format!("bad {name}: {e}"),
                })
        };
        let event = match op {
            "a" => TraceEvent::Alloc {
                id: num("id")? as u32,
                size: num("size")?,
            },
            "f" => TraceEvent::Free { id: num("id")? as u32 },
            "p" => TraceEvent::PartialFree {
                id: num("id")? as u32,
                offset: num("offset")?,
            },
            other => {
                return Err(TraceParseError {
                    line: lineno,
                    message: format!("unknown op {other:?}"),
                })
            }
        };
        if fields.next().is_some() {
            return Err(TraceParseError {
                line: lineno,
                message: "trailing fields".to_string(),
            });
        }
        events.push(event);
    }
    Ok(events)
}
